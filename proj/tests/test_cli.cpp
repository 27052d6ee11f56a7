#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "support.hpp"
#include "unisal/checkpoint.hpp"
#include "unisal/cli.hpp"
#include "unisal/image_io.hpp"

using namespace unisal;
using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = 0;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "unisal");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Image gradient_image(std::size_t h, std::size_t w, double phase) {
  Image im(h, w, 3);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      im.at(r, c, 0) = (r + c) % 7 / 6.0;
      im.at(r, c, 1) = std::fmod(phase + static_cast<double>(c) / w, 1.0);
      im.at(r, c, 2) = static_cast<double>(r) / h;
    }
  return im;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("cli");
    const fs::path d = dir_->path();
    std::ofstream gen(d / "gen.cfg");
    gen << "gen.domains = images, videos\n"
           "gen.val_samples = 2\n"
           "gen.images.modality = static\n"
           "gen.images.height = 24\ngen.images.width = 32\n"
           "gen.images.samples = 4\ngen.images.frames = 1\n"
           "gen.videos.modality = dynamic\ngen.videos.fps = 30\n"
           "gen.videos.height = 24\ngen.videos.width = 32\n"
           "gen.videos.samples = 2\ngen.videos.frames = 20\n"
           "gen.videos.color_weights = 0, 1\n";
    gen.close();
    gen_ = cli({"gen-data", "--config", (d / "gen.cfg").string(), "--out", (d / "data").string()});
    train_ = cli({"train", "--config", (d / "data" / "train.cfg").string(), "--epochs", "1", "--seed", "4", "--set",
                  "train.steps_per_epoch=2", "--set", "train.clip_length=3", "--set", "train.encoder_freeze_epochs=1", "--set", "model.width_multiplier=0.125",
                  "--out", (d / "run").string()});
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }

  static fs::path root() { return dir_->path(); }
  static fs::path checkpoint() { return root() / "run" / "checkpoint.bin"; }

  static TempDir* dir_;
  static CliRun gen_, train_;
};

TempDir* Cli::dir_ = nullptr;
CliRun Cli::gen_;
CliRun Cli::train_;

}  // namespace

TEST_F(Cli, GenDataAndTrain) {
  ASSERT_EQ(gen_.code, 0) << gen_.err;
  EXPECT_TRUE(fs::exists(root() / "data" / "images" / "train" / "manifest.txt"));
  EXPECT_TRUE(fs::exists(root() / "data" / "videos" / "val" / "manifest.txt"));
  ASSERT_EQ(train_.code, 0) << train_.err;
  EXPECT_TRUE(fs::exists(checkpoint()));
  const KeyValues eff = KeyValues::load(root() / "run" / "effective.cfg");
  EXPECT_EQ(eff.get("train.total_epochs", ""), "1");
  EXPECT_EQ(eff.get("train.seed", ""), "4");
  EXPECT_NE(slurp(root() / "run" / "report.txt").find("kind=summary"), std::string::npos);
  EXPECT_NE(train_.out.find("epoch 0"), std::string::npos);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  EXPECT_EQ(cli({"train", "--epochs", "many"}).code, 2);
  EXPECT_EQ(cli({"--help"}).code, 0);
  const auto missing = cli({"train", "--set", "data.domains=x", "--set", "data.x.root=/nonexistent/unisal_root"});
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.err.find("/nonexistent/unisal_root"), std::string::npos) << missing.err;
  const auto bad_key = cli({"report", "--set", "model.widht=3"});
  EXPECT_EQ(bad_key.code, 2);
  EXPECT_NE(bad_key.err.find("model.widht"), std::string::npos);
  EXPECT_EQ(cli({"train", "--config", (root() / "absent.cfg").string()}).code, 2);
}

TEST_F(Cli, EvalMetrics) {
  ASSERT_EQ(train_.code, 0);
  const auto ok = cli({"eval", checkpoint().string(), (root() / "data" / "videos" / "val").string(), "--metrics",
                       "cc,kld", "--out", (root() / "eval").string()});
  ASSERT_EQ(ok.code, 0) << ok.err;
  EXPECT_NE(ok.out.find("cc"), std::string::npos);
  EXPECT_NE(ok.out.find("kld"), std::string::npos);
  EXPECT_EQ(slurp(root() / "eval" / "eval_videos.txt"), ok.out);

  const auto bad = cli({"eval", checkpoint().string(), (root() / "data" / "videos" / "val").string(), "--metrics",
                        "cc,sharpest"});
  EXPECT_EQ(bad.code, 2);
  for (const char* name : {"auc_j", "s_auc", "sim", "cc", "nss", "kld", "ig"})
    EXPECT_NE(bad.err.find(name), std::string::npos) << name;
}

TEST_F(Cli, RuntimeFailureExitsOne) {
  std::ofstream(root() / "junk.bin") << "not a checkpoint";
  const auto r = cli({"eval", (root() / "junk.bin").string(), (root() / "data" / "images" / "val").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("checkpoint"), std::string::npos);
}

TEST_F(Cli, ThreadCountVariable) {
  ASSERT_EQ(train_.code, 0);
  ::setenv("UNISAL_NUM_THREADS", "lots", 1);
  const auto bad = cli({"report"});
  ::setenv("UNISAL_NUM_THREADS", "0", 1);
  const auto zero = cli({"report"});
  ::setenv("UNISAL_NUM_THREADS", "2", 1);
  const auto two = cli({"inspect-bias", checkpoint().string(), "--out", (root() / "bias2").string()});
  ::unsetenv("UNISAL_NUM_THREADS");
  const auto one = cli({"inspect-bias", checkpoint().string(), "--out", (root() / "bias1").string()});
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("UNISAL_NUM_THREADS"), std::string::npos);
  EXPECT_EQ(zero.code, 2);
  EXPECT_EQ(two.code, 0) << two.err;
  EXPECT_EQ(slurp(root() / "bias2" / "bias_images.png"), slurp(root() / "bias1" / "bias_images.png"));
}

TEST_F(Cli, PredictStillImage) {
  ASSERT_EQ(train_.code, 0);
  write_image(root() / "still.png", gradient_image(40, 50, 0.0));
  const auto r = cli({"predict", checkpoint().string(), (root() / "still.png").string(), "--domain", "images",
                      "--out", (root() / "pred").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const SaliencyMap m = read_heatmap(root() / "pred" / "still.png");
  EXPECT_EQ(m.height, 24u);
  EXPECT_EQ(m.width, 32u);
  EXPECT_NEAR(std::accumulate(m.values.begin(), m.values.end(), 0.0), 1.0, 1e-4);
  const RawImage raw = read_raw_image(root() / "pred" / "still.png");
  EXPECT_EQ(raw.max_value, 65535u);
  EXPECT_EQ(*std::max_element(raw.samples.begin(), raw.samples.end()), 65535);
  EXPECT_TRUE(fs::exists(root() / "pred" / "still.scale.txt"));

  EXPECT_EQ(cli({"predict", checkpoint().string(), (root() / "still.png").string()}).code, 2);
  const auto unknown = cli({"predict", checkpoint().string(), (root() / "still.png").string(), "--domain", "sketch"});
  EXPECT_EQ(unknown.code, 2);
  EXPECT_NE(unknown.err.find("images"), std::string::npos);
}

TEST_F(Cli, PredictClipKeepsFrameOrder) {
  ASSERT_EQ(train_.code, 0);
  const fs::path frames = root() / "clip";
  fs::create_directories(frames);
  std::vector<Image> images;
  for (std::size_t t = 0; t < 24; ++t) {
    images.push_back(gradient_image(24, 32, 0.04 * static_cast<double>(t)));
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03zu.png", t);
    write_image(frames / name, images.back(), 16);
  }
  const auto r = cli({"predict", checkpoint().string(), frames.string(), "--domain", "videos", "--out",
                      (root() / "clip_pred").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(root() / "clip_pred"))
    if (e.path().extension() == ".png") ++n;
  EXPECT_EQ(n, 24u);

  // Same clip run in-process, frames in name order with one recurrent state.
  const UnisalModel model = load_checkpoint(checkpoint());
  const DomainId& d = model.registry().at(1);
  std::vector<double> values;
  for (std::size_t t = 0; t < 24; ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03zu.png", t);
    const auto p = model_input(read_image(frames / name));
    values.insert(values.end(), p.begin(), p.end());
  }
  BypassCGRUState state;
  const auto out = model.forward(Tensor::from({24, 1, 3, 24, 32}, values), d, {}, state);
  for (std::size_t t = 0; t < 24; ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03zu.png", t);
    const SaliencyMap m = read_heatmap(root() / "clip_pred" / name);
    const auto expect = out.frame(t, 0);
    const double peak = *std::max_element(expect.begin(), expect.end());
    for (std::size_t i = 0; i < expect.size(); ++i) ASSERT_NEAR(m.values[i], expect[i], peak / 65535.0) << t;
  }
}

TEST_F(Cli, InspectBias) {
  ASSERT_EQ(train_.code, 0);
  const auto r = cli({"inspect-bias", checkpoint().string(), "--out", (root() / "bias").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* d : {"images", "videos"}) {
    EXPECT_NE(r.out.find(std::string("domain ") + d), std::string::npos);
    const SaliencyMap m = read_heatmap(root() / "bias" / (std::string("bias_") + d + ".png"));
    for (double v : m.values) ASSERT_TRUE(std::isfinite(v));
  }
  EXPECT_EQ(r.out.find("nan"), std::string::npos);
}

TEST_F(Cli, CrossDomainSharedPrivateSetIsIdentical) {
  ASSERT_EQ(train_.code, 0);
  write_image(root() / "probe.png", gradient_image(24, 32, 0.3));
  const auto plain = cli({"cross-domain", checkpoint().string(), (root() / "probe.png").string(), "--out",
                          (root() / "cross").string()});
  ASSERT_EQ(plain.code, 0) << plain.err;
  EXPECT_NE(slurp(root() / "cross" / "probe_images.png"), slurp(root() / "cross" / "probe_videos.png"));
  const auto shared = cli({"cross-domain", checkpoint().string(), (root() / "probe.png").string(), "--share-private",
                           "images", "--out", (root() / "cross_shared").string()});
  ASSERT_EQ(shared.code, 0) << shared.err;
  EXPECT_EQ(slurp(root() / "cross_shared" / "probe_images.png"), slurp(root() / "cross_shared" / "probe_videos.png"));
  EXPECT_EQ(slurp(root() / "cross_shared" / "probe_images.png"), slurp(root() / "cross" / "probe_images.png"));
}

TEST_F(Cli, VerifyAndReport) {
  const auto v = cli({"verify", "--suite", "metrics-oracle"});
  EXPECT_EQ(v.code, 0) << v.out;
  EXPECT_NE(v.out.find("PASS "), std::string::npos);
  EXPECT_EQ(v.out.find("FAIL "), std::string::npos);
  const auto bad = cli({"verify", "--suite", "everything"});
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("gradcheck"), std::string::npos);

  const auto full = cli({"report", "--set", "model.preset=full"});
  ASSERT_EQ(full.code, 0) << full.err;
  EXPECT_NE(full.out.find("Post-CNN"), std::string::npos);
  EXPECT_EQ(full.out, cli({"report", "--set", "model.preset=full"}).out);
  ASSERT_EQ(train_.code, 0);
  const auto from_ckpt = cli({"report", checkpoint().string()});
  ASSERT_EQ(from_ckpt.code, 0);
  EXPECT_EQ(from_ckpt.out, slurp(root() / "run" / "build_report.txt") + "\n" + slurp(root() / "run" / "params.txt"));
}

TEST(Heatmap, RoundTripAndCenterOfMass) {
  TempDir dir("heat");
  SaliencyMap m(4, 6, 0.0);
  m(1, 2) = 0.75;
  m(3, 5) = 0.25;
  write_heatmap(dir.path() / "h.png", m);
  const SaliencyMap back = read_heatmap(dir.path() / "h.png");
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_NEAR(back.values[i], m.values[i], 0.75 / 65535.0);
  const auto [r, c] = center_of_mass(m);
  EXPECT_NEAR(r, (0.75 * 1.5 + 0.25 * 3.5) / 4.0, 1e-15);
  EXPECT_NEAR(c, (0.75 * 2.5 + 0.25 * 5.5) / 6.0, 1e-15);
}

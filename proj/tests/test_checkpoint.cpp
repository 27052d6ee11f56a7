#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include "support.hpp"
#include "unisal/checkpoint.hpp"
#include "unisal/errors.hpp"

using namespace unisal;
using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

std::vector<unsigned char> bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

// Little-endian field reader, written against the documented layout.
struct Reader {
  const std::vector<unsigned char>& b;
  std::size_t at = 0;
  std::uint64_t uint(std::size_t width) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(b.at(at + i)) << (8 * i);
    at += width;
    return v;
  }
  std::string text(std::size_t n) {
    std::string s(b.begin() + static_cast<std::ptrdiff_t>(at), b.begin() + static_cast<std::ptrdiff_t>(at + n));
    at += n;
    return s;
  }
  double real() {
    const std::uint64_t u = uint(8);
    double d;
    std::memcpy(&d, &u, 8);
    return d;
  }
};

ModelConfig small_config() {
  ModelConfig c = ModelConfig::desk();
  c.width_multiplier = 0.125;
  return c;
}

// Perturb every tensor so a load that silently skipped one would show.
void scramble(UnisalModel& m, std::uint64_t seed) {
  CounterRng rng(seed, 9);
  for (auto& e : m.store().entries())
    for (double& v : e.value.mutable_data()) v += rng.uniform() - 0.5;
}

std::vector<std::vector<double>> all_values(const UnisalModel& m) {
  std::vector<std::vector<double>> out;
  for (const auto& e : m.store().entries()) out.emplace_back(e.value.data().begin(), e.value.data().end());
  return out;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitIdentical) {
  TempDir dir("ckpt");
  auto reg = testing_support::four_domains();
  UnisalModel model = UnisalModel::build(small_config(), reg, 1);
  scramble(model, 2);
  const fs::path path = dir.path() / "m.ckpt";
  save_checkpoint(model, path);

  UnisalModel loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.config(), model.config());
  ASSERT_EQ(loaded.registry().size(), reg->size());
  for (std::size_t i = 0; i < reg->size(); ++i) {
    EXPECT_EQ(loaded.registry().at(i).name, reg->at(i).name);
    EXPECT_EQ(loaded.registry().at(i).modality, reg->at(i).modality);
    EXPECT_EQ(loaded.registry().at(i).native_fps, reg->at(i).native_fps);
  }
  EXPECT_EQ(all_values(loaded), all_values(model));
  EXPECT_EQ(param_report(loaded).to_text(), param_report(model).to_text());
  EXPECT_EQ(loaded.build_report().to_text(), model.build_report().to_text());

  const fs::path again = dir.path() / "again.ckpt";
  save_checkpoint(loaded, again);
  EXPECT_EQ(bytes(again), bytes(path));

  const Tensor x = testing_support::random_tensor({2, 1, 3, 24, 32}, 5, false, 0.0, 1.0);
  for (std::size_t d : {0u, 2u}) {
    const Tensor in = d == 0 ? slice_batch(reshape(x, {1, 2, 3, 24, 32}), 0, 1) : x;
    BypassCGRUState s1, s2;
    const auto a = model.forward(in, reg->at(d), {}, s1);
    const auto b = loaded.forward(in, loaded.registry().at(d), {}, s2);
    EXPECT_TRUE(std::equal(a.maps.data().begin(), a.maps.data().end(), b.maps.data().begin()));
  }
}

TEST(Checkpoint, FileLayout) {
  TempDir dir("ckpt");
  UnisalModel model = UnisalModel::build(small_config(), testing_support::four_domains(), 3);
  const fs::path path = dir.path() / "m.ckpt";
  save_checkpoint(model, path);
  const auto b = bytes(path);
  Reader r{b};
  EXPECT_EQ(r.text(8), "UNISALCK");
  EXPECT_EQ(r.uint(4), 1u);
  const std::string manifest = r.text(r.uint(8));
  EXPECT_EQ(KeyValues::parse(manifest, "m").serialize(), checkpoint_manifest(model).serialize());
  EXPECT_EQ(read_checkpoint_manifest(path).serialize(), checkpoint_manifest(model).serialize());
  const auto& entries = model.store().entries();
  ASSERT_EQ(r.uint(8), entries.size());
  for (const auto& e : entries) {
    EXPECT_EQ(r.text(r.uint(4)), e.name);
    EXPECT_EQ(static_cast<std::int32_t>(r.uint(4)), e.domain);
    EXPECT_EQ(r.uint(1), e.role == ParamRole::Parameter ? 0u : 1u);
    const std::size_t rank = r.uint(4);
    ASSERT_EQ(rank, e.value.shape().size());
    for (std::size_t d = 0; d < rank; ++d) EXPECT_EQ(r.uint(8), e.value.shape()[d]);
    ASSERT_EQ(r.uint(8), e.value.numel());
    for (double v : e.value.data()) ASSERT_EQ(r.real(), v);
  }
  EXPECT_EQ(r.at, b.size());
}

TEST(Checkpoint, MismatchedConfigurationNamesBlobAndLeavesModel) {
  TempDir dir("ckpt");
  auto reg = testing_support::four_domains();
  UnisalModel model = UnisalModel::build(small_config(), reg, 1);
  const fs::path path = dir.path() / "m.ckpt";
  save_checkpoint(model, path);

  ModelConfig wider = small_config();
  wider.width_multiplier = 0.25;
  UnisalModel other = UnisalModel::build(wider, reg, 1);
  const auto before = all_values(other);
  // The first blob in file order whose shape differs.
  std::string first;
  for (std::size_t i = 0; i < model.store().entries().size(); ++i) {
    const auto& a = model.store().entries()[i];
    const auto* b = other.store().find(a.name, a.domain);
    if (!b || b->value.shape() != a.value.shape()) {
      first = a.name;
      break;
    }
  }
  ASSERT_FALSE(first.empty());
  try {
    load_parameters(other, path);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("'" + first + "'"), std::string::npos) << e.what();
  }
  EXPECT_EQ(all_values(other), before);

  // Fewer domains in the file: the model's extra private blobs are missing.
  auto two = std::make_shared<DomainRegistry>();
  for (std::size_t i = 0; i < 2; ++i) {
    const auto& d = reg->at(i);
    two->add(d.name, d.modality, d.native_fps, d.input_resolution);
  }
  UnisalModel small = UnisalModel::build(small_config(), two, 1);
  const fs::path small_path = dir.path() / "two.ckpt";
  save_checkpoint(small, small_path);
  UnisalModel target = UnisalModel::build(small_config(), reg, 1);
  EXPECT_THROW(load_parameters(target, small_path), LoadError);
  // More domains in the file: an extra blob.
  EXPECT_THROW(load_parameters(small, path), LoadError);
}

TEST(Checkpoint, CorruptFilesAreLoadErrors) {
  TempDir dir("ckpt");
  UnisalModel model = UnisalModel::build(small_config(), testing_support::four_domains(), 1);
  const fs::path path = dir.path() / "m.ckpt";
  save_checkpoint(model, path);
  const auto good = bytes(path);

  EXPECT_THROW(load_checkpoint(dir.path() / "absent.ckpt"), LoadError);

  auto bad = good;
  bad[0] = 'X';
  write_bytes(dir.path() / "magic.ckpt", bad);
  EXPECT_THROW(load_checkpoint(dir.path() / "magic.ckpt"), LoadError);

  bad = good;
  bad[8] = 2;
  write_bytes(dir.path() / "version.ckpt", bad);
  try {
    load_checkpoint(dir.path() / "version.ckpt");
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
  }

  bad.assign(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(good.size() - 5));
  write_bytes(dir.path() / "short.ckpt", bad);
  EXPECT_THROW(load_checkpoint(dir.path() / "short.ckpt"), LoadError);
}

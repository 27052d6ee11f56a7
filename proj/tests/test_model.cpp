#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "support.hpp"
#include "unisal/errors.hpp"
#include "unisal/model.hpp"

using namespace unisal;
using testing_support::four_domains;
using testing_support::random_tensor;

namespace {

struct Counts {
  std::size_t shared = 0;
  std::size_t per_domain = 0;
};

// Closed-form parameter count of the architecture described by `c`.
Counts count_oracle(const ModelConfig& c) {
  auto w = [&](std::size_t ch) { return std::max<std::size_t>(1, std::lround(ch * c.width_multiplier)); };
  Counts k;
  // Encoder: convolutions without bias, shared normalization (gamma, beta).
  std::size_t width = w(c.stem_channels);
  k.shared += 3 * width * 9 + 2 * width;
  for (const auto& s : c.encoder_stages)
    for (std::size_t r = 0; r < s.repeats; ++r) {
      const std::size_t hidden = width * s.expansion, out = w(s.channels);
      if (s.expansion != 1) k.shared += width * hidden + 2 * hidden;
      k.shared += hidden * 9 + 2 * hidden + hidden * out + 2 * out;
      width = out;
    }
  const std::size_t enc = w(c.encoder_out_channels);
  k.shared += width * enc + 2 * enc;

  // Decoder blocks: shared convolution weights, per-domain normalization.
  auto pw = [&](std::size_t in, std::size_t out) { k.shared += in * out, k.per_domain += 2 * out; };
  auto dw = [&](std::size_t ch) { k.shared += 9 * ch, k.per_domain += 2 * ch; };
  const std::size_t post_in = enc + c.n_prior_maps, rnn = w(c.rnn_channels);
  k.per_domain += 4 * c.n_prior_maps;
  dw(post_in);
  pw(post_in, rnn);
  const std::size_t joint = 2 * rnn;
  k.shared += 2 * joint * 9 + 3 * (joint * rnn + rnn) + rnn * rnn + rnn;
  pw(w(c.skip2x_tap.channels), w(c.skip2x_hidden));
  pw(w(c.skip2x_hidden), w(c.skip2x_out));
  pw(w(c.skip4x_tap.channels), w(c.skip4x_hidden));
  pw(w(c.skip4x_hidden), w(c.skip4x_out));
  pw(rnn + w(c.skip2x_out), w(c.us2_hidden));
  dw(w(c.us2_hidden));
  pw(w(c.us2_hidden), w(c.us2_out));
  pw(w(c.us2_out) + w(c.skip4x_out), w(c.post_us2_hidden));
  dw(w(c.post_us2_hidden));
  pw(w(c.post_us2_hidden), w(c.post_us2_out));
  k.per_domain += w(c.post_us2_out) + 1;
  k.per_domain += c.smoothing_kernel * c.smoothing_kernel;
  return k;
}

ModelConfig small_config() {
  ModelConfig c = ModelConfig::desk();
  c.width_multiplier = 0.125;
  c.smoothing_kernel = 9;
  c.smoothing_sigma = 1.5;
  return c;
}

bool same(const Tensor& a, const Tensor& b) {
  return a.numel() == b.numel() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

void perturb(const std::vector<Tensor>& params, double scale) {
  for (Tensor p : params)
    for (double& v : p.mutable_data()) v += scale * (0.5 - std::fmod(std::abs(v) * 7.3 + 0.1, 1.0));
}

}  // namespace

TEST(Build, FullConfigReproducesReferenceWidths) {
  auto reg = four_domains({288, 384});
  auto m = UnisalModel::build(ModelConfig::full(), reg, 0);
  const auto& r = m.build_report();
  using V = std::vector<std::string>;
  EXPECT_EQ(r.at("Skip-4x").operations, (V{"ConvPW(64, 128)", "DO(0.6)", "ConvPW(128, 64)"}));
  EXPECT_EQ(r.at("Skip-2x").operations, (V{"ConvPW(160, 256)", "DO(0.6)", "ConvPW(256, 128)"}));
  EXPECT_EQ(r.at("US2").operations, (V{"ConvPW(384, 768)", "ConvDW(768)", "ConvPW(768, 128)", "Up(128, 2)"}));
  EXPECT_EQ(r.at("Fusion").operations, (V{"ConvPW(64, 1)"}));
  EXPECT_EQ(r.at("Post-CNN").nominal, (V{"ConvDW(1280)", "ConvPW(1280, 256)"}));
  EXPECT_EQ(r.at("Post-CNN").operations, (V{"ConvDW(1296)", "ConvPW(1296, 256)"}));
  EXPECT_NE(r.at("Post-CNN").note.find("16 prior maps"), std::string::npos);
  EXPECT_EQ(r.at("Post-US2").nominal.front(), "ConvPW(200, 400)");
  EXPECT_EQ(r.at("Post-US2").operations.front(), "ConvPW(192, 400)");
  EXPECT_NE(r.at("Post-US2").note.find("declared 200"), std::string::npos);
  EXPECT_EQ(param_report(m).at("fusion").domain_private, 65u * reg->size());
}

TEST(Build, DeskConfigValidates) {
  EXPECT_NO_THROW(UnisalModel::build(ModelConfig::desk(), four_domains(), 0));
  EXPECT_NO_THROW(UnisalModel::build(small_config(), four_domains(), 0));
}

TEST(Build, InconsistentWidthNamesJunction) {
  ModelConfig c = small_config();
  c.skip2x_tap.channels = 96;
  try {
    UnisalModel::build(c, four_domains(), 0);
    FAIL() << "expected BuildError";
  } catch (const BuildError& e) {
    EXPECT_NE(std::string(e.what()).find("Skip-2x"), std::string::npos);
  }
}

TEST(ParamReport, MatchesCountingOracle) {
  auto reg = four_domains();
  for (const ModelConfig& c : {ModelConfig::full(), ModelConfig::desk(), small_config()}) {
    auto m = UnisalModel::build(c, reg, 0);
    const auto r = param_report(m);
    const auto k = count_oracle(c);
    EXPECT_EQ(r.shared, k.shared);
    EXPECT_EQ(r.domain_private, k.per_domain * reg->size());
    EXPECT_EQ(r.total, k.shared + k.per_domain * reg->size());
    EXPECT_EQ(r.bytes_fp32, 4 * r.total);
    std::size_t sum = 0;
    for (const auto& mod : r.modules) sum += mod.shared + mod.domain_private;
    EXPECT_EQ(sum, r.total);
  }
}

TEST(ParamReport, DoublingPriorMaps) {
  auto reg = four_domains();
  ModelConfig a = small_config(), b = small_config();
  b.n_prior_maps = 2 * a.n_prior_maps;
  const auto ra = param_report(UnisalModel::build(a, reg, 0));
  const auto rb = param_report(UnisalModel::build(b, reg, 0));
  const std::size_t dn = a.n_prior_maps, rnn = a.scaled(a.rnn_channels);
  const std::size_t post_cnn_delta = 9 * dn + dn * rnn + 2 * dn * reg->size();
  EXPECT_EQ(rb.total - ra.total, 4 * dn * reg->size() + post_cnn_delta);
  EXPECT_EQ(rb.at("priors").domain_private - ra.at("priors").domain_private, 4 * dn * reg->size());
}

TEST(ParamReport, NonAdaptiveSharesEverything) {
  ModelConfig c = small_config();
  c.domain_adaptive = false;
  const auto r = param_report(UnisalModel::build(c, four_domains(), 0));
  const auto k = count_oracle(c);
  EXPECT_EQ(r.domain_private, 0u);
  EXPECT_EQ(r.shared, k.shared + k.per_domain);
}

TEST(Model, PrivateSetsPartitionTheParameters) {
  auto reg = four_domains();
  auto m = UnisalModel::build(small_config(), reg, 0);
  std::set<const void*> seen;
  std::size_t count = 0;
  auto take = [&](const std::vector<Tensor>& ts) {
    for (const auto& t : ts) {
      EXPECT_TRUE(seen.insert(t.id()).second) << "tensor in two sets";
      ++count;
    }
  };
  take(m.shared_parameters());
  for (const auto& d : reg->domains()) take(m.private_parameters(d));
  std::size_t all = 0;
  for (const auto& e : m.store().entries()) all += e.role == ParamRole::Parameter;
  EXPECT_EQ(count, all);
}

TEST(Model, OutputsAreDistributionsOnEveryDomain) {
  auto reg = four_domains();
  auto m = UnisalModel::build(small_config(), reg, 0);
  for (const auto& d : reg->domains()) {
    const std::size_t t = d.is_static() ? 1 : 3;
    for (bool training : {false, true}) {
      BypassCGRUState state;
      auto out = m.forward(random_tensor({t, 2, 3, 24, 32}, 5 + d.index, false, 0, 1), d,
                           ForwardContext{training, 1, 0}, state);
      ASSERT_EQ(out.maps.shape(), (Shape{t, 2, 1, 24, 32}));
      for (std::size_t f = 0; f < t; ++f)
        for (std::size_t n = 0; n < 2; ++n) {
          const auto v = out.frame(f, n);
          double s = 0;
          for (double x : v) {
            EXPECT_GE(x, 0.0);
            s += x;
          }
          EXPECT_NEAR(s, 1.0, 1e-6);
        }
    }
  }
}

TEST(Model, AllZeroInputGivesFiniteBiasMap) {
  auto reg = four_domains();
  auto m = UnisalModel::build(small_config(), reg, 3);
  auto out = m.forward_image(Tensor::zeros({1, 3, 24, 32}), reg->at(0), {});
  double s = 0;
  for (double v : out.maps.data()) {
    EXPECT_TRUE(std::isfinite(v));
    s += v;
  }
  EXPECT_NEAR(s, 1.0, 1e-6);
}

TEST(Model, EqualPrivateSetsGiveIdenticalOutputs) {
  auto reg = four_domains();
  auto m = UnisalModel::build(small_config(), reg, 0);
  auto x = random_tensor({2, 3, 24, 32}, 8, false, 0, 1);
  perturb(m.private_parameters(reg->at(1)), 0.2);
  auto a = m.forward_image(x, reg->at(0), {});
  auto b = m.forward_image(x, reg->at(1), {});
  EXPECT_FALSE(same(a.maps, b.maps));
  m.copy_private_set(reg->at(0), reg->at(1));
  b = m.forward_image(x, reg->at(1), {});
  EXPECT_TRUE(same(a.maps, b.maps));
}

TEST(Model, SingleFrameClipWithZeroResidualMatchesImage) {
  auto reg = four_domains();
  auto m = UnisalModel::build(small_config(), reg, 0);
  for (Tensor p : {m.rnn().projection().weight(), m.rnn().projection().bias()})
    std::fill(p.mutable_data().begin(), p.mutable_data().end(), 0.0);
  auto x = random_tensor({1, 2, 3, 24, 32}, 9, false, 0, 1);
  auto clip = m.forward_clip(x, reg->at(2), {});
  auto image = m.forward_image(reshape(x, {2, 3, 24, 32}), reg->at(0), {});
  EXPECT_TRUE(same(clip.maps, image.maps));
}

TEST(Model, FrameOrderMattersForVideo) {
  auto reg = four_domains();
  auto m = UnisalModel::build(small_config(), reg, 0);
  perturb(m.rnn().parameters(), 0.5);
  // A bright square moving right across a dark frame.
  std::vector<Tensor> frames;
  for (std::size_t t = 0; t < 3; ++t) {
    auto f = Tensor::zeros({1, 1, 3, 24, 32});
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t r = 8; r < 16; ++r)
        for (std::size_t col = 4 + 8 * t; col < 12 + 8 * t; ++col) f.mutable_data()[(c * 24 + r) * 32 + col] = 1.0;
    frames.push_back(f);
  }
  auto fwd = m.forward_clip(concat_batch({frames[0], frames[1], frames[2]}), reg->at(2), {});
  auto rev = m.forward_clip(concat_batch({frames[2], frames[1], frames[0]}), reg->at(2), {});
  // Frame 0 seen first versus last.
  const auto a = fwd.frame(0, 0), b = rev.frame(2, 0);
  double diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] - b[i]) * (a[i] - b[i]);
  EXPECT_GT(std::sqrt(diff), 0.0);
}

TEST(Model, StaticForwardBypassesRecurrence) {
  auto reg = four_domains();
  auto m = UnisalModel::build(small_config(), reg, 0);
  for (const auto& p : m.rnn().parameters()) Tensor(p).zero_grad();
  BypassCGRUState state;
  ForwardTrace trace;
  auto out = m.forward(random_tensor({1, 2, 3, 24, 32}, 10, false, 0, 1), reg->at(1), ForwardContext{true, 1, 0},
                       state, &trace);
  EXPECT_EQ(trace.rnn_input.id(), trace.rnn_output.id());
  EXPECT_EQ(state.steps, 0u);
  backward(weighted_sum(out.maps, random_tensor(out.maps.shape(), 11)));
  for (const auto& p : m.rnn().parameters()) EXPECT_FALSE(p.has_grad());
}

TEST(Model, StillInputUnderVideoDomainBypasses) {
  auto reg = four_domains();
  auto m = UnisalModel::build(small_config(), reg, 0);
  BypassCGRUState state;
  ForwardTrace trace;
  ForwardContext ctx;
  ctx.static_input = true;
  m.forward(random_tensor({1, 1, 3, 24, 32}, 12, false, 0, 1), reg->at(3), ctx, state, &trace);
  EXPECT_EQ(trace.rnn_input.id(), trace.rnn_output.id());
}

TEST(Model, DeterministicForward) {
  auto reg = four_domains();
  auto m1 = UnisalModel::build(small_config(), reg, 4);
  auto m2 = UnisalModel::build(small_config(), reg, 4);
  auto x = random_tensor({2, 1, 3, 24, 32}, 13, false, 0, 1);
  ForwardContext ctx{true, 5, 2};
  BypassCGRUState s1, s2;
  EXPECT_TRUE(same(m1.forward(x, reg->at(2), ctx, s1).maps, m2.forward(x, reg->at(2), ctx, s2).maps));
}

TEST(Model, ContractErrors) {
  auto reg = four_domains();
  auto m = UnisalModel::build(small_config(), reg, 0);
  EXPECT_THROW(m.forward_image(Tensor::zeros({1, 3, 20, 32}), reg->at(0), {}), ContractError);
  EXPECT_THROW(m.forward_clip(Tensor::zeros({2, 1, 3, 24, 32}), reg->at(0), {}), ContractError);
  EXPECT_THROW(m.forward_image(Tensor::zeros({1, 3, 24, 32}), reg->at(2), {}), ContractError);
}

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "support.hpp"
#include "unisal/domain_adaptive.hpp"
#include "unisal/errors.hpp"
#include "unisal/grad_check.hpp"

using namespace unisal;
using testing_support::four_domains;
using testing_support::random_tensor;

namespace {

double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

void fill(const Tensor& t, double v) {
  Tensor copy = t;
  std::fill(copy.mutable_data().begin(), copy.mutable_data().end(), v);
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST(Dabn, OnlyTheActiveDomainStatisticsMove) {
  auto reg = four_domains();
  ParameterStore store;
  BatchNorm bn(store, "bn", 1, DomainScope(reg, true), false, 0.1);
  auto x = Tensor::from({2, 1, 1, 1}, {1.0, 3.0});
  dabn_forward(bn, x, reg->at(0), true);
  EXPECT_NEAR(bn.running_mean(0).data()[0], 0.2, 1e-15);
  EXPECT_EQ(bn.running_mean(1).data()[0], 0.0);
  EXPECT_EQ(bn.running_var(1).data()[0], 1.0);
}

TEST(Dabn, MomentumOneCopiesBatchStatistics) {
  auto reg = four_domains();
  ParameterStore store;
  BatchNorm bn(store, "bn", 2, DomainScope(reg, true), false, 1.0);
  auto x = random_tensor({3, 2, 2, 2}, 5, false, 0.0, 4.0);
  dabn_forward(bn, x, reg->at(2), true);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, m2 = 0;
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t i = 0; i < 4; ++i) {
        const double v = x.data()[(n * 2 + c) * 4 + i];
        m += v, m2 += v * v;
      }
    m /= 12, m2 = m2 / 12 - m * m;
    EXPECT_NEAR(bn.running_mean(2).data()[c], m, 1e-6);
    EXPECT_NEAR(bn.running_var(2).data()[c], m2, 1e-6);
  }
}

TEST(Dabn, DifferentBetaGivesDifferentOutputs) {
  auto reg = four_domains();
  ParameterStore store;
  BatchNorm bn(store, "bn", 1, DomainScope(reg, true), false, 0.1);
  fill(bn.beta(1), 0.5);
  auto x = random_tensor({2, 1, 2, 2}, 6);
  auto a = dabn_forward(bn, x, reg->at(0), true);
  auto b = dabn_forward(bn, x, reg->at(1), true);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(b.data()[i] - a.data()[i], 0.5, 1e-12);
}

TEST(Dabn, UnregisteredDomainIsRegistryError) {
  auto reg = four_domains();
  ParameterStore store;
  BatchNorm bn(store, "bn", 1, DomainScope(reg, true), false, 0.1);
  DomainId stranger{9, "stranger", Modality::Static, 0, {24, 32}};
  EXPECT_THROW(dabn_forward(bn, Tensor::zeros({1, 1, 1, 1}), stranger, true), RegistryError);
}

TEST(Priors, ExactAtMeanAndOneSigma) {
  // sigma_x = 1/8 on an 8-wide grid puts a pixel center exactly one sigma from the mean.
  auto mu = Tensor::from({1, 2}, {0.5625, 0.4375});
  auto ls = Tensor::from({1, 2}, {std::log(0.125), std::log(0.3)});
  auto g = render_priors(mu, ls, 8, 8);
  // x = (j + 0.5) / 8: j = 4 -> 0.5625, j = 5 -> 0.6875; y: i = 3 -> 0.4375
  EXPECT_EQ(g.at({0, 0, 3, 4}), 6.0);
  EXPECT_NEAR(g.at({0, 0, 3, 5}), 6.0 * std::exp(-1.0), 1e-12);
  const double max = *std::max_element(g.data().begin(), g.data().end());
  EXPECT_LE(max, kPriorScale);
}

TEST(Priors, ZeroLogSigmaIsUnitSigma) {
  auto mu = Tensor::from({1, 2}, {0.0, 0.0});
  auto g = render_priors(mu, Tensor::zeros({1, 2}), 1, 2);
  // x = 0.75 for the second pixel, y = 0.5: 6 exp(-(0.75^2 + 0.5^2) / 1)
  EXPECT_NEAR(g.at({0, 0, 0, 1}), 6.0 * std::exp(-(0.5625 + 0.25)), 1e-15);
}

TEST(Priors, FinitePositiveForExtremeLogSigma) {
  auto mu = Tensor::from({3, 2}, {0.5, 0.5, 0.1, 0.9, 0.3, 0.3});
  auto ls = Tensor::from({3, 2}, {-2.0, -2.0, 5.0, 5.0, 0.0, -1.0});
  auto g = render_priors(mu, ls, 16, 16);
  for (double v : g.data()) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GT(v, 0.0);
  }
}

TEST(Priors, InitializationLayoutAndDistinctness) {
  auto p = init_priors(16, 0);
  ASSERT_EQ(p.size(), 16u);
  EXPECT_EQ(p[0].mu_x, 0.5);
  EXPECT_EQ(p[0].mu_y, 0.5);
  std::vector<double> mu, ls;
  for (const auto& q : p) mu.insert(mu.end(), {q.mu_x, q.mu_y}), ls.insert(ls.end(), {q.log_sigma_x, q.log_sigma_y});
  auto g = render_priors(Tensor::from({16, 2}, mu), Tensor::from({16, 2}, ls), 32, 32);
  // Map 1 peaks at the grid center (pixel centers straddle 0.5 on an even grid).
  double peak = 0;
  for (std::size_t i = 0; i < 1024; ++i) peak = std::max(peak, g.data()[i]);
  EXPECT_NEAR(peak, 6.0 * std::exp(-2.0 * std::pow(0.5 / 32.0, 2) / 0.25), 1e-12);
  double worst = 0;
  for (std::size_t a = 0; a < 16; ++a)
    for (std::size_t b = a + 1; b < 16; ++b)
      worst = std::max(worst, pearson(g.data().subspan(a * 1024, 1024), g.data().subspan(b * 1024, 1024)));
  EXPECT_LT(worst, 0.95);
  auto again = init_priors(16, 0);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(again[i].log_sigma_x, p[i].log_sigma_x);
}

TEST(Priors, GradientsMatchFiniteDifferences) {
  auto mu = random_tensor({4, 2}, 20, true, 0.2, 0.8);
  auto ls = random_tensor({4, 2}, 21, true, -1.5, -0.5);
  auto r = random_tensor({1, 4, 6, 7}, 22);
  auto report = grad_check(
      [&](const std::vector<Tensor>& in) { return weighted_sum(render_priors(in[0], in[1], 6, 7), r); }, {mu, ls});
  EXPECT_LT(report.max_rel_error(), 1e-4);
}

TEST(Priors, BankIsPrivatePerDomain) {
  auto reg = four_domains();
  ParameterStore store;
  GaussianPriorBank bank(store, "priors", 16, DomainScope(reg, true), 0);
  Tensor mu = bank.means(1);
  mu.mutable_data()[0] = 0.1;
  auto a = bank.render(reg->at(0), 6, 8);
  auto b = bank.render(reg->at(1), 6, 8);
  EXPECT_FALSE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  EXPECT_NE(bank.means(0).id(), bank.means(1).id());
}

TEST(Fusion, PointwiseDefinitionAndPrivacy) {
  auto reg = four_domains();
  ParameterStore store;
  DomainAdaptiveFusion fusion(store, "fusion", 3, DomainScope(reg, true), 1);
  Tensor w = fusion.weight(0), b = fusion.bias(0);
  std::copy_n(std::vector<double>{0.5, -1.0, 2.0}.begin(), 3, w.mutable_data().begin());
  b.mutable_data()[0] = 0.25;
  auto x = random_tensor({1, 3, 2, 2}, 30);
  auto y = fusion.forward(x, reg->at(0));
  for (std::size_t p = 0; p < 4; ++p) {
    const double expect = 0.5 * x.data()[p] - 1.0 * x.data()[4 + p] + 2.0 * x.data()[8 + p] + 0.25;
    EXPECT_NEAR(y.data()[p], expect, 1e-15);
  }
  // Domains 1 and 2 keep the identical initialization.
  auto y1 = fusion.forward(x, reg->at(1)), y2 = fusion.forward(x, reg->at(2));
  EXPECT_TRUE(std::equal(y1.data().begin(), y1.data().end(), y2.data().begin()));
  fill(fusion.weight(3), 0.0);
  auto zero = fusion.forward(x, reg->at(3));
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(fusion.forward(random_tensor({1, 4, 2, 2}, 31), reg->at(0)), DimensionError);
}

TEST(Smoothing, DeltaReproducesKernel) {
  auto reg = four_domains();
  ParameterStore store;
  DomainAdaptiveSmoothing smooth(store, "smooth", 41, 6.0, DomainScope(reg, true));
  std::vector<double> d(41 * 41, 0.0);
  d[20 * 41 + 20] = 1.0;
  auto y = smooth.forward(Tensor::from({1, 1, 41, 41}, d), reg->at(0));
  const auto k = smooth.kernel(0).data();
  for (std::size_t i = 0; i < 41 * 41; ++i) EXPECT_NEAR(y.data()[i], k[i], 1e-18);
}

TEST(Smoothing, UnitMassKernelPreservesConstantInterior) {
  auto reg = four_domains();
  ParameterStore store;
  DomainAdaptiveSmoothing smooth(store, "smooth", 41, 6.0, DomainScope(reg, true));
  const auto k = smooth.kernel(0).data();
  EXPECT_NEAR(std::accumulate(k.begin(), k.end(), 0.0), 1.0, 1e-12);
  auto y = smooth.forward(Tensor::full({1, 1, 50, 50}, 3.0), reg->at(0));
  for (std::size_t r = 20; r < 30; ++r)
    for (std::size_t c = 20; c < 30; ++c) EXPECT_LT(std::abs(y.at({0, 0, r, c}) - 3.0), 1e-9);
}

TEST(Smoothing, DomainsWithDifferentKernelsDiffer) {
  auto reg = four_domains();
  ParameterStore store;
  DomainAdaptiveSmoothing smooth(store, "smooth", 5, 1.0, DomainScope(reg, true));
  Tensor k = smooth.kernel(1);
  const Tensor wide = gaussian_kernel(5, 2.0);
  std::copy(wide.data().begin(), wide.data().end(), k.mutable_data().begin());
  auto x = random_tensor({1, 1, 8, 8}, 40);
  auto a = smooth.forward(x, reg->at(0)), b = smooth.forward(x, reg->at(1));
  EXPECT_FALSE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  EXPECT_THROW(smooth.forward(Tensor::zeros({1, 2, 8, 8}), reg->at(0)), ContractError);
}

TEST(CGru, ZeroWeightsGiveHalfGate) {
  ParameterStore store;
  ConvGRUCell cell(store, "gru", 2, 3, 0.2, 0);
  for (const auto& p : cell.parameters()) fill(p, 0.0);
  BypassCGRUState state;
  auto h = cell.step(random_tensor({1, 2, 3, 3}, 1), state, {});
  for (double v : h.data()) EXPECT_EQ(v, 0.0);  // z = 0.5, candidate tanh(0) = 0, h = 0
  auto v = random_tensor({1, 3, 3, 3}, 2);
  state.hidden = v;
  auto h2 = cell.step(random_tensor({1, 2, 3, 3}, 3), state, {});
  for (std::size_t i = 0; i < v.numel(); ++i) EXPECT_DOUBLE_EQ(h2.data()[i], 0.5 * v.data()[i]);
}

TEST(CGru, EvalModeIgnoresRecurrentDropout) {
  ParameterStore store;
  ConvGRUCell cell(store, "gru", 2, 3, 0.9, 0);
  auto x = random_tensor({1, 2, 3, 3}, 4);
  BypassCGRUState a, b;
  a.hidden = b.hidden = random_tensor({1, 3, 3, 3}, 5);
  ForwardContext eval{false, 1, 0};
  auto ha = cell.step(x, a, eval);
  auto hb = cell.step(x, b, eval);
  EXPECT_TRUE(std::equal(ha.data().begin(), ha.data().end(), hb.data().begin()));
  EXPECT_FALSE(a.dropout_mask.defined());
}

TEST(CGru, TwoStepHandRecursion) {
  // One input and one hidden channel on a 1x1 grid: only kernel centers act.
  ParameterStore store;
  BypassRNN rnn(store, "rnn", 1, 1, 0.0, 0);
  const ConvGRUCell& cell = rnn.cell();
  const double ax = 0.3, ah = -0.4, uz0 = 0.7, uz1 = 0.2, bz = 0.1, ur0 = -0.5, ur1 = 0.6, br = 0.05;
  const double cx = 0.8, ch = 0.9, cp0 = 1.1, cp1 = -0.7, bc = 0.02, pw = 0.5, pb = -0.1;
  auto set = [](const Tensor& t, std::vector<double> v) {
    Tensor c = t;
    for (std::size_t i = 0; i < c.numel(); ++i) c.mutable_data()[i] = v[i % v.size()];
  };
  // Depthwise weights are 2 x 1 x 3 x 3; channel 0 is x, channel 1 is h.
  set(cell.gate_depthwise().weight(), {ax, ax, ax, ax, ax, ax, ax, ax, ax, ah, ah, ah, ah, ah, ah, ah, ah, ah});
  set(cell.update_pointwise().weight(), {uz0, uz1});
  set(cell.update_pointwise().bias(), {bz});
  set(cell.reset_pointwise().weight(), {ur0, ur1});
  set(cell.reset_pointwise().bias(), {br});
  set(cell.candidate_depthwise().weight(), {cx, cx, cx, cx, cx, cx, cx, cx, cx, ch, ch, ch, ch, ch, ch, ch, ch, ch});
  set(cell.candidate_pointwise().weight(), {cp0, cp1});
  set(cell.candidate_pointwise().bias(), {bc});
  set(rnn.projection().weight(), {pw});
  set(rnn.projection().bias(), {pb});

  const double x = 0.6;
  double h = 0.0;
  std::vector<double> expect_h, expect_out;
  for (int t = 0; t < 2; ++t) {
    const double z = sig(uz0 * ax * x + uz1 * ah * h + bz);
    const double r = sig(ur0 * ax * x + ur1 * ah * h + br);
    const double c = std::tanh(cp0 * cx * x + cp1 * ch * r * h + bc);
    h = (1 - z) * h + z * c;
    expect_h.push_back(h);
    expect_out.push_back(x + pw * h + pb);
  }
  DomainRegistry reg;
  const DomainId video = reg.add("video", Modality::Dynamic, 30, {1, 1});
  BypassCGRUState state;
  auto out = rnn.forward(Tensor::full({2, 1, 1, 1, 1}, x), video, state, {});
  EXPECT_EQ(state.steps, 2u);
  EXPECT_NEAR(state.hidden.item(), expect_h[1], 1e-15);
  EXPECT_NEAR(out.data()[0], expect_out[0], 1e-15);
  EXPECT_NEAR(out.data()[1], expect_out[1], 1e-15);
}

TEST(CGru, GradientsMatchFiniteDifferences) {
  ParameterStore store;
  ConvGRUCell cell(store, "gru", 2, 2, 0.2, 3);
  auto x = random_tensor({2, 2, 3, 3}, 50, true);
  auto h0 = random_tensor({2, 2, 3, 3}, 51, true);
  auto r = random_tensor({2, 2, 3, 3}, 52);
  std::vector<Tensor> inputs{x, h0};
  for (const auto& p : cell.parameters()) inputs.push_back(p);
  auto report = grad_check(
      [&](const std::vector<Tensor>& in) {
        BypassCGRUState state;
        state.hidden = in[1];
        return weighted_sum(cell.step(in[0], state, ForwardContext{true, 9, 1}), r);
      },
      inputs);
  EXPECT_LT(report.max_rel_error(), 1e-4);
}

TEST(BypassRnn, StaticDomainReturnsInputUntouched) {
  auto reg = four_domains();
  ParameterStore store;
  BypassRNN rnn(store, "rnn", 4, 4, 0.2, 0);
  auto f = random_tensor({1, 2, 4, 3, 3}, 60, true);
  BypassCGRUState state;
  auto out = rnn.forward(f, reg->at(0), state, ForwardContext{true, 1, 0});
  EXPECT_EQ(out.id(), f.id());
  EXPECT_EQ(state.steps, 0u);
  EXPECT_FALSE(state.hidden.defined());
  backward(sum(mul(out, out)));
  for (const auto& p : rnn.parameters()) EXPECT_FALSE(p.has_grad());
  EXPECT_THROW(rnn.forward(random_tensor({2, 2, 4, 3, 3}, 61), reg->at(0), state, {}), ContractError);
}

TEST(BypassRnn, ZeroProjectionIsIdentityForDynamic) {
  auto reg = four_domains();
  ParameterStore store;
  BypassRNN rnn(store, "rnn", 4, 4, 0.2, 0);
  fill(rnn.projection().weight(), 0.0);
  fill(rnn.projection().bias(), 0.0);
  auto f = random_tensor({3, 2, 4, 3, 3}, 62);
  BypassCGRUState state;
  auto out = rnn.forward(f, reg->at(2), state, {});
  EXPECT_EQ(state.steps, 3u);
  for (std::size_t i = 0; i < f.numel(); ++i) EXPECT_EQ(out.data()[i], f.data()[i]);
}

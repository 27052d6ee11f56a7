#include "unisal/verify.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

#include "unisal/checkpoint.hpp"
#include "unisal/errors.hpp"
#include "unisal/grad_check.hpp"
#include "unisal/metrics.hpp"
#include "unisal/ops.hpp"
#include "unisal/rng.hpp"
#include "unisal/trainer.hpp"

namespace unisal {

namespace {

constexpr double kOpTolerance = 1e-4;
constexpr double kModelTolerance = 1e-3;

std::string num(double v) {
  std::ostringstream ss;
  ss.precision(3);
  ss << std::scientific << v;
  return ss.str();
}

Tensor random_tensor(Shape shape, CounterRng& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

// Values bounded away from the ReLU6 kinks at 0 and 6.
Tensor off_kink_tensor(Shape shape, CounterRng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) {
    const double u = rng.uniform(0.1, 0.9);
    const std::size_t band = static_cast<std::size_t>(rng.below(3));
    x = band == 0 ? -2.0 * u : band == 1 ? 6.0 * u : 6.0 + 2.0 * u;
  }
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Scalar readout with non-uniform weights so that every output element
// contributes a distinct gradient.
Tensor readout(const Tensor& y, std::uint64_t seed) {
  CounterRng rng(seed, 0x726561ULL);
  return weighted_sum(y, random_tensor(y.shape(), rng, -1.0, 1.0, false));
}

CheckResult op_check(const std::string& name, const ScalarGraph& graph, const std::vector<Tensor>& inputs,
                     std::uint64_t seed) {
  GradCheckOptions opt;
  opt.seed = seed;
  const GradCheckReport r = grad_check(graph, inputs, opt);
  return {name, r.passed(kOpTolerance), "max rel err " + num(r.max_rel_error())};
}

std::shared_ptr<DomainRegistry> four_domains(Resolution res) {
  auto reg = std::make_shared<DomainRegistry>();
  reg->add("image_a", Modality::Static, 0, res);
  reg->add("image_b", Modality::Static, 0, res);
  reg->add("video_a", Modality::Dynamic, 30, res);
  reg->add("video_b", Modality::Dynamic, 24, res);
  return reg;
}

std::vector<std::vector<SaliencyMap>> random_gt(std::size_t t, std::size_t n, Resolution res, CounterRng& rng) {
  std::vector<std::vector<SaliencyMap>> out(t, std::vector<SaliencyMap>(n, SaliencyMap(res.height, res.width)));
  for (auto& row : out) {
    for (auto& m : row) {
      for (auto& v : m.values) v = rng.uniform(0.05, 1.0);
    }
  }
  return out;
}

std::vector<std::vector<FixationMap>> random_fix(std::size_t t, std::size_t n, Resolution res, CounterRng& rng) {
  std::vector<std::vector<FixationMap>> out(t, std::vector<FixationMap>(n, FixationMap(res.height, res.width)));
  for (auto& row : out) {
    for (auto& f : row) {
      for (int k = 0; k < 3; ++k) f.set(rng.below(res.height), rng.below(res.width));
    }
  }
  return out;
}

double pairwise_auc(const SaliencyMap& p, const FixationMap& f) {
  double credit = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!f.mask[i]) continue;
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (f.mask[j]) continue;
      pairs += 1.0;
      if (p.values[i] > p.values[j]) credit += 1.0;
      else if (p.values[i] == p.values[j]) credit += 0.5;
    }
  }
  return credit / pairs;
}

CheckResult near(const std::string& name, double got, double want, double tol) {
  return {name, std::abs(got - want) <= tol, "got " + std::to_string(got) + ", want " + std::to_string(want)};
}

}  // namespace

double model_gradient_spot_check(UnisalModel& model, const DomainId& domain, std::size_t frames, std::size_t batch,
                                 std::size_t samples, std::uint64_t seed, std::size_t* redrawn_out) {
  CounterRng rng(seed, 0x6532ULL);
  const Resolution res = domain.input_resolution;
  const Tensor input = random_tensor({frames, batch, 3, res.height, res.width}, rng, 0.0, 1.0, false);
  const auto gt = random_gt(frames, batch, res, rng);
  const auto fix = random_fix(frames, batch, res, rng);
  const ForwardContext ctx{true, seed, 0};
  auto loss_value = [&] {
    NoGradGuard no_grad;
    BypassCGRUState state;
    return saliency_loss(model.forward(input, domain, ctx, state).maps, gt, fix, {}).item();
  };

  // Running statistics change on every training forward but do not enter the
  // training-mode output; they are restored afterwards anyway.
  std::vector<std::vector<double>> buffers;
  for (const auto& e : model.store().entries()) {
    if (e.role == ParamRole::Buffer) buffers.emplace_back(e.value.data().begin(), e.value.data().end());
  }

  model.store().zero_grad();
  {
    BypassCGRUState state;
    backward(saliency_loss(model.forward(input, domain, ctx, state).maps, gt, fix, {}));
  }
  std::vector<Tensor> params;
  for (const auto& e : model.store().entries()) {
    if (e.role == ParamRole::Parameter && e.value.has_grad()) params.push_back(e.value);
  }
  std::size_t total = 0;
  for (const auto& p : params) total += p.numel();

  // A step of 1e-6 keeps rounding noise near 1e-9. Coordinates whose
  // one-sided differences disagree straddle a ReLU6 kink within the step;
  // the finite difference is meaningless there, so another one is drawn.
  const double h = 1e-6;
  const double base = loss_value();
  double worst = 0.0;
  std::size_t checked = 0, redrawn = 0;
  while (checked < samples && total > 0 && redrawn < 10 * samples) {
    std::size_t flat = static_cast<std::size_t>(rng.below(total));
    std::size_t which = 0;
    while (flat >= params[which].numel()) flat -= params[which++].numel();
    Tensor p = params[which];
    const double analytic = p.grad()[flat];
    const double saved = p.data()[flat];
    p.mutable_data()[flat] = saved + h;
    const double up = loss_value();
    p.mutable_data()[flat] = saved - h;
    const double down = loss_value();
    p.mutable_data()[flat] = saved;
    const double fwd = (up - base) / h, bwd = (base - down) / h;
    if (relative_error(fwd, bwd, 1e-5) > 1e-2) {
      ++redrawn;
      continue;
    }
    worst = std::max(worst, relative_error(analytic, (up - down) / (2.0 * h), 1e-5));
    ++checked;
  }
  if (redrawn_out) *redrawn_out = redrawn;
  model.store().zero_grad();
  std::size_t b = 0;
  for (auto& e : model.store().entries()) {
    if (e.role != ParamRole::Buffer) continue;
    auto d = e.value.mutable_data();
    std::copy(buffers[b].begin(), buffers[b].end(), d.begin());
    ++b;
  }
  return worst;
}

std::vector<CheckResult> verify_gradcheck(std::uint64_t seed) {
  std::vector<CheckResult> out;
  CounterRng rng(seed, 0x67636bULL);

  {
    Tensor x = random_tensor({2, 3, 5, 6}, rng), w = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
    out.push_back(op_check("conv2d full 3x3 with bias",
                           [&](const std::vector<Tensor>& in) { return readout(conv2d(in[0], in[1], in[2], 1, 1), 1); },
                           {x, w, b}, seed));
  }
  {
    Tensor x = random_tensor({2, 4, 5, 5}, rng), w = random_tensor({6, 2, 3, 3}, rng);
    out.push_back(op_check("conv2d grouped (2 groups)",
                           [&](const std::vector<Tensor>& in) { return readout(conv2d(in[0], in[1], {}, 1, 1, 2), 2); },
                           {x, w}, seed));
  }
  {
    Tensor x = random_tensor({2, 3, 7, 6}, rng), w = random_tensor({3, 1, 3, 3}, rng);
    out.push_back(op_check("conv2d depthwise stride 2",
                           [&](const std::vector<Tensor>& in) { return readout(conv2d(in[0], in[1], {}, 2, 1, 3), 3); },
                           {x, w}, seed));
  }
  {
    Tensor x = random_tensor({2, 5, 3, 4}, rng), w = random_tensor({3, 5, 1, 1}, rng), b = random_tensor({3}, rng);
    out.push_back(op_check("conv2d pointwise with bias",
                           [&](const std::vector<Tensor>& in) { return readout(conv2d(in[0], in[1], in[2]), 4); },
                           {x, w, b}, seed));
  }
  {
    Tensor x = random_tensor({1, 2, 3, 4}, rng);
    out.push_back(op_check("upsample bilinear x2",
                           [&](const std::vector<Tensor>& in) {
                             return readout(upsample(in[0], 2, Interpolation::Bilinear), 5);
                           },
                           {x}, seed));
    out.push_back(op_check("resize bilinear 3x4 -> 5x7",
                           [&](const std::vector<Tensor>& in) {
                             return readout(resize(in[0], 5, 7, Interpolation::Bilinear), 6);
                           },
                           {x}, seed));
    out.push_back(op_check("resize nearest 3x4 -> 8x9",
                           [&](const std::vector<Tensor>& in) {
                             return readout(resize(in[0], 8, 9, Interpolation::Nearest), 7);
                           },
                           {x}, seed));
  }
  {
    Tensor x = off_kink_tensor({2, 3, 4, 4}, rng);
    out.push_back(op_check("relu6 off the kinks", [&](const std::vector<Tensor>& in) { return readout(relu6(in[0]), 8); },
                           {x}, seed));
    Tensor y = random_tensor({2, 3, 4, 4}, rng, -3.0, 3.0);
    out.push_back(op_check("sigmoid", [&](const std::vector<Tensor>& in) { return readout(sigmoid(in[0]), 9); }, {y},
                           seed));
    out.push_back(op_check("tanh", [&](const std::vector<Tensor>& in) { return readout(tanh(in[0]), 10); }, {y}, seed));
  }
  {
    Tensor x = random_tensor({3, 2, 3, 3}, rng), g = random_tensor({2}, rng, 0.5, 1.5), b = random_tensor({2}, rng);
    out.push_back(op_check("batch normalization (training)",
                           [&](const std::vector<Tensor>& in) {
                             Tensor rm = Tensor::zeros({2}), rv = Tensor::full({2}, 1.0);
                             return readout(batch_stats_normalize(in[0], in[1], in[2], rm, rv, 0.1, true), 11);
                           },
                           {x, g, b}, seed));
  }
  {
    Tensor x = random_tensor({2, 1, 4, 5}, rng, -2.0, 2.0);
    out.push_back(op_check("spatial softmax",
                           [&](const std::vector<Tensor>& in) { return readout(softmax_spatial(in[0]), 12); }, {x},
                           seed));
  }
  {
    Tensor mu = random_tensor({3, 2}, rng, 0.2, 0.8), ls = random_tensor({3, 2}, rng, -1.5, -0.5);
    out.push_back(op_check("gaussian prior rendering",
                           [&](const std::vector<Tensor>& in) { return readout(render_priors(in[0], in[1], 5, 6), 13); },
                           {mu, ls}, seed));
  }
  {
    ParameterStore store;
    ConvGRUCell cell(store, "cell", 3, 4, 0.2, seed);
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    Tensor h0 = random_tensor({2, 4, 4, 4}, rng, -0.5, 0.5);
    std::vector<Tensor> inputs{x, h0};
    for (const auto& p : cell.parameters()) inputs.push_back(p);
    out.push_back(op_check("cGRU step",
                           [&](const std::vector<Tensor>& in) {
                             BypassCGRUState state;
                             state.hidden = in[1];
                             return readout(cell.step(in[0], state, ForwardContext{false, seed, 0}), 14);
                           },
                           inputs, seed));
  }
  {
    const Resolution res{6, 8};
    Tensor logits = random_tensor({2, 2, 1, 6, 8}, rng, -1.0, 1.0);
    const auto gt = random_gt(2, 2, res, rng);
    const auto fix = random_fix(2, 2, res, rng);
    out.push_back(op_check("composite loss",
                           [&](const std::vector<Tensor>& in) {
                             const Tensor p = reshape(softmax_spatial(reshape(in[0], {4, 1, 6, 8})), {2, 2, 1, 6, 8});
                             return saliency_loss(p, gt, fix, {});
                           },
                           {logits}, seed));
  }
  {
    auto reg = four_domains({24, 32});
    ModelConfig cfg = ModelConfig::desk();
    cfg.width_multiplier = 0.125;
    UnisalModel model = UnisalModel::build(cfg, reg, seed);
    // Four maps per normalization keep the 1x1 bottleneck statistics
    // well conditioned.
    std::size_t r1 = 0, r2 = 0;
    const double e_static = model_gradient_spot_check(model, reg->at(0), 1, 4, 25, seed, &r1);
    const double e_dynamic = model_gradient_spot_check(model, reg->at(2), 2, 2, 25, seed + 1, &r2);
    const double worst = std::max(e_static, e_dynamic);
    out.push_back({"end-to-end 0.125-width model, 24x32, 50 coordinates", worst < kModelTolerance,
                   "max rel err " + num(worst) + ", " + std::to_string(r1 + r2) + " kink coordinates redrawn"});
  }
  return out;
}

std::vector<CheckResult> verify_invariants(std::uint64_t seed) {
  std::vector<CheckResult> out;
  const Resolution res{24, 32};
  auto reg = four_domains(res);
  UnisalModel model = UnisalModel::build(ModelConfig::desk(), reg, seed);
  CounterRng rng(seed, 0x696e76ULL);

  {
    const Tensor x = random_tensor({1, 2, 3, res.height, res.width}, rng, 0.0, 1.0, false);
    BypassCGRUState state;
    ForwardTrace trace;
    model.store().zero_grad();
    const auto o = model.forward(x, reg->at(0), {true, seed, 0}, state, &trace);
    backward(sum(o.maps));
    bool identical = trace.rnn_input.id() == trace.rnn_output.id();
    const auto a = trace.rnn_input.data(), b = trace.rnn_output.data();
    identical = identical && std::equal(a.begin(), a.end(), b.begin(), b.end());
    bool untouched = state.steps == 0;
    for (const auto& p : model.rnn().parameters()) untouched = untouched && !p.has_grad();
    model.store().zero_grad();
    out.push_back({"static forward bypasses the recurrent block", identical && untouched,
                   identical ? (untouched ? "output is the input; no cGRU gradient" : "cGRU touched")
                             : "output differs from input"});
  }
  {
    NoGradGuard no_grad;
    double worst = 0.0;
    bool non_negative = true;
    // 10 forwards of 5 inputs cycling over the domains, alternating modes.
    for (std::size_t k = 0; k < 10; ++k) {
      const DomainId& d = reg->at(k % 4);
      const std::size_t t = d.is_static() ? 1 : 3;
      const Tensor x = random_tensor({t, 5, 3, res.height, res.width}, rng, 0.0, 1.0, false);
      BypassCGRUState state;
      const auto o = model.forward(x, d, {k % 2 == 1, seed, k}, state);
      for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t n = 0; n < 5; ++n) {
          double s = 0.0;
          for (double v : o.frame(i, n)) {
            s += v;
            non_negative = non_negative && v >= 0.0;
          }
          worst = std::max(worst, std::abs(s - 1.0));
        }
      }
    }
    out.push_back({"outputs of 50 inputs over 4 domains are probability maps", worst <= 1e-6 && non_negative, "max |sum - 1| " + num(worst)});
  }
  {
    const Tensor mu = Tensor::from({1, 2}, {2.5 / 8.0, 1.5 / 6.0});
    const Tensor ls = Tensor::from({1, 2}, {-1.2, -0.7});
    const Tensor g = render_priors(mu, ls, 6, 8);
    const double at_mean = g.data()[1 * 8 + 2];
    // Pixel (1, 2 + k) sits k / 8 away horizontally; choose sigma_x = 1 / 8.
    const Tensor ls2 = Tensor::from({1, 2}, {std::log(1.0 / 8.0), -0.7});
    const double one_sigma = render_priors(mu, ls2, 6, 8).data()[1 * 8 + 3];
    const double err = std::max(std::abs(at_mean - 6.0), std::abs(one_sigma - 6.0 * std::exp(-1.0)));
    out.push_back({"prior equals 6 at the mean and 6/e one sigma away", err <= 1e-12, "max err " + num(err)});
  }
  {
    NoGradGuard no_grad;
    const Tensor x = random_tensor({3, 1, 3, res.height, res.width}, rng, 0.0, 1.0, false);
    BypassCGRUState s1, s2;
    const auto a = model.forward(x, reg->at(2), {false, seed, 0}, s1).maps.data();
    const auto b = model.forward(x, reg->at(2), {false, seed, 0}, s2).maps.data();
    out.push_back({"forward is deterministic", std::equal(a.begin(), a.end(), b.begin(), b.end()), ""});
  }
  {
    const auto path = std::filesystem::temp_directory_path() /
                      ("unisal_verify_" + std::to_string(mix64(seed ^ reinterpret_cast<std::uintptr_t>(&out))) + ".ck");
    save_checkpoint(model, path);
    UnisalModel loaded = load_checkpoint(path);
    std::filesystem::remove(path);
    bool same = loaded.store().entries().size() == model.store().entries().size();
    for (std::size_t i = 0; same && i < model.store().entries().size(); ++i) {
      const auto a = model.store().entries()[i].value.data();
      const auto b = loaded.store().entries()[i].value.data();
      same = std::equal(a.begin(), a.end(), b.begin(), b.end());
    }
    out.push_back({"checkpoint round trip is bit-exact", same, ""});
  }
  {
    Tensor p = Tensor::from({3}, {0.5, -1.0, 2.0}, true);
    p.mutable_grad();
    OptimizerState st;
    st.weight_decay = 0.0;
    const std::vector<Tensor> ps{p};
    const std::vector<double> scales{1.0};
    sgd_step(ps, scales, st);
    const auto d = p.data();
    out.push_back({"zero-gradient step leaves parameters unchanged", d[0] == 0.5 && d[1] == -1.0 && d[2] == 2.0, ""});
  }
  return out;
}

std::vector<CheckResult> verify_metrics_oracle(std::uint64_t seed) {
  std::vector<CheckResult> out;
  CounterRng rng(seed, 0x6d6574ULL);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    SaliencyMap p(8, 8);
    // Every fourth instance is quantized to produce ties.
    for (auto& v : p.values) v = k % 4 == 0 ? static_cast<double>(rng.below(4)) : rng.uniform();
    FixationMap f(8, 8);
    while (f.count() < 3) f.set(rng.below(8), rng.below(8));
    worst = std::max(worst, std::abs(auc_judd(p, f) - pairwise_auc(p, f)));
  }
  out.push_back({"AUC-J equals the pairwise rank oracle on 100 instances", worst < 1e-9, "max diff " + num(worst)});

  out.push_back(near("SIM [0.7,0.3] vs [0.4,0.6]", sim(SaliencyMap(1, 2, {0.7, 0.3}), SaliencyMap(1, 2, {0.4, 0.6})),
                     0.7, 1e-9));
  out.push_back(near("CC (1,0,0,0) vs (0,1,0,0)",
                     cc(SaliencyMap(1, 4, {1, 0, 0, 0}), SaliencyMap(1, 4, {0, 1, 0, 0})), -1.0 / 3.0, 1e-9));
  out.push_back(near("NSS [[2,0],[0,0]] at the 2", nss(SaliencyMap(2, 2, {2, 0, 0, 0}),
                                                        FixationMap::from_points(2, 2, {{0, 0}})),
                     std::sqrt(3.0), 1e-9));
  out.push_back(near("KLD q=[1,0] p=[0.5,0.5]", kld(SaliencyMap(1, 2, {1, 0}), SaliencyMap(1, 2, {0.5, 0.5})),
                     std::log(1.0 / (0.5 + kMetricEps)), 1e-9));
  out.push_back(near("IG with doubled mass at the fixation",
                     info_gain(SaliencyMap(1, 4, {0.5, 0.5 / 3, 0.5 / 3, 0.5 / 3}),
                               FixationMap::from_points(1, 4, {{0, 0}}), SaliencyMap(1, 4, 0.25)),
                     std::log2((0.5 + kMetricEps) / (0.25 + kMetricEps)), 1e-9));
  return out;
}

const std::vector<std::string>& verify_suite_names() {
  static const std::vector<std::string> names{"gradcheck", "invariants", "metrics-oracle", "all"};
  return names;
}

std::vector<CheckResult> run_verify_suite(const std::string& suite, std::uint64_t seed) {
  if (suite == "gradcheck") return verify_gradcheck(seed);
  if (suite == "invariants") return verify_invariants(seed);
  if (suite == "metrics-oracle") return verify_metrics_oracle(seed);
  if (suite == "all") {
    auto all = verify_gradcheck(seed);
    for (auto& r : verify_invariants(seed)) all.push_back(std::move(r));
    for (auto& r : verify_metrics_oracle(seed)) all.push_back(std::move(r));
    return all;
  }
  throw ConfigError("unknown suite '" + suite + "'; valid suites: gradcheck, invariants, metrics-oracle, all");
}

}  // namespace unisal

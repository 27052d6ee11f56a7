#include "unisal/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "unisal/errors.hpp"
#include "unisal/parallel.hpp"
#include "unisal/rng.hpp"

namespace unisal {

namespace {

constexpr double kLossEps = 1e-7;

struct FrameTarget {
  std::vector<double> q;         // normalized ground truth
  std::vector<double> centered;  // ground truth minus its mean
  double gt_std = 0.0;
  double gt_mean = 0.0;
  std::vector<std::size_t> fixated;
};

FrameTarget prepare_target(const SaliencyMap& gt, const FixationMap& fix, const LossWeights& w,
                           std::size_t h, std::size_t wd) {
  if (gt.height != h || gt.width != wd) throw DimensionError("loss: ground truth size differs from prediction");
  if (fix.height != h || fix.width != wd) throw DimensionError("loss: fixation map size differs from prediction");
  FrameTarget t;
  const std::size_t n = gt.size();
  double sum = 0.0;
  for (double v : gt.values) {
    if (!std::isfinite(v) || v < 0.0) throw InputError("loss: ground truth must be finite and non-negative");
    sum += v;
  }
  if (!(sum > 0.0)) throw InputError("loss: ground truth has zero sum");
  t.q.resize(n);
  for (std::size_t i = 0; i < n; ++i) t.q[i] = gt.values[i] / sum;
  const double mean = sum / static_cast<double>(n);
  t.gt_mean = mean;
  t.centered.resize(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    t.centered[i] = gt.values[i] - mean;
    var += t.centered[i] * t.centered[i];
  }
  t.gt_std = std::sqrt(var / static_cast<double>(n));
  if (w.cc != 0.0 && t.gt_std == 0.0) throw InputError("loss: ground truth has zero variance");
  t.fixated = fix.indices();
  if (w.nss != 0.0 && t.fixated.empty()) throw InputError("loss: frame has no fixations");
  return t;
}

struct FrameTerms {
  double kld = 0.0, cc = 0.0, nss = 0.0;
};

// Value of the three terms for one frame and, when `grad` is non-empty,
// d(kld - wcc cc - wnss nss)/dp scaled by `scale` accumulated into it.
FrameTerms frame_terms(std::span<const double> p, const FrameTarget& t, const LossWeights& w, double scale,
                       std::span<double> grad) {
  const std::size_t n = p.size();
  const double nd = static_cast<double>(n);
  double s = 0.0;
  for (double v : p) s += v;
  FrameTerms out;

  // KLD on the renormalized prediction.
  double g_dot_p = 0.0;
  std::vector<double> g_kld(grad.empty() ? 0 : n);
  for (std::size_t i = 0; i < n; ++i) {
    const double ph = p[i] / s;
    if (t.q[i] > 0.0) out.kld += t.q[i] * std::log(t.q[i] / (ph + kLossEps));
    if (!grad.empty()) {
      g_kld[i] = -t.q[i] / (ph + kLossEps);
      g_dot_p += g_kld[i] * ph;
    }
  }

  double mean = s / nd;
  double var = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = p[i] - mean;
    var += a * a;
    cov += a * t.centered[i];
  }
  const double sd = std::sqrt(var / nd);
  cov /= nd;
  // Stabilizers scale with the maps so unit-sum maps of any size see the same
  // relative guard.
  const double d_cc = sd * t.gt_std + kLossEps * mean * t.gt_mean;
  out.cc = cov / d_cc;

  const double d_nss = sd + kLossEps * mean;
  double fix_mean = 0.0;
  for (std::size_t i : t.fixated) fix_mean += p[i];
  const double k = static_cast<double>(t.fixated.size());
  if (k > 0) {
    fix_mean /= k;
    out.nss = (fix_mean - mean) / d_nss;
  }

  if (grad.empty()) return out;
  for (std::size_t j = 0; j < n; ++j) {
    const double a = p[j] - mean;
    double g = (g_kld[j] - g_dot_p) / s;
    double dcc = t.centered[j] / (nd * d_cc);
    if (sd > 0.0) dcc -= cov * t.gt_std * a / (nd * sd * d_cc * d_cc);
    dcc -= cov * kLossEps * t.gt_mean / (nd * d_cc * d_cc);
    g -= w.cc * dcc;
    if (k > 0) {
      double dn = -1.0 / (nd * d_nss);
      if (sd > 0.0) dn -= (fix_mean - mean) * a / (nd * sd * d_nss * d_nss);
      dn -= (fix_mean - mean) * kLossEps / (nd * d_nss * d_nss);
      g -= w.nss * dn;
    }
    grad[j] += scale * g;
  }
  if (k > 0) {
    for (std::size_t i : t.fixated) grad[i] -= scale * w.nss / (k * d_nss);
  }
  return out;
}

std::vector<double> snapshot(const ParameterStore& store) {
  std::vector<double> out;
  for (const auto& e : store.entries()) {
    const auto d = e.value.data();
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

void restore(ParameterStore& store, const std::vector<double>& values) {
  std::size_t offset = 0;
  for (auto& e : store.entries()) {
    auto d = e.value.mutable_data();
    std::copy(values.begin() + static_cast<std::ptrdiff_t>(offset),
              values.begin() + static_cast<std::ptrdiff_t>(offset + d.size()), d.begin());
    offset += d.size();
  }
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(10) << v;
  return ss.str();
}

}  // namespace

Tensor saliency_loss(const Tensor& maps, const std::vector<std::vector<SaliencyMap>>& gt,
                     const std::vector<std::vector<FixationMap>>& fix, const LossWeights& weights,
                     LossBreakdown* terms) {
  if (maps.rank() != 5 || maps.dim(2) != 1) {
    throw DimensionError("loss: predictions must be T x N x 1 x H x W, got " + shape_string(maps.shape()));
  }
  if (weights.cc < 0.0 || weights.nss < 0.0) throw ContractError("loss weights must be non-negative");
  const std::size_t t_len = maps.dim(0), n = maps.dim(1), h = maps.dim(3), w = maps.dim(4);
  if (gt.size() != t_len || fix.size() != t_len) throw DimensionError("loss: target frame count differs");
  std::vector<FrameTarget> targets;
  targets.reserve(t_len * n);
  for (std::size_t t = 0; t < t_len; ++t) {
    if (gt[t].size() != n || fix[t].size() != n) throw DimensionError("loss: target batch size differs");
    for (std::size_t j = 0; j < n; ++j) targets.push_back(prepare_target(gt[t][j], fix[t][j], weights, h, w));
  }

  const std::size_t plane = h * w;
  const double inv_frames = 1.0 / static_cast<double>(targets.size());
  const auto data = maps.data();
  LossBreakdown sum;
  for (std::size_t f = 0; f < targets.size(); ++f) {
    const FrameTerms ft = frame_terms(data.subspan(f * plane, plane), targets[f], weights, 0.0, {});
    sum.kld += ft.kld * inv_frames;
    sum.cc += ft.cc * inv_frames;
    sum.nss += ft.nss * inv_frames;
  }
  sum.total = sum.kld - weights.cc * sum.cc - weights.nss * sum.nss;
  if (terms) *terms = sum;

  return Tensor::make_result(
      {}, {sum.total}, {maps},
      [targets = std::move(targets), weights, plane, inv_frames, in = maps](
          std::span<const double>, std::span<const double> grad_out, std::span<const std::span<double>> grad_in) {
        const auto p = in.data();
        for (std::size_t f = 0; f < targets.size(); ++f) {
          frame_terms(p.subspan(f * plane, plane), targets[f], weights, grad_out[0] * inv_frames,
                      grad_in[0].subspan(f * plane, plane));
        }
      });
}

// ---- optimizer -----------------------------------------------------------------

double OptimizerState::epoch_lr() const { return base_lr * std::pow(decay_factor, static_cast<double>(epoch)); }

void sgd_step(std::span<const Tensor> params, std::span<const double> scales, OptimizerState& state) {
  if (params.size() != scales.size()) throw ContractError("sgd_step: one scale per parameter");
  const double lr = state.epoch_lr();
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor p = params[k];
    if (scales[k] == 0.0 || !p.has_grad()) continue;
    const auto g = p.grad();
    auto theta = p.mutable_data();
    auto& v = state.velocity[p.id()];
    if (v.size() != theta.size()) v.assign(theta.size(), 0.0);
    const double step = lr * scales[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      double gi = std::clamp(g[i], -state.clip_bound, state.clip_bound);
      gi += state.weight_decay * theta[i];
      v[i] = state.momentum * v[i] + gi;
      theta[i] -= step * v[i];
    }
  }
}

LrScales apply_freeze_policy(const TrainPolicy& policy, std::size_t epoch) {
  LrScales s;
  s.encoder = epoch < policy.encoder_freeze_epochs ? 0.0 : 1.0 / policy.encoder_lr_divisor;
  s.other = 1.0;
  return s;
}

void TrainPolicy::to_key_values(KeyValues& kv, const std::string& prefix) const {
  kv.set(prefix + "total_epochs", total_epochs);
  kv.set(prefix + "encoder_freeze_epochs", encoder_freeze_epochs);
  kv.set(prefix + "encoder_lr_divisor", encoder_lr_divisor);
  kv.set(prefix + "static_domain_lr_factor", static_domain_lr_factor);
  kv.set(prefix + "early_stop_domain", early_stop_domain);
  kv.set(prefix + "patience", patience);
  kv.set(prefix + "steps_per_epoch", steps_per_epoch);
  kv.set(prefix + "max_steps", max_steps);
  kv.set(prefix + "clip_length", clip_length);
  kv.set(prefix + "target_fps", target_fps);
  kv.set(prefix + "restore_best", restore_best);
  kv.set(prefix + "base_lr", base_lr);
  kv.set(prefix + "momentum", momentum);
  kv.set(prefix + "weight_decay", weight_decay);
  kv.set(prefix + "clip_bound", clip_bound);
  kv.set(prefix + "decay_factor", decay_factor);
  for (const auto& [name, size] : batch_sizes) kv.set(prefix + "batch_size." + name, size);
}

TrainPolicy TrainPolicy::from_key_values(const KeyValues& kv, const std::string& prefix) {
  TrainPolicy p;
  p.total_epochs = kv.get_size(prefix + "total_epochs", p.total_epochs);
  p.encoder_freeze_epochs = kv.get_size(prefix + "encoder_freeze_epochs", p.encoder_freeze_epochs);
  p.encoder_lr_divisor = kv.get_double(prefix + "encoder_lr_divisor", p.encoder_lr_divisor);
  p.static_domain_lr_factor = kv.get_double(prefix + "static_domain_lr_factor", p.static_domain_lr_factor);
  p.early_stop_domain = kv.get(prefix + "early_stop_domain", p.early_stop_domain);
  p.patience = kv.get_size(prefix + "patience", p.patience);
  p.steps_per_epoch = kv.get_size(prefix + "steps_per_epoch", p.steps_per_epoch);
  p.max_steps = kv.get_size(prefix + "max_steps", p.max_steps);
  p.clip_length = kv.get_size(prefix + "clip_length", p.clip_length);
  p.target_fps = kv.get_size(prefix + "target_fps", p.target_fps);
  p.restore_best = kv.get_bool(prefix + "restore_best", p.restore_best);
  p.base_lr = kv.get_double(prefix + "base_lr", p.base_lr);
  p.momentum = kv.get_double(prefix + "momentum", p.momentum);
  p.weight_decay = kv.get_double(prefix + "weight_decay", p.weight_decay);
  p.clip_bound = kv.get_double(prefix + "clip_bound", p.clip_bound);
  p.decay_factor = kv.get_double(prefix + "decay_factor", p.decay_factor);
  const std::string bs = prefix + "batch_size.";
  for (const auto& [key, value] : kv.items()) {
    if (key.rfind(bs, 0) == 0) p.batch_sizes[key.substr(bs.size())] = kv.get_size(key, 0);
  }
  if (p.encoder_freeze_epochs > p.total_epochs) throw ConfigError("encoder_freeze_epochs exceeds total_epochs");
  if (p.encoder_lr_divisor <= 0.0) throw ConfigError("encoder_lr_divisor must be positive");
  if (p.clip_length == 0) throw ConfigError("clip_length must be positive");
  return p;
}

std::string TrainingReport::to_text() const {
  std::ostringstream out;
  for (const auto& s : steps) {
    out << "kind=step step=" << s.step << " epoch=" << s.epoch << " domain=" << s.domain << " loss=" << fmt(s.loss)
        << " kld=" << fmt(s.kld) << " lr_encoder=" << fmt(s.lr_encoder) << " lr=" << fmt(s.lr_other) << "\n";
  }
  for (const auto& e : epochs) {
    out << "kind=epoch epoch=" << e.epoch << " lr=" << fmt(e.lr);
    for (const auto& [d, v] : e.train_loss) out << " train_loss." << d << "=" << fmt(v);
    for (const auto& [d, v] : e.val_loss) out << " val_loss." << d << "=" << fmt(v);
    out << " monitor=" << fmt(e.monitor) << "\n";
  }
  out << "kind=summary best_epoch=" << best_epoch << " best_monitor=" << fmt(best_monitor)
      << " stopped_early=" << (stopped_early ? "true" : "false") << "\n";
  return out.str();
}

// ---- training loop -------------------------------------------------------------

namespace {

std::size_t batch_size_for(const TrainPolicy& policy, const DomainId& domain) {
  auto it = policy.batch_sizes.find(domain.name);
  return it != policy.batch_sizes.end() ? it->second : default_batch_size(domain);
}

// Consecutive passes over all domains, regenerated with fresh clips and a
// fresh order each time they run out.
class BatchStream {
 public:
  BatchStream(const std::vector<DomainData>& data, const TrainPolicy& policy, std::uint64_t seed, LogSink warn)
      : data_(data), policy_(policy), seed_(seed), warn_(std::move(warn)) {}

  struct Item {
    std::size_t domain_slot;
    BatchPlan plan;
    std::size_t pass;
  };

  Item next() {
    while (cursor_ >= plans_.size()) refill();
    return {slots_[cursor_], plans_[cursor_++], pass_ - 1};
  }

  const std::vector<Clip>& clips(std::size_t slot) const { return clips_[slot]; }
  std::size_t batches_per_pass() {
    if (plans_.empty()) refill();
    return plans_.size();
  }

 private:
  void refill() {
    std::vector<ScheduleSource> sources;
    clips_.assign(data_.size(), {});
    std::vector<std::size_t> source_slot;
    for (std::size_t d = 0; d < data_.size(); ++d) {
      const Dataset& ds = *data_[d].train;
      std::size_t units = ds.size();
      if (!ds.domain().is_static()) {
        // Warnings about short videos are emitted once, on the first pass.
        clips_[d] = make_clips(ds, policy_.clip_length, hash_combine(seed_, hash_combine(pass_, d)),
                               pass_ == 0 ? warn_ : LogSink{}, policy_.target_fps);
        units = clips_[d].size();
      }
      if (units == 0) continue;
      sources.push_back({ds.domain(), units, batch_size_for(policy_, ds.domain())});
      source_slot.push_back(d);
    }
    if (sources.empty()) throw ConfigError("no trainable samples in any domain");
    plans_ = schedule_epoch(sources, hash_combine(seed_, 0x70617373ULL + pass_));
    slots_.clear();
    for (const auto& p : plans_) {
      for (std::size_t k = 0; k < sources.size(); ++k) {
        if (sources[k].domain == p.domain) slots_.push_back(source_slot[k]);
      }
    }
    cursor_ = 0;
    ++pass_;
  }

  const std::vector<DomainData>& data_;
  const TrainPolicy& policy_;
  std::uint64_t seed_;
  LogSink warn_;
  std::vector<std::vector<Clip>> clips_;
  std::vector<BatchPlan> plans_;
  std::vector<std::size_t> slots_;
  std::size_t cursor_ = 0;
  std::size_t pass_ = 0;
};

}  // namespace

LossBreakdown validation_loss(const UnisalModel& model, const Dataset& dataset, const LossWeights& weights,
                              std::size_t clip_length, std::size_t target_fps) {
  NoGradGuard no_grad;
  const ForwardContext ctx{false, 0, 0};
  LossBreakdown total;
  std::size_t batches = 0;
  auto add = [&](const BatchData& b) {
    BypassCGRUState state;
    const SaliencyOutput out = model.forward(b.frames, dataset.domain(), ctx, state);
    LossBreakdown terms;
    saliency_loss(out.maps, b.saliency, b.fixations, weights, &terms);
    total.total += terms.total;
    total.kld += terms.kld;
    total.cc += terms.cc;
    total.nss += terms.nss;
    ++batches;
  };
  if (dataset.domain().is_static()) {
    for (std::size_t i = 0; i < dataset.size(); ++i) add(assemble_batch(dataset, {dataset.domain(), {i}}));
  } else {
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      auto idx = assimilation_indices(dataset.frame_count(i), dataset.domain().native_fps, target_fps);
      if (idx.size() < clip_length) continue;
      idx.resize(clip_length);
      add(assemble_batch(dataset, {dataset.domain(), {0}}, {Clip{i, idx}}));
    }
  }
  if (batches == 0) throw InputError("validation set of " + dataset.domain().name + " has no usable samples");
  const double inv = 1.0 / static_cast<double>(batches);
  total.total *= inv;
  total.kld *= inv;
  total.cc *= inv;
  total.nss *= inv;
  return total;
}

TrainingReport train(UnisalModel& model, const std::vector<DomainData>& data, const TrainPolicy& policy,
                     const LossWeights& weights, std::uint64_t seed, const TrainHooks& hooks) {
  if (data.empty()) throw ConfigError("training needs at least one dataset");
  for (const auto& d : data) {
    if (!d.train) throw ConfigError("domain without training data");
    model.registry().require(d.train->domain());
    if (d.validation && !(d.validation->domain() == d.train->domain())) {
      throw ConfigError("validation data of " + d.train->domain().name + " belongs to another domain");
    }
  }
  if (policy.encoder_freeze_epochs > policy.total_epochs) throw ConfigError("freeze epochs exceed total epochs");
  if (!policy.early_stop_domain.empty()) model.registry().by_name(policy.early_stop_domain);

  BatchStream stream(data, policy, seed, hooks.warn);
  const std::size_t per_epoch = policy.steps_per_epoch ? policy.steps_per_epoch : stream.batches_per_pass();

  OptimizerState opt;
  opt.base_lr = policy.base_lr;
  opt.momentum = policy.momentum;
  opt.weight_decay = policy.weight_decay;
  opt.clip_bound = policy.clip_bound;
  opt.decay_factor = policy.decay_factor;

  std::vector<Tensor> params;
  std::vector<bool> is_encoder;
  for (const auto& e : model.store().entries()) {
    if (e.role != ParamRole::Parameter) continue;
    params.push_back(e.value);
    is_encoder.push_back(e.encoder);
  }
  std::vector<double> scales(params.size());

  TrainingReport report;
  report.best_monitor = std::numeric_limits<double>::infinity();
  std::vector<double> best_values;
  std::size_t since_best = 0;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < policy.total_epochs; ++epoch) {
    if (policy.max_steps && step >= policy.max_steps) break;
    opt.epoch = epoch;
    const LrScales group = apply_freeze_policy(policy, epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = opt.epoch_lr();
    std::map<std::string, std::pair<double, std::size_t>> train_sum;

    for (std::size_t k = 0; k < per_epoch; ++k) {
      if (policy.max_steps && step >= policy.max_steps) break;
      const auto item = stream.next();
      const Dataset& ds = *data[item.domain_slot].train;
      const DomainId& domain = ds.domain();
      const BatchData batch = assemble_batch(ds, item.plan, stream.clips(item.domain_slot));

      const ForwardContext ctx{true, seed, step};
      BypassCGRUState state;
      const SaliencyOutput out = model.forward(batch.frames, domain, ctx, state);
      LossBreakdown terms;
      const Tensor loss = saliency_loss(out.maps, batch.saliency, batch.fixations, weights, &terms);
      if (!std::isfinite(terms.total)) {
        throw DivergenceError("non-finite loss at step " + std::to_string(step) + " (epoch " + std::to_string(epoch) +
                              ", domain " + domain.name + ", kld " + fmt(terms.kld) + ")");
      }
      model.store().zero_grad();
      backward(loss);

      const double factor = domain.is_static() ? policy.static_domain_lr_factor : 1.0;
      for (std::size_t i = 0; i < params.size(); ++i) scales[i] = (is_encoder[i] ? group.encoder : group.other) * factor;
      sgd_step(params, scales, opt);

      StepRecord s{step, epoch, domain.name, terms.total, terms.kld, rec.lr * group.encoder * factor,
                   rec.lr * group.other * factor};
      report.steps.push_back(s);
      if (hooks.on_step) hooks.on_step(s);
      auto& acc = train_sum[domain.name];
      acc.first += terms.total;
      acc.second += 1;
      ++step;
    }
    model.store().zero_grad();

    for (const auto& [name, acc] : train_sum) rec.train_loss[name] = acc.first / static_cast<double>(acc.second);
    double monitor_sum = 0.0;
    std::size_t monitor_n = 0;
    for (const auto& d : data) {
      if (!d.validation) continue;
      const std::string& name = d.validation->domain().name;
      const double v = validation_loss(model, *d.validation, weights, policy.clip_length, policy.target_fps).total;
      rec.val_loss[name] = v;
      if (policy.early_stop_domain.empty() || policy.early_stop_domain == name) {
        monitor_sum += v;
        ++monitor_n;
      }
    }
    if (monitor_n == 0) {
      // No validation data for the monitored domain: fall back to training loss.
      for (const auto& [name, v] : rec.train_loss) {
        if (policy.early_stop_domain.empty() || policy.early_stop_domain == name) {
          monitor_sum += v;
          ++monitor_n;
        }
      }
    }
    rec.monitor = monitor_n ? monitor_sum / static_cast<double>(monitor_n) : 0.0;
    report.epochs.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);

    if (rec.monitor < report.best_monitor) {
      report.best_monitor = rec.monitor;
      report.best_epoch = epoch;
      if (policy.restore_best) best_values = snapshot(model.store());
      since_best = 0;
    } else if (++since_best >= policy.patience && policy.patience > 0) {
      report.stopped_early = true;
      break;
    }
  }
  if (policy.restore_best && !best_values.empty()) restore(model.store(), best_values);
  return report;
}

// ---- evaluation ------------------------------------------------------------------

const std::vector<std::pair<std::string, Metric>>& metric_names() {
  static const std::vector<std::pair<std::string, Metric>> names{
      {"auc_j", Metric::AucJ}, {"s_auc", Metric::SAuc}, {"sim", Metric::Sim}, {"cc", Metric::Cc},
      {"nss", Metric::Nss},    {"kld", Metric::Kld},    {"ig", Metric::Ig}};
  return names;
}

std::string metric_name(Metric m) {
  for (const auto& [name, metric] : metric_names()) {
    if (metric == m) return name;
  }
  return "?";
}

std::vector<Metric> parse_metrics(const std::string& list) {
  std::vector<Metric> out;
  for (const auto& raw : split(list, ',')) {
    const std::string name = trim(raw);
    if (name.empty()) continue;
    if (name == "all") {
      for (const auto& [n, m] : metric_names()) out.push_back(m);
      continue;
    }
    auto it = std::find_if(metric_names().begin(), metric_names().end(), [&](const auto& p) { return p.first == name; });
    if (it == metric_names().end()) {
      std::string valid;
      for (const auto& [n, m] : metric_names()) valid += (valid.empty() ? "" : ", ") + n;
      throw ConfigError("unknown metric '" + name + "'; valid names: " + valid + ", all");
    }
    out.push_back(it->second);
  }
  if (out.empty()) throw ConfigError("no metrics selected");
  return out;
}

std::string EvaluationResult::to_table() const {
  std::ostringstream out;
  out << std::left << std::setw(8) << "metric" << std::setw(14) << "mean" << std::setw(8) << "scored"
      << "failures\n";
  for (std::size_t m = 0; m < metrics.size(); ++m) {
    out << std::left << std::setw(8) << metric_name(metrics[m]) << std::setw(14) << fmt(summary[m].mean)
        << std::setw(8) << summary[m].scored << summary[m].failures << "\n";
  }
  return out.str();
}

EvaluationResult evaluate_predictions(const std::vector<std::vector<SaliencyMap>>& predictions,
                                      const std::vector<std::vector<SaliencyMap>>& gt,
                                      const std::vector<std::vector<FixationMap>>& fixations,
                                      const std::vector<std::string>& sample_ids, const std::vector<Metric>& metrics,
                                      std::uint64_t seed) {
  const std::size_t n = predictions.size();
  if (gt.size() != n || fixations.size() != n || sample_ids.size() != n) {
    throw DimensionError("evaluation inputs differ in sample count");
  }
  EvaluationResult r;
  r.metrics = metrics;
  r.sample_ids = sample_ids;
  r.scores.assign(n, std::vector<double>(metrics.size(), std::numeric_limits<double>::quiet_NaN()));
  r.summary.assign(metrics.size(), {});

  // IG baseline: mean normalized ground truth over the dataset.
  SaliencyMap baseline;
  bool have_baseline = false;
  for (const auto& frames : gt) {
    for (const auto& g : frames) {
      double s = std::accumulate(g.values.begin(), g.values.end(), 0.0);
      if (!(s > 0.0)) continue;
      if (!have_baseline) {
        baseline = SaliencyMap(g.height, g.width);
        have_baseline = true;
      }
      if (g.height != baseline.height || g.width != baseline.width) continue;
      for (std::size_t i = 0; i < g.size(); ++i) baseline.values[i] += g.values[i] / s;
    }
  }

  for (std::size_t s = 0; s < n; ++s) {
    if (predictions[s].size() != gt[s].size() || predictions[s].size() != fixations[s].size()) {
      throw DimensionError("sample " + sample_ids[s] + ": frame counts differ");
    }
    std::vector<FixationMap> others;
    const bool need_others = std::find(metrics.begin(), metrics.end(), Metric::SAuc) != metrics.end();
    if (need_others) {
      for (std::size_t o = 0; o < n; ++o) {
        if (o == s) continue;
        for (const auto& f : fixations[o]) others.push_back(f);
      }
    }
    for (std::size_t m = 0; m < metrics.size(); ++m) {
      double sum = 0.0;
      bool failed = false;
      for (std::size_t f = 0; f < predictions[s].size() && !failed; ++f) {
        const auto& p = predictions[s][f];
        const auto& g = gt[s][f];
        const auto& fx = fixations[s][f];
        try {
          switch (metrics[m]) {
            case Metric::AucJ: sum += auc_judd(p, fx); break;
            case Metric::SAuc: sum += s_auc(p, fx, others, 10, hash_combine(seed, s * 1000003 + f)); break;
            case Metric::Sim: sum += sim(p, g); break;
            case Metric::Cc: sum += cc(p, g); break;
            case Metric::Nss: sum += nss(p, fx); break;
            case Metric::Kld: sum += kld(g, p); break;
            case Metric::Ig:
              if (!have_baseline) throw InputError("no baseline for information gain");
              sum += info_gain(p, fx, baseline);
              break;
          }
        } catch (const InputError&) {
          failed = true;
        } catch (const DimensionError&) {
          failed = true;
        }
      }
      if (failed || predictions[s].empty()) {
        ++r.summary[m].failures;
      } else {
        r.scores[s][m] = sum / static_cast<double>(predictions[s].size());
        r.summary[m].mean += r.scores[s][m];
        ++r.summary[m].scored;
      }
    }
  }
  for (auto& sm : r.summary) {
    sm.mean = sm.scored ? sm.mean / static_cast<double>(sm.scored) : std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

EvaluationResult evaluate(const UnisalModel& model, const Dataset& dataset, const std::vector<Metric>& metrics,
                          std::uint64_t seed, std::size_t target_fps) {
  const ForwardContext ctx{false, seed, 0};
  const std::size_t n = dataset.size();
  std::vector<std::vector<SaliencyMap>> preds(n), gts(n);
  std::vector<std::vector<FixationMap>> fixes(n);
  std::vector<std::string> ids(n);
  const Resolution res = dataset.domain().input_resolution;
  parallel_for(n, [&](std::size_t i) {
    const BatchData batch =
        dataset.domain().is_static()
            ? assemble_batch(dataset, {dataset.domain(), {i}})
            : assemble_batch(dataset, {dataset.domain(), {0}},
                             {Clip{i, assimilation_indices(dataset.frame_count(i), dataset.domain().native_fps,
                                                           target_fps)}});
    BypassCGRUState state;
    const SaliencyOutput out = model.forward(batch.frames, dataset.domain(), ctx, state);
    for (std::size_t t = 0; t < out.frames(); ++t) {
      preds[i].emplace_back(res.height, res.width, out.frame(t, 0));
      gts[i].push_back(batch.saliency[t][0]);
      fixes[i].push_back(batch.fixations[t][0]);
    }
    ids[i] = dataset.sample_id(i);
  });
  return evaluate_predictions(preds, gts, fixes, ids, metrics, seed);
}

}  // namespace unisal

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "unisal/data.hpp"
#include "unisal/metrics.hpp"
#include "unisal/model.hpp"

namespace unisal {

struct LossWeights {
  double cc = 0.1;
  double nss = 0.1;
};

/// Loss terms of one batch, averaged over frames.
struct LossBreakdown {
  double total = 0.0;
  double kld = 0.0;
  double cc = 0.0;
  double nss = 0.0;
};

/// KLD(gt || pred) - w.cc CC(pred, gt) - w.nss NSS(pred, fix), averaged over
/// the T x N frames of `maps` (T x N x 1 x H x W). Targets are indexed
/// [t][n]. Differentiable in `maps`; `terms` receives the frame averages.
Tensor saliency_loss(const Tensor& maps, const std::vector<std::vector<SaliencyMap>>& gt,
                     const std::vector<std::vector<FixationMap>>& fix, const LossWeights& weights,
                     LossBreakdown* terms = nullptr);

struct OptimizerState {
  double base_lr = 0.04;
  std::size_t epoch = 0;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double clip_bound = 2.0;
  double decay_factor = 0.8;
  /// Keyed by tensor identity.
  std::unordered_map<const void*, std::vector<double>> velocity;

  /// base_lr * decay_factor^epoch.
  double epoch_lr() const;
};

/// Per element: clamp the gradient to the clip bound, add weight decay,
/// update the velocity, step by epoch_lr * scale. Parameters without a
/// gradient or with scale 0 are left untouched, velocity included.
void sgd_step(std::span<const Tensor> params, std::span<const double> scales, OptimizerState& state);

struct TrainPolicy {
  std::size_t total_epochs = 16;
  std::size_t encoder_freeze_epochs = 2;
  double encoder_lr_divisor = 10.0;
  double static_domain_lr_factor = 0.5;
  /// Domain whose validation loss drives early stopping; empty uses the
  /// mean over every domain with validation data.
  std::string early_stop_domain;
  std::size_t patience = 3;
  /// Optimizer steps per epoch; 0 means one pass over the data.
  std::size_t steps_per_epoch = 0;
  /// Hard cap on optimizer steps; 0 means no cap.
  std::size_t max_steps = 0;
  std::size_t clip_length = kClipLength;
  std::size_t target_fps = kTargetFps;
  /// Per-domain batch size overrides; others use the default.
  std::map<std::string, std::size_t> batch_sizes;
  /// Restore the parameters of the best epoch when training ends.
  bool restore_best = true;
  double base_lr = 0.04;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double clip_bound = 2.0;
  double decay_factor = 0.8;

  void to_key_values(KeyValues& kv, const std::string& prefix = "train.") const;
  static TrainPolicy from_key_values(const KeyValues& kv, const std::string& prefix = "train.");
};

/// Learning-rate multipliers by parameter group.
struct LrScales {
  double encoder = 1.0;
  double other = 1.0;
};

/// Encoder scale 0 while frozen, 1 / divisor afterwards; others 1.
LrScales apply_freeze_policy(const TrainPolicy& policy, std::size_t epoch);

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::string domain;
  double loss = 0.0;
  double kld = 0.0;
  double lr_encoder = 0.0;
  double lr_other = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  std::map<std::string, double> train_loss;
  std::map<std::string, double> val_loss;
  double monitor = 0.0;
};

struct TrainingReport {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_monitor = 0.0;
  bool stopped_early = false;

  /// One `key=value` line per step and per epoch.
  std::string to_text() const;
};

/// Training and optional validation data of one domain.
struct DomainData {
  const Dataset* train = nullptr;
  const Dataset* validation = nullptr;
};

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EpochRecord&)> on_epoch;
  LogSink warn;
};

TrainingReport train(UnisalModel& model, const std::vector<DomainData>& data, const TrainPolicy& policy,
                     const LossWeights& weights, std::uint64_t seed, const TrainHooks& hooks = {});

/// Mean loss on a dataset in evaluation mode. Dynamic samples use the first
/// clip_length assimilated frames.
LossBreakdown validation_loss(const UnisalModel& model, const Dataset& dataset, const LossWeights& weights,
                              std::size_t clip_length = kClipLength, std::size_t target_fps = kTargetFps);

enum class Metric { AucJ, SAuc, Sim, Cc, Nss, Kld, Ig };

const std::vector<std::pair<std::string, Metric>>& metric_names();
/// Parses "auc_j,cc,..."; ConfigError listing the valid names otherwise.
std::vector<Metric> parse_metrics(const std::string& list);
std::string metric_name(Metric m);

struct MetricSummary {
  double mean = 0.0;
  std::size_t scored = 0;
  std::size_t failures = 0;
};

struct EvaluationResult {
  std::vector<Metric> metrics;
  std::vector<std::string> sample_ids;
  /// scores[sample][metric]; NaN where the metric failed for that sample.
  std::vector<std::vector<double>> scores;
  std::vector<MetricSummary> summary;

  std::string to_table() const;
};

/// Predicts every sample in evaluation mode (all frames of videos, scored
/// at the assimilated frames) and scores the selected metrics per frame;
/// per-sample values are frame means. s-AUC draws negatives from the other
/// samples' fixations. IG uses the dataset's mean ground truth as baseline.
EvaluationResult evaluate(const UnisalModel& model, const Dataset& dataset, const std::vector<Metric>& metrics,
                          std::uint64_t seed, std::size_t target_fps = kTargetFps);

/// Scores precomputed predictions (one map per frame of each sample).
EvaluationResult evaluate_predictions(const std::vector<std::vector<SaliencyMap>>& predictions,
                                      const std::vector<std::vector<SaliencyMap>>& gt,
                                      const std::vector<std::vector<FixationMap>>& fixations,
                                      const std::vector<std::string>& sample_ids, const std::vector<Metric>& metrics,
                                      std::uint64_t seed);

}  // namespace unisal

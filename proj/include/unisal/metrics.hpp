#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "unisal/domain.hpp"

namespace unisal {

/// Non-negative real grid, row-major.
struct SaliencyMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  SaliencyMap() = default;
  SaliencyMap(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), values(h * w, fill) {}
  SaliencyMap(std::size_t h, std::size_t w, std::vector<double> v);

  double& operator()(std::size_t r, std::size_t c) { return values[r * width + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * width + c]; }
  std::size_t size() const { return values.size(); }
};

/// Binary grid of fixated pixels.
struct FixationMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> mask;

  FixationMap() = default;
  FixationMap(std::size_t h, std::size_t w) : height(h), width(w), mask(h * w, 0) {}
  static FixationMap from_points(std::size_t h, std::size_t w,
                                 const std::vector<std::pair<std::size_t, std::size_t>>& points);

  bool operator()(std::size_t r, std::size_t c) const { return mask[r * width + c] != 0; }
  void set(std::size_t r, std::size_t c) { mask[r * width + c] = 1; }
  std::size_t count() const;
  /// Flat indices of fixated pixels in row-major order.
  std::vector<std::size_t> indices() const;
};

enum class AucThresholds {
  /// Every distinct saliency value is a threshold (full ROC; equals the
  /// Mann-Whitney statistic with ties counted one half).
  AllValues,
  /// Only the saliency values at fixated pixels are thresholds.
  FixationValues,
};

/// AUC with fixated pixels as positives and all other pixels as negatives.
double auc_judd(const SaliencyMap& pred, const FixationMap& fix,
                AucThresholds thresholds = AucThresholds::AllValues);

/// Area under the ROC of two score samples, ties counted one half.
double rank_auc(std::span<const double> positives, std::span<const double> negatives);

/// Shuffled AUC: negatives are the prediction's values at fixation
/// locations of other samples, drawn without replacement (as many as there
/// are positives, when the pool allows), averaged over `n_splits`.
double s_auc(const SaliencyMap& pred, const FixationMap& fix,
             const std::vector<FixationMap>& other_fixations, std::size_t n_splits = 10,
             std::uint64_t seed = 0);

/// Histogram intersection of the two maps normalized to unit sum.
double sim(const SaliencyMap& pred, const SaliencyMap& gt);

/// Pearson correlation over all pixels.
double cc(const SaliencyMap& pred, const SaliencyMap& gt);

/// Mean z-scored prediction (population std) at fixated pixels; 0 when the
/// prediction is constant.
double nss(const SaliencyMap& pred, const FixationMap& fix);

inline constexpr double kMetricEps = 1e-7;

enum class KldDirection {
  /// sum q log(q / (p + eps)) with q the ground truth.
  GroundTruthToPrediction,
  /// sum p log(p / (q + eps)).
  PredictionToGroundTruth,
};

/// KL divergence in nats between the normalized maps.
double kld(const SaliencyMap& gt, const SaliencyMap& pred, double eps = kMetricEps,
           KldDirection direction = KldDirection::GroundTruthToPrediction);

/// Mean over fixations of log2(p + eps) - log2(b + eps) for the normalized
/// prediction p and baseline b, in bits.
double info_gain(const SaliencyMap& pred, const FixationMap& fix, const SaliencyMap& baseline,
                 double eps = kMetricEps);

/// Maximum gradient magnitude (unit-spacing central differences, edges
/// replicated) after bilinear resizing to `target`.
double sharpness(const SaliencyMap& gt, Resolution target);

/// Bilinear (half-pixel) resize of a map.
SaliencyMap resize_map(const SaliencyMap& map, Resolution target);

}  // namespace unisal

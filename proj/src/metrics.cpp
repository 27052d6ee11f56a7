#include "unisal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "unisal/errors.hpp"
#include "unisal/ops.hpp"
#include "unisal/rng.hpp"

namespace unisal {

namespace {

void require_same_size(std::size_t h1, std::size_t w1, std::size_t h2, std::size_t w2,
                       const char* what) {
  if (h1 != h2 || w1 != w2) {
    throw DimensionError(std::string(what) + ": map sizes differ (" + std::to_string(h1) + "x" +
                         std::to_string(w1) + " vs " + std::to_string(h2) + "x" +
                         std::to_string(w2) + ")");
  }
}

void require_fixations(const FixationMap& fix, const char* what) {
  if (fix.count() == 0) throw InputError(std::string(what) + ": no fixations");
}

std::vector<double> normalized(const SaliencyMap& m, const char* what) {
  double total = 0.0;
  for (double v : m.values) {
    if (!std::isfinite(v)) throw InputError(std::string(what) + ": map has non-finite values");
    total += v;
  }
  if (!(total > 0.0)) throw InputError(std::string(what) + ": map has zero sum");
  std::vector<double> out(m.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = m.values[i] / total;
  return out;
}

struct Moments {
  double mean = 0.0;
  double std = 0.0;  // population
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(var / static_cast<double>(v.size()));
  return m;
}

double trapezoid(const std::vector<std::pair<double, double>>& curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].first - curve[i - 1].first) * (curve[i].second + curve[i - 1].second) / 2.0;
  }
  return area;
}

}  // namespace

SaliencyMap::SaliencyMap(std::size_t h, std::size_t w, std::vector<double> v)
    : height(h), width(w), values(std::move(v)) {
  if (values.size() != h * w) throw DimensionError("saliency map: value count does not match size");
}

FixationMap FixationMap::from_points(std::size_t h, std::size_t w,
                                     const std::vector<std::pair<std::size_t, std::size_t>>& points) {
  FixationMap f(h, w);
  for (auto [r, c] : points) {
    if (r >= h || c >= w) throw DimensionError("fixation outside the map");
    f.set(r, c);
  }
  return f;
}

std::size_t FixationMap::count() const {
  return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](auto v) { return v != 0; }));
}

std::vector<std::size_t> FixationMap::indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) out.push_back(i);
  }
  return out;
}

double auc_judd(const SaliencyMap& pred, const FixationMap& fix, AucThresholds thresholds) {
  require_same_size(pred.height, pred.width, fix.height, fix.width, "auc_judd");
  require_fixations(fix, "auc_judd");
  const std::size_t n_pos = fix.count();
  const std::size_t n_neg = pred.size() - n_pos;
  if (n_neg == 0) throw InputError("auc_judd: every pixel is fixated");

  std::vector<std::pair<double, double>> curve{{0.0, 0.0}};
  if (thresholds == AucThresholds::AllValues) {
    std::vector<std::size_t> order(pred.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return pred.values[a] > pred.values[b]; });
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size();) {
      const double tau = pred.values[order[i]];
      while (i < order.size() && pred.values[order[i]] == tau) {
        if (fix.mask[order[i]]) ++tp; else ++fp;
        ++i;
      }
      curve.emplace_back(static_cast<double>(fp) / static_cast<double>(n_neg),
                         static_cast<double>(tp) / static_cast<double>(n_pos));
    }
  } else {
    std::vector<double> fix_values, neg_values;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      (fix.mask[i] ? fix_values : neg_values).push_back(pred.values[i]);
    }
    std::sort(fix_values.begin(), fix_values.end(), std::greater<>());
    std::sort(neg_values.begin(), neg_values.end(), std::greater<>());
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < fix_values.size();) {
      const double tau = fix_values[i];
      while (i < fix_values.size() && fix_values[i] >= tau) ++i;
      tp = i;
      while (fp < neg_values.size() && neg_values[fp] >= tau) ++fp;
      curve.emplace_back(static_cast<double>(fp) / static_cast<double>(n_neg),
                         static_cast<double>(tp) / static_cast<double>(n_pos));
    }
  }
  curve.emplace_back(1.0, 1.0);
  return trapezoid(curve);
}

double rank_auc(std::span<const double> positives, std::span<const double> negatives) {
  if (positives.empty() || negatives.empty()) throw InputError("rank_auc: empty sample");
  // Sort negatives once, then count smaller and equal negatives per positive.
  std::vector<double> neg(negatives.begin(), negatives.end());
  std::sort(neg.begin(), neg.end());
  double credit = 0.0;
  for (double p : positives) {
    const auto lo = std::lower_bound(neg.begin(), neg.end(), p);
    const auto hi = std::upper_bound(neg.begin(), neg.end(), p);
    credit += static_cast<double>(lo - neg.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return credit / (static_cast<double>(positives.size()) * static_cast<double>(neg.size()));
}

double s_auc(const SaliencyMap& pred, const FixationMap& fix,
             const std::vector<FixationMap>& other_fixations, std::size_t n_splits,
             std::uint64_t seed) {
  require_same_size(pred.height, pred.width, fix.height, fix.width, "s_auc");
  require_fixations(fix, "s_auc");
  if (n_splits == 0) throw InputError("s_auc: need at least one split");
  std::vector<std::size_t> pool;
  for (const auto& other : other_fixations) {
    require_same_size(pred.height, pred.width, other.height, other.width, "s_auc");
    for (std::size_t i : other.indices()) pool.push_back(i);
  }
  if (pool.empty()) throw InputError("s_auc: empty negative pool");

  std::vector<double> positives;
  for (std::size_t i : fix.indices()) positives.push_back(pred.values[i]);
  const std::size_t n_neg = std::min(positives.size(), pool.size());

  CounterRng rng(seed, 0x73617563ULL);
  double total = 0.0;
  std::vector<double> negatives(n_neg);
  for (std::size_t split = 0; split < n_splits; ++split) {
    // Partial Fisher-Yates: the first n_neg entries become the sample.
    for (std::size_t k = 0; k < n_neg; ++k) {
      const auto j = k + static_cast<std::size_t>(rng.below(pool.size() - k));
      std::swap(pool[k], pool[j]);
      negatives[k] = pred.values[pool[k]];
    }
    total += rank_auc(positives, negatives);
  }
  return total / static_cast<double>(n_splits);
}

double sim(const SaliencyMap& pred, const SaliencyMap& gt) {
  require_same_size(pred.height, pred.width, gt.height, gt.width, "sim");
  const auto p = normalized(pred, "sim");
  const auto q = normalized(gt, "sim");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::min(p[i], q[i]);
  return s;
}

double cc(const SaliencyMap& pred, const SaliencyMap& gt) {
  require_same_size(pred.height, pred.width, gt.height, gt.width, "cc");
  const auto mp = moments(pred.values);
  const auto mg = moments(gt.values);
  if (mp.std == 0.0 || mg.std == 0.0) throw InputError("cc: map has zero variance");
  double cov = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    cov += (pred.values[i] - mp.mean) * (gt.values[i] - mg.mean);
  }
  cov /= static_cast<double>(pred.size());
  return std::clamp(cov / (mp.std * mg.std), -1.0, 1.0);
}

double nss(const SaliencyMap& pred, const FixationMap& fix) {
  require_same_size(pred.height, pred.width, fix.height, fix.width, "nss");
  require_fixations(fix, "nss");
  const auto m = moments(pred.values);
  if (m.std == 0.0) return 0.0;
  double s = 0.0;
  const auto idx = fix.indices();
  for (std::size_t i : idx) s += (pred.values[i] - m.mean) / m.std;
  return s / static_cast<double>(idx.size());
}

double kld(const SaliencyMap& gt, const SaliencyMap& pred, double eps, KldDirection direction) {
  require_same_size(pred.height, pred.width, gt.height, gt.width, "kld");
  auto q = normalized(gt, "kld");
  auto p = normalized(pred, "kld");
  if (direction == KldDirection::PredictionToGroundTruth) std::swap(p, q);
  double s = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q[i] > 0.0) s += q[i] * std::log(q[i] / (p[i] + eps));
  }
  return s;
}

double info_gain(const SaliencyMap& pred, const FixationMap& fix, const SaliencyMap& baseline,
                 double eps) {
  require_same_size(pred.height, pred.width, fix.height, fix.width, "info_gain");
  require_same_size(pred.height, pred.width, baseline.height, baseline.width, "info_gain");
  require_fixations(fix, "info_gain");
  const auto p = normalized(pred, "info_gain");
  const auto b = normalized(baseline, "info_gain");
  double s = 0.0;
  const auto idx = fix.indices();
  for (std::size_t i : idx) s += std::log2(p[i] + eps) - std::log2(b[i] + eps);
  return s / static_cast<double>(idx.size());
}

SaliencyMap resize_map(const SaliencyMap& map, Resolution target) {
  if (map.height == target.height && map.width == target.width) return map;
  NoGradGuard no_grad;
  const Tensor t = Tensor::from({1, 1, map.height, map.width}, map.values);
  const Tensor r = resize(t, target.height, target.width, Interpolation::Bilinear);
  return SaliencyMap(target.height, target.width, {r.data().begin(), r.data().end()});
}

double sharpness(const SaliencyMap& gt, Resolution target) {
  const SaliencyMap m = resize_map(gt, target);
  const std::size_t h = m.height, w = m.width;
  double best = 0.0;
  for (std::size_t r = 0; r < h; ++r) {
    const std::size_t up = r == 0 ? 0 : r - 1;
    const std::size_t down = r + 1 < h ? r + 1 : h - 1;
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t left = c == 0 ? 0 : c - 1;
      const std::size_t right = c + 1 < w ? c + 1 : w - 1;
      const double gx = (m(r, right) - m(r, left)) / 2.0;
      const double gy = (m(down, c) - m(up, c)) / 2.0;
      best = std::max(best, std::sqrt(gx * gx + gy * gy));
    }
  }
  return best;
}

}  // namespace unisal

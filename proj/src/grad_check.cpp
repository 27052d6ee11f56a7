#include "unisal/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "unisal/rng.hpp"

namespace unisal {

double GradCheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& r : inputs) worst = std::max(worst, r.max_rel_error);
  return worst;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const ScalarGraph& graph, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options) {
  std::vector<Tensor> args = inputs;
  for (auto& t : args) t.zero_grad();
  backward(graph(args));

  GradCheckReport report;
  CounterRng rng(options.seed, 0x67726164ULL);
  for (std::size_t k = 0; k < args.size(); ++k) {
    Tensor& x = args[k];
    if (!x.requires_grad()) continue;
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

    std::vector<std::size_t> coords(x.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coordinates > 0 && options.max_coordinates < coords.size()) {
      rng.shuffle(coords);
      coords.resize(options.max_coordinates);
      std::sort(coords.begin(), coords.end());
    }

    InputGradCheck result;
    result.input = k;
    NoGradGuard no_grad;
    auto values = x.mutable_data();
    for (std::size_t i : coords) {
      const double original = values[i];
      // Divide by the step actually represented, not the nominal one.
      const double hi = original + options.step, lo = original - options.step;
      values[i] = hi;
      const double plus = graph(args).item();
      values[i] = lo;
      const double minus = graph(args).item();
      values[i] = original;
      const double numeric = (plus - minus) / (hi - lo);
      result.max_rel_error = std::max(
          result.max_rel_error, relative_error(analytic[i], numeric, options.denominator_floor));
      result.max_abs_error = std::max(result.max_abs_error, std::abs(analytic[i] - numeric));
      ++result.coordinates;
    }
    report.inputs.push_back(result);
  }
  return report;
}

}  // namespace unisal

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "unisal/tensor.hpp"

namespace unisal {

struct GradCheckOptions {
  double step = 1e-5;
  /// Coordinates checked per input; 0 checks all of them.
  std::size_t max_coordinates = 0;
  std::uint64_t seed = 0;
  /// Lower bound on the relative-error denominator so that gradients that
  /// are zero up to rounding do not produce spurious failures.
  double denominator_floor = 1e-7;
};

struct InputGradCheck {
  std::size_t input = 0;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<InputGradCheck> inputs;
  double max_rel_error() const;
  bool passed(double tolerance) const { return max_rel_error() < tolerance; }
};

using ScalarGraph = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares reverse-mode gradients of a scalar graph with central finite
/// differences. Each input must be a leaf; inputs that do not require a
/// gradient are skipped. Failures are reported, never thrown.
GradCheckReport grad_check(const ScalarGraph& graph, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options = {});

double relative_error(double analytic, double numeric, double floor);

}  // namespace unisal

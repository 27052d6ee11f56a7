#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unisal/model.hpp"

namespace unisal {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Central-difference checks of every differentiable op (tolerance 1e-4)
/// and an end-to-end spot check of a 0.125-width model (tolerance 1e-3).
std::vector<CheckResult> verify_gradcheck(std::uint64_t seed = 0);

/// Structural invariants: static bypass, normalized outputs, exact prior
/// rendering, determinism and checkpoint round trip.
std::vector<CheckResult> verify_invariants(std::uint64_t seed = 0);

/// Metric values against independent reference computations.
std::vector<CheckResult> verify_metrics_oracle(std::uint64_t seed = 0);

/// Runs "gradcheck", "invariants", "metrics-oracle" or "all"; ConfigError
/// for other names.
std::vector<CheckResult> run_verify_suite(const std::string& suite, std::uint64_t seed = 0);

const std::vector<std::string>& verify_suite_names();

/// Largest relative error over `samples` random parameter coordinates of
/// the training-mode loss on the given domain (T x N x 3 x H x W random
/// input). Coordinates within one step of a ReLU6 kink are redrawn and
/// counted in `redrawn`.
double model_gradient_spot_check(UnisalModel& model, const DomainId& domain, std::size_t frames, std::size_t batch,
                                 std::size_t samples, std::uint64_t seed, std::size_t* redrawn = nullptr);

}  // namespace unisal

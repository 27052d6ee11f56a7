#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unisal/domain.hpp"
#include "unisal/layers.hpp"
#include "unisal/params.hpp"

namespace unisal {

/// Domain-adaptive batch normalization: normalizes with the statistics and
/// affine parameters private to `domain`; only that domain's running
/// statistics move.
Tensor dabn_forward(const BatchNorm& dabn, const Tensor& input, const DomainId& domain,
                    bool training);

/// Fixed amplitude of the prior maps, matching the ReLU6 range of the
/// features they are concatenated with.
inline constexpr double kPriorScale = 6.0;

/// Unconstrained parametrization of one Gaussian prior map in normalized
/// image coordinates. The standard deviations are exp(log_sigma_*).
struct GaussianPrior {
  double mu_x = 0.5;
  double mu_y = 0.5;
  double log_sigma_x = 0.0;
  double log_sigma_y = 0.0;
};

/// Deterministic prior initialization: one wide centered map, a 3x3 grid of
/// medium maps, three horizontal and three vertical bands. Maps beyond the
/// first 16 are drawn from `seed`.
std::vector<GaussianPrior> init_priors(std::size_t n_maps = 16, std::uint64_t seed = 0);

/// Renders 1 x N_G x h x w maps
///   g(x, y) = 6 exp(-(x - mu_x)^2 / sigma_x^2 - (y - mu_y)^2 / sigma_y^2)
/// on pixel centers x = (j + 0.5) / w, y = (i + 0.5) / h.
/// `means` and `log_sigmas` are N_G x 2 tensors holding (x, y) pairs.
Tensor render_priors(const Tensor& means, const Tensor& log_sigmas, std::size_t height,
                     std::size_t width);

/// Per-domain learned Gaussian prior maps.
class GaussianPriorBank {
 public:
  GaussianPriorBank() = default;
  GaussianPriorBank(ParameterStore& store, const std::string& name, std::size_t n_maps,
                    DomainScope scope, std::uint64_t seed);

  Tensor render(const DomainId& domain, std::size_t height, std::size_t width) const;
  std::size_t size() const { return n_maps_; }
  const Tensor& means(std::size_t slot) const { return means_.at(slot); }
  const Tensor& log_sigmas(std::size_t slot) const { return log_sigmas_.at(slot); }

 private:
  DomainScope scope_ = DomainScope::shared();
  std::size_t n_maps_ = 0;
  std::vector<Tensor> means_, log_sigmas_;
};

/// Per-domain 1x1 convolution reducing the decoder features to one map.
class DomainAdaptiveFusion {
 public:
  DomainAdaptiveFusion() = default;
  DomainAdaptiveFusion(ParameterStore& store, const std::string& name, std::size_t channels,
                       DomainScope scope, std::uint64_t seed);

  Tensor forward(const Tensor& input, const DomainId& domain) const;
  std::size_t channels() const { return channels_; }
  const Tensor& weight(std::size_t slot) const { return weight_.at(slot); }
  const Tensor& bias(std::size_t slot) const { return bias_.at(slot); }

 private:
  DomainScope scope_ = DomainScope::shared();
  std::size_t channels_ = 0;
  std::vector<Tensor> weight_, bias_;
};

/// Unit-mass square Gaussian kernel, 1 x 1 x size x size.
Tensor gaussian_kernel(std::size_t size, double sigma);

/// Per-domain same-size convolution with a large square kernel.
class DomainAdaptiveSmoothing {
 public:
  DomainAdaptiveSmoothing() = default;
  DomainAdaptiveSmoothing(ParameterStore& store, const std::string& name,
                          std::size_t kernel_size, double init_sigma, DomainScope scope);

  Tensor forward(const Tensor& input, const DomainId& domain) const;
  std::size_t kernel_size() const { return size_; }
  const Tensor& kernel(std::size_t slot) const { return kernel_.at(slot); }

 private:
  DomainScope scope_ = DomainScope::shared();
  std::size_t size_ = 0;
  std::vector<Tensor> kernel_;
};

/// Recurrent state threaded through one clip.
struct BypassCGRUState {
  Tensor hidden;
  /// Recurrent dropout mask drawn once per clip (training only).
  Tensor dropout_mask;
  std::size_t steps = 0;
};

/// Convolutional GRU whose gate and candidate convolutions are depthwise
/// 3x3 followed by pointwise convolutions over [x, h]:
///   z, r = sigmoid(PW(DW([x, h])))
///   c    = tanh(PW(DW([x, r * drop(h)])))
///   h'   = (1 - z) * h + z * c
class ConvGRUCell {
 public:
  ConvGRUCell() = default;
  ConvGRUCell(ParameterStore& store, const std::string& name, std::size_t in_channels,
              std::size_t hidden_channels, double recurrent_dropout, std::uint64_t seed);

  Tensor step(const Tensor& x, BypassCGRUState& state, const ForwardContext& ctx) const;

  std::size_t hidden_channels() const { return hidden_; }
  std::vector<Tensor> parameters() const;

  const Conv2d& gate_depthwise() const { return gate_dw_; }
  const Conv2d& update_pointwise() const { return update_pw_; }
  const Conv2d& reset_pointwise() const { return reset_pw_; }
  const Conv2d& candidate_depthwise() const { return cand_dw_; }
  const Conv2d& candidate_pointwise() const { return cand_pw_; }

 private:
  std::size_t in_ = 0, hidden_ = 0;
  double dropout_ = 0.0;
  std::uint64_t layer_key_ = 0;
  Conv2d gate_dw_, update_pw_, reset_pw_, cand_dw_, cand_pw_;
};

/// cGRU plus pointwise projection added residually to the input features.
/// For static domains the recurrent subgraph is never executed and the input
/// is returned unchanged.
class BypassRNN {
 public:
  BypassRNN() = default;
  BypassRNN(ParameterStore& store, const std::string& name, std::size_t channels,
            std::size_t hidden_channels, double recurrent_dropout, std::uint64_t seed);

  /// `features` is T x N x C x h x w.
  Tensor forward(const Tensor& features, const DomainId& domain, BypassCGRUState& state,
                 const ForwardContext& ctx) const;

  const ConvGRUCell& cell() const { return cell_; }
  const Conv2d& projection() const { return post_; }
  std::vector<Tensor> parameters() const;

 private:
  ConvGRUCell cell_;
  Conv2d post_;
};

}  // namespace unisal

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unisal/domain.hpp"
#include "unisal/ops.hpp"
#include "unisal/params.hpp"

namespace unisal {

/// Per-forward settings shared by every layer.
struct ForwardContext {
  bool training = false;
  std::uint64_t seed = 0;
  /// Optimizer step; keys dropout masks together with the seed.
  std::uint64_t step = 0;
  /// The batch holds still images: the recurrent block is bypassed under
  /// any domain, as for static domains.
  bool static_input = false;
};

/// Convolution weights (shared) with an optional bias.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
         std::size_t kernel, std::size_t stride, std::size_t groups, bool bias, bool encoder,
         std::uint64_t seed);

  Tensor forward(const Tensor& x) const;
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }
  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }

 private:
  Tensor weight_;
  Tensor bias_;
  std::size_t in_ = 0, out_ = 0, stride_ = 1, padding_ = 0, groups_ = 1;
};

/// Batch normalization with one parameter/statistics set per scope slot.
/// With a multi-slot scope this is domain-adaptive batch normalization.
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(ParameterStore& store, const std::string& name, std::size_t channels,
            DomainScope scope, bool encoder, double momentum);

  /// `frozen_stats` normalizes with the running statistics and leaves them
  /// untouched even in training mode.
  Tensor forward(const Tensor& x, const DomainId& domain, bool training,
                 bool frozen_stats = false) const;

  const DomainScope& scope() const { return scope_; }
  const Tensor& gamma(std::size_t slot) const { return gamma_.at(slot); }
  const Tensor& beta(std::size_t slot) const { return beta_.at(slot); }
  const Tensor& running_mean(std::size_t slot) const { return mean_.at(slot); }
  const Tensor& running_var(std::size_t slot) const { return var_.at(slot); }

 private:
  DomainScope scope_ = DomainScope::shared();
  std::vector<Tensor> gamma_, beta_, mean_, var_;
  double momentum_ = 0.1;
};

enum class ConvKind { Depthwise, Pointwise, Full };

/// Convolution followed by batch normalization and an optional ReLU6.
/// Depthwise blocks use a 3x3 kernel; pointwise blocks a 1x1 kernel.
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(ParameterStore& store, const std::string& name, ConvKind kind, std::size_t in,
            std::size_t out, std::size_t stride, bool relu, DomainScope scope, bool encoder,
            double momentum, std::uint64_t seed);

  Tensor forward(const Tensor& x, const DomainId& domain, bool training,
                 bool frozen_stats = false) const;

  ConvKind kind() const { return kind_; }
  std::size_t in_channels() const { return conv_.in_channels(); }
  std::size_t out_channels() const { return conv_.out_channels(); }
  /// Table-style description, e.g. "ConvPW(64, 128)".
  std::string describe() const;

 private:
  ConvKind kind_ = ConvKind::Pointwise;
  Conv2d conv_;
  BatchNorm norm_;
  bool relu_ = false;
};

/// Pointwise block with ReLU6 exactly when the block does not compress.
ConvBlock conv_pw(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                  DomainScope scope, bool encoder, double momentum, std::uint64_t seed);
ConvBlock conv_dw(ParameterStore& store, const std::string& name, std::size_t channels,
                  std::size_t stride, DomainScope scope, bool encoder, double momentum,
                  std::uint64_t seed);

}  // namespace unisal

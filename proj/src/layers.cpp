#include "unisal/layers.hpp"

#include "unisal/errors.hpp"

namespace unisal {

Conv2d::Conv2d(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
               std::size_t kernel, std::size_t stride, std::size_t groups, bool bias,
               bool encoder, std::uint64_t seed)
    : in_(in), out_(out), stride_(stride), padding_(kernel / 2), groups_(groups) {
  if (in % groups != 0 || out % groups != 0) {
    throw BuildError(name + ": channels " + std::to_string(in) + "->" + std::to_string(out) +
                     " not divisible by groups " + std::to_string(groups));
  }
  const std::size_t fan_in = (in / groups) * kernel * kernel;
  weight_ = store.add_parameter(
      name + ".weight", kSharedTag,
      kaiming_normal(Shape{out, in / groups, kernel, kernel}, fan_in, seed, name + ".weight"),
      encoder);
  if (bias) bias_ = store.add_parameter(name + ".bias", kSharedTag, Tensor::zeros({out}), encoder);
}

Tensor Conv2d::forward(const Tensor& x) const {
  return conv2d(x, weight_, bias_, stride_, padding_, groups_);
}

BatchNorm::BatchNorm(ParameterStore& store, const std::string& name, std::size_t channels,
                     DomainScope scope, bool encoder, double momentum)
    : scope_(std::move(scope)), momentum_(momentum) {
  for (std::size_t s = 0; s < scope_.slots(); ++s) {
    const int tag = scope_.tag(s);
    gamma_.push_back(store.add_parameter(name + ".gamma", tag, Tensor::full({channels}, 1.0), encoder));
    beta_.push_back(store.add_parameter(name + ".beta", tag, Tensor::zeros({channels}), encoder));
    mean_.push_back(store.add_buffer(name + ".running_mean", tag, Tensor::zeros({channels}), encoder));
    var_.push_back(store.add_buffer(name + ".running_var", tag, Tensor::full({channels}, 1.0), encoder));
  }
}

Tensor BatchNorm::forward(const Tensor& x, const DomainId& domain, bool training,
                          bool frozen_stats) const {
  const std::size_t s = scope_.slot(domain);
  return batch_stats_normalize(x, gamma_[s], beta_[s], mean_[s], var_[s], momentum_,
                               training && !frozen_stats);
}

ConvBlock::ConvBlock(ParameterStore& store, const std::string& name, ConvKind kind,
                     std::size_t in, std::size_t out, std::size_t stride, bool relu,
                     DomainScope scope, bool encoder, double momentum, std::uint64_t seed)
    : kind_(kind), relu_(relu) {
  switch (kind) {
    case ConvKind::Depthwise:
      if (in != out) throw BuildError(name + ": depthwise block needs equal widths");
      conv_ = Conv2d(store, name + ".conv", in, out, 3, stride, in, false, encoder, seed);
      break;
    case ConvKind::Pointwise:
      conv_ = Conv2d(store, name + ".conv", in, out, 1, 1, 1, false, encoder, seed);
      break;
    case ConvKind::Full:
      conv_ = Conv2d(store, name + ".conv", in, out, 3, stride, 1, false, encoder, seed);
      break;
  }
  norm_ = BatchNorm(store, name + ".bn", out, std::move(scope), encoder, momentum);
}

Tensor ConvBlock::forward(const Tensor& x, const DomainId& domain, bool training,
                          bool frozen_stats) const {
  Tensor y = norm_.forward(conv_.forward(x), domain, training, frozen_stats);
  return relu_ ? relu6(y) : y;
}

std::string ConvBlock::describe() const {
  switch (kind_) {
    case ConvKind::Depthwise:
      return "ConvDW(" + std::to_string(out_channels()) + ")";
    case ConvKind::Pointwise:
      return "ConvPW(" + std::to_string(in_channels()) + ", " + std::to_string(out_channels()) + ")";
    case ConvKind::Full:
      return "Conv3x3(" + std::to_string(in_channels()) + ", " + std::to_string(out_channels()) + ")";
  }
  return {};
}

ConvBlock conv_pw(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                  DomainScope scope, bool encoder, double momentum, std::uint64_t seed) {
  return ConvBlock(store, name, ConvKind::Pointwise, in, out, 1, in <= out, std::move(scope),
                   encoder, momentum, seed);
}

ConvBlock conv_dw(ParameterStore& store, const std::string& name, std::size_t channels,
                  std::size_t stride, DomainScope scope, bool encoder, double momentum,
                  std::uint64_t seed) {
  return ConvBlock(store, name, ConvKind::Depthwise, channels, channels, stride, true,
                   std::move(scope), encoder, momentum, seed);
}

}  // namespace unisal

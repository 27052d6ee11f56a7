#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "unisal/tensor.hpp"

namespace unisal {

// Differentiable operations on NCHW tensors. Every function records itself on
// the tape when an input requires a gradient.

/// Cross-correlation with zero padding. `bias` may be undefined.
/// Depthwise convolution is groups == channels; pointwise is a 1x1 kernel.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias = {},
              std::size_t stride = 1, std::size_t padding = 0, std::size_t groups = 1);

enum class Interpolation { Nearest, Bilinear };

/// Integer-factor upsampling. Bilinear sampling uses half-pixel centers.
Tensor upsample(const Tensor& input, std::size_t factor, Interpolation mode);

/// Resize to an explicit spatial size with the same sampling conventions as
/// `upsample`: nearest picks floor(dst * in / out), bilinear samples at
/// (dst + 0.5) * in / out - 0.5 clamped to the source grid.
Tensor resize(const Tensor& input, std::size_t height, std::size_t width, Interpolation mode);

enum class Activation { Relu6, Sigmoid, Tanh };

Tensor activation(const Tensor& input, Activation kind);
inline Tensor relu6(const Tensor& x) { return activation(x, Activation::Relu6); }
inline Tensor sigmoid(const Tensor& x) { return activation(x, Activation::Sigmoid); }
inline Tensor tanh(const Tensor& x) { return activation(x, Activation::Tanh); }

inline constexpr double kNormEps = 1e-5;

/// Batch normalization over (N, H, W) per channel.
///
/// Training mode normalizes with the batch statistics (population variance)
/// and blends them into the running buffers as
/// run = (1 - momentum) * run + momentum * batch. Evaluation mode uses the
/// running buffers. The buffers are updated in place and never recorded.
Tensor batch_stats_normalize(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                             Tensor running_mean, Tensor running_var, double momentum,
                             bool training, double eps = kNormEps);

/// Per-sample softmax over all H*W positions of a single-channel map.
Tensor softmax_spatial(const Tensor& input);

/// Identifies one dropout draw: the mask is a pure function of this key.
struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t layer = 0;
  std::uint64_t step = 0;
};

/// Channel dropout: whole (n, c) planes are zeroed with probability p and
/// survivors scaled by 1 / (1 - p). Identity in evaluation mode.
Tensor dropout2d(const Tensor& input, double p, bool training, DropoutKey key);

/// Multiplies by a fixed mask with the same shape as `input` (no gradient to the mask).
Tensor mask_multiply(const Tensor& input, const Tensor& mask);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// scale * x + shift, elementwise.
Tensor affine(const Tensor& x, double scale, double shift);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sum of x * w with a constant weight tensor of the same shape.
Tensor weighted_sum(const Tensor& x, const Tensor& weights);

Tensor reshape(const Tensor& x, Shape shape);
/// Concatenation of NCHW tensors along the channel axis.
Tensor concat_channels(const std::vector<Tensor>& parts);
/// Concatenation along the leading axis.
Tensor concat_batch(const std::vector<Tensor>& parts);
/// Rows [start, start + count) of the leading axis.
Tensor slice_batch(const Tensor& x, std::size_t start, std::size_t count);
/// Repeats a tensor with leading size 1 `count` times along the leading axis.
Tensor repeat_batch(const Tensor& x, std::size_t count);

}  // namespace unisal

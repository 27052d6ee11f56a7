#include "unisal/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "unisal/errors.hpp"
#include "unisal/rng.hpp"

namespace unisal {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

// Output positions o in [lo, hi] whose source index o * stride - pad + k lies
// inside [0, extent). Returns false when the range is empty.
bool valid_range(std::size_t extent, std::size_t out_extent, std::size_t stride, std::size_t pad,
                 std::size_t k, std::size_t& lo, std::size_t& hi) {
  const long long p = static_cast<long long>(pad) - static_cast<long long>(k);
  const long long s = static_cast<long long>(stride);
  const long long first = p > 0 ? (p + s - 1) / s : 0;
  const long long top = static_cast<long long>(extent) - 1 + p;
  if (top < 0) return false;
  const long long last = std::min<long long>(static_cast<long long>(out_extent) - 1, top / s);
  if (first > last) return false;
  lo = static_cast<std::size_t>(first);
  hi = static_cast<std::size_t>(last);
  return true;
}

struct ConvGeometry {
  std::size_t n, c, h, w, o, cg, kh, kw, oh, ow, stride, pad, groups;
};

void conv_forward(const ConvGeometry& g, const double* in, const double* wt, double* out) {
  const std::size_t opg = g.o / g.groups;
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t o = 0; o < g.o; ++o) {
      const std::size_t grp = o / opg;
      double* out_plane = out + (n * g.o + o) * g.oh * g.ow;
      for (std::size_t ic = 0; ic < g.cg; ++ic) {
        const std::size_t c = grp * g.cg + ic;
        const double* in_plane = in + (n * g.c + c) * g.h * g.w;
        const double* kernel = wt + (o * g.cg + ic) * g.kh * g.kw;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          std::size_t y0, y1;
          if (!valid_range(g.h, g.oh, g.stride, g.pad, ky, y0, y1)) continue;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            std::size_t x0, x1;
            if (!valid_range(g.w, g.ow, g.stride, g.pad, kx, x0, x1)) continue;
            const double k = kernel[ky * g.kw + kx];
            if (k == 0.0) continue;
            for (std::size_t y = y0; y <= y1; ++y) {
              const double* in_row = in_plane + (y * g.stride + ky - g.pad) * g.w;
              double* out_row = out_plane + y * g.ow;
              if (g.stride == 1) {
                const double* src = in_row + kx - g.pad;
                for (std::size_t x = x0; x <= x1; ++x) out_row[x] += k * src[x];
              } else {
                for (std::size_t x = x0; x <= x1; ++x) {
                  out_row[x] += k * in_row[x * g.stride + kx - g.pad];
                }
              }
            }
          }
        }
      }
    }
  }
}

void conv_backward(const ConvGeometry& g, const double* in, const double* wt,
                   const double* gout, double* gin, double* gw) {
  const std::size_t opg = g.o / g.groups;
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t o = 0; o < g.o; ++o) {
      const std::size_t grp = o / opg;
      const double* gout_plane = gout + (n * g.o + o) * g.oh * g.ow;
      for (std::size_t ic = 0; ic < g.cg; ++ic) {
        const std::size_t c = grp * g.cg + ic;
        const double* in_plane = in + (n * g.c + c) * g.h * g.w;
        double* gin_plane = gin ? gin + (n * g.c + c) * g.h * g.w : nullptr;
        const std::size_t kbase = (o * g.cg + ic) * g.kh * g.kw;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          std::size_t y0, y1;
          if (!valid_range(g.h, g.oh, g.stride, g.pad, ky, y0, y1)) continue;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            std::size_t x0, x1;
            if (!valid_range(g.w, g.ow, g.stride, g.pad, kx, x0, x1)) continue;
            const double k = wt[kbase + ky * g.kw + kx];
            double acc = 0.0;
            for (std::size_t y = y0; y <= y1; ++y) {
              const std::size_t row = (y * g.stride + ky - g.pad) * g.w;
              const double* gout_row = gout_plane + y * g.ow;
              if (g.stride == 1) {
                const double* src = in_plane + row + kx - g.pad;
                if (gw) {
                  for (std::size_t x = x0; x <= x1; ++x) acc += gout_row[x] * src[x];
                }
                if (gin_plane && k != 0.0) {
                  double* dst = gin_plane + row + kx - g.pad;
                  for (std::size_t x = x0; x <= x1; ++x) dst[x] += k * gout_row[x];
                }
              } else {
                for (std::size_t x = x0; x <= x1; ++x) {
                  const std::size_t col = x * g.stride + kx - g.pad;
                  if (gw) acc += gout_row[x] * in_plane[row + col];
                  if (gin_plane) gin_plane[row + col] += k * gout_row[x];
                }
              }
            }
            if (gw) gw[kbase + ky * g.kw + kx] += acc;
          }
        }
      }
    }
  }
}

double apply_activation(Activation kind, double x) {
  switch (kind) {
    case Activation::Relu6:
      return std::min(std::max(x, 0.0), 6.0);
    case Activation::Sigmoid:
      return 1.0 / (1.0 + std::exp(-x));
    case Activation::Tanh:
      return std::tanh(x);
  }
  return x;
}

// Derivative expressed through the input x and output y.
double activation_slope(Activation kind, double x, double y) {
  switch (kind) {
    case Activation::Relu6:
      return (x > 0.0 && x < 6.0) ? 1.0 : 0.0;
    case Activation::Sigmoid:
      return y * (1.0 - y);
    case Activation::Tanh:
      return 1.0 - y * y;
  }
  return 1.0;
}

struct AxisSample {
  std::size_t lo, hi;
  double frac;  // weight of hi
};

std::vector<AxisSample> bilinear_axis(std::size_t in, std::size_t out) {
  std::vector<AxisSample> samples(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const std::size_t hi = std::min(lo + 1, in - 1);
    samples[i] = {lo, hi, src - static_cast<double>(lo)};
  }
  return samples;
}

std::vector<std::size_t> nearest_axis(std::size_t in, std::size_t out) {
  std::vector<std::size_t> idx(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    idx[i] = std::min(static_cast<std::size_t>(std::floor(static_cast<double>(i) * scale)), in - 1);
  }
  return idx;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding, std::size_t groups) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (stride == 0) throw ContractError("conv2d: stride must be positive");
  if (groups == 0) throw ContractError("conv2d: groups must be positive");
  ConvGeometry g{};
  g.n = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.o = weight.dim(0);
  g.cg = weight.dim(1);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = stride;
  g.pad = padding;
  g.groups = groups;
  if (g.c % groups != 0) {
    throw DimensionError("conv2d: input channels (axis 1) " + std::to_string(g.c) +
                         " not divisible by groups " + std::to_string(groups));
  }
  if (g.o % groups != 0) {
    throw DimensionError("conv2d: output channels (weight axis 0) " + std::to_string(g.o) +
                         " not divisible by groups " + std::to_string(groups));
  }
  if (g.cg != g.c / groups) {
    throw DimensionError("conv2d: weight axis 1 is " + std::to_string(g.cg) + ", expected " +
                         std::to_string(g.c / groups) + " input channels per group");
  }
  if (g.h + 2 * padding < g.kh) throw DimensionError("conv2d: kernel taller than padded input (axis 2)");
  if (g.w + 2 * padding < g.kw) throw DimensionError("conv2d: kernel wider than padded input (axis 3)");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.o)) {
    throw DimensionError("conv2d: bias axis 0 must equal output channels " + std::to_string(g.o));
  }
  g.oh = (g.h + 2 * padding - g.kh) / stride + 1;
  g.ow = (g.w + 2 * padding - g.kw) / stride + 1;

  const bool pointwise = g.kh == 1 && g.kw == 1 && stride == 1 && padding == 0 && groups == 1;
  const std::size_t plane = g.oh * g.ow;
  std::vector<double> out(g.n * g.o * plane, 0.0);
  const auto in = input.data();
  const auto wt = weight.data();
  if (pointwise) {
    ConstMap wm(wt.data(), g.o, g.c);
    for (std::size_t n = 0; n < g.n; ++n) {
      ConstMap xm(in.data() + n * g.c * plane, g.c, plane);
      MutMap ym(out.data() + n * g.o * plane, g.o, plane);
      ym.noalias() = wm * xm;
    }
  } else {
    conv_forward(g, in.data(), wt.data(), out.data());
  }
  if (bias.defined()) {
    const auto b = bias.data();
    for (std::size_t n = 0; n < g.n; ++n) {
      for (std::size_t o = 0; o < g.o; ++o) {
        double* p = out.data() + (n * g.o + o) * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] += b[o];
      }
    }
  }

  return Tensor::make_result(
      Shape{g.n, g.o, g.oh, g.ow}, std::move(out), {input, weight, bias},
      [input, weight, g, pointwise](std::span<const double>, std::span<const double> gout,
                                    std::span<const std::span<double>> grads) {
        const auto in = input.data();
        const auto wt = weight.data();
        const std::size_t plane = g.oh * g.ow;
        double* gin = grads[0].empty() ? nullptr : grads[0].data();
        double* gw = grads[1].empty() ? nullptr : grads[1].data();
        if (pointwise) {
          ConstMap wm(wt.data(), g.o, g.c);
          for (std::size_t n = 0; n < g.n; ++n) {
            ConstMap gy(gout.data() + n * g.o * plane, g.o, plane);
            if (gin) {
              MutMap gx(gin + n * g.c * plane, g.c, plane);
              gx.noalias() += wm.transpose() * gy;
            }
            if (gw) {
              ConstMap xm(in.data() + n * g.c * plane, g.c, plane);
              MutMap gwm(gw, g.o, g.c);
              gwm.noalias() += gy * xm.transpose();
            }
          }
        } else {
          conv_backward(g, in.data(), wt.data(), gout.data(), gin, gw);
        }
        if (!grads[2].empty()) {
          for (std::size_t n = 0; n < g.n; ++n) {
            for (std::size_t o = 0; o < g.o; ++o) {
              const double* p = gout.data() + (n * g.o + o) * plane;
              double acc = 0.0;
              for (std::size_t i = 0; i < plane; ++i) acc += p[i];
              grads[2][o] += acc;
            }
          }
        }
      });
}

Tensor upsample(const Tensor& input, std::size_t factor, Interpolation mode) {
  if (factor == 0) throw ContractError("upsample: factor must be >= 1");
  require_rank(input, 4, "upsample input");
  return resize(input, input.dim(2) * factor, input.dim(3) * factor, mode);
}

Tensor resize(const Tensor& input, std::size_t height, std::size_t width, Interpolation mode) {
  require_rank(input, 4, "resize input");
  if (height == 0 || width == 0) throw ContractError("resize: target size must be positive");
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t ih = input.dim(2);
  const std::size_t iw = input.dim(3);
  const auto in = input.data();
  std::vector<double> out(planes * height * width);
  Shape shape{input.dim(0), input.dim(1), height, width};

  if (mode == Interpolation::Nearest) {
    auto ys = nearest_axis(ih, height);
    auto xs = nearest_axis(iw, width);
    for (std::size_t p = 0; p < planes; ++p) {
      const double* src = in.data() + p * ih * iw;
      double* dst = out.data() + p * height * width;
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) dst[y * width + x] = src[ys[y] * iw + xs[x]];
      }
    }
    return Tensor::make_result(
        std::move(shape), std::move(out), {input},
        [=](std::span<const double>, std::span<const double> gout,
            std::span<const std::span<double>> grads) {
          for (std::size_t p = 0; p < planes; ++p) {
            const double* g = gout.data() + p * height * width;
            double* gi = grads[0].data() + p * ih * iw;
            for (std::size_t y = 0; y < height; ++y) {
              for (std::size_t x = 0; x < width; ++x) gi[ys[y] * iw + xs[x]] += g[y * width + x];
            }
          }
        });
  }

  auto ys = bilinear_axis(ih, height);
  auto xs = bilinear_axis(iw, width);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = in.data() + p * ih * iw;
    double* dst = out.data() + p * height * width;
    for (std::size_t y = 0; y < height; ++y) {
      const auto& sy = ys[y];
      const double* r0 = src + sy.lo * iw;
      const double* r1 = src + sy.hi * iw;
      for (std::size_t x = 0; x < width; ++x) {
        const auto& sx = xs[x];
        const double top = r0[sx.lo] * (1.0 - sx.frac) + r0[sx.hi] * sx.frac;
        const double bot = r1[sx.lo] * (1.0 - sx.frac) + r1[sx.hi] * sx.frac;
        dst[y * width + x] = top * (1.0 - sy.frac) + bot * sy.frac;
      }
    }
  }
  return Tensor::make_result(
      std::move(shape), std::move(out), {input},
      [=](std::span<const double>, std::span<const double> gout,
          std::span<const std::span<double>> grads) {
        for (std::size_t p = 0; p < planes; ++p) {
          const double* g = gout.data() + p * height * width;
          double* gi = grads[0].data() + p * ih * iw;
          for (std::size_t y = 0; y < height; ++y) {
            const auto& sy = ys[y];
            for (std::size_t x = 0; x < width; ++x) {
              const auto& sx = xs[x];
              const double v = g[y * width + x];
              gi[sy.lo * iw + sx.lo] += v * (1.0 - sy.frac) * (1.0 - sx.frac);
              gi[sy.lo * iw + sx.hi] += v * (1.0 - sy.frac) * sx.frac;
              gi[sy.hi * iw + sx.lo] += v * sy.frac * (1.0 - sx.frac);
              gi[sy.hi * iw + sx.hi] += v * sy.frac * sx.frac;
            }
          }
        }
      });
}

Tensor activation(const Tensor& input, Activation kind) {
  const auto in = input.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = apply_activation(kind, in[i]);
  return Tensor::make_result(input.shape(), std::move(out), {input},
                             [input, kind](std::span<const double> y, std::span<const double> g,
                                           std::span<const std::span<double>> grads) {
                               const auto x = input.data();
                               for (std::size_t i = 0; i < x.size(); ++i) {
                                 grads[0][i] += g[i] * activation_slope(kind, x[i], y[i]);
                               }
                             });
}

Tensor batch_stats_normalize(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                             Tensor running_mean, Tensor running_var, double momentum,
                             bool training, double eps) {
  require_rank(input, 4, "batch_stats_normalize input");
  if (!(eps > 0.0)) throw ContractError("batch_stats_normalize: eps must be positive");
  if (momentum < 0.0 || momentum > 1.0) {
    throw ContractError("batch_stats_normalize: momentum must lie in [0, 1]");
  }
  const std::size_t n = input.dim(0);
  const std::size_t c = input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &running_mean, &running_var}) {
    if (t->rank() != 1 || t->dim(0) != c) {
      throw DimensionError("batch_stats_normalize: per-channel tensors must have axis 0 = " +
                           std::to_string(c));
    }
  }
  const auto x = input.data();
  const auto gm = gamma.data();
  const auto bt = beta.data();
  const double count = static_cast<double>(n * plane);

  std::vector<double> mean(c), inv_std(c);
  if (training) {
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = x.data() + (b * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      const double m = s / count;
      double v = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = x.data() + (b * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) v += (p[i] - m) * (p[i] - m);
      }
      v /= count;
      mean[ch] = m;
      inv_std[ch] = 1.0 / std::sqrt(v + eps);
      rm[ch] = (1.0 - momentum) * rm[ch] + momentum * m;
      rv[ch] = (1.0 - momentum) * rv[ch] + momentum * v;
    }
  } else {
    const auto rm = running_mean.data();
    const auto rv = running_var.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = rm[ch];
      inv_std[ch] = 1.0 / std::sqrt(rv[ch] + eps);
    }
  }

  std::vector<double> xhat(x.size());
  std::vector<double> out(x.size());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double h = (x[off + i] - mean[ch]) * inv_std[ch];
        xhat[off + i] = h;
        out[off + i] = gm[ch] * h + bt[ch];
      }
    }
  }

  return Tensor::make_result(
      input.shape(), std::move(out), {input, gamma, beta},
      [gamma, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, plane, count, training](
          std::span<const double>, std::span<const double> g,
          std::span<const std::span<double>> grads) {
        const auto gm = gamma.data();
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_g = 0.0;
          double sum_gx = 0.0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_g += g[off + i];
              sum_gx += g[off + i] * xhat[off + i];
            }
          }
          if (!grads[1].empty()) grads[1][ch] += sum_gx;
          if (!grads[2].empty()) grads[2][ch] += sum_g;
          if (grads[0].empty()) continue;
          const double scale = gm[ch] * inv_std[ch];
          const double mg = sum_g / count;
          const double mgx = sum_gx / count;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              grads[0][off + i] +=
                  training ? scale * (g[off + i] - mg - xhat[off + i] * mgx) : scale * g[off + i];
            }
          }
        }
      });
}

Tensor softmax_spatial(const Tensor& input) {
  require_rank(input, 4, "softmax_spatial input");
  if (input.dim(1) != 1) {
    throw ContractError("softmax_spatial: expected a single channel, got " +
                        std::to_string(input.dim(1)));
  }
  const std::size_t n = input.dim(0);
  const std::size_t plane = input.dim(2) * input.dim(3);
  const auto x = input.data();
  std::vector<double> out(x.size());
  for (std::size_t b = 0; b < n; ++b) {
    const double* p = x.data() + b * plane;
    double* q = out.data() + b * plane;
    const double mx = *std::max_element(p, p + plane);
    double z = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      q[i] = std::exp(p[i] - mx);
      z += q[i];
    }
    for (std::size_t i = 0; i < plane; ++i) q[i] /= z;
  }
  return Tensor::make_result(input.shape(), std::move(out), {input},
                             [n, plane](std::span<const double> y, std::span<const double> g,
                                        std::span<const std::span<double>> grads) {
                               for (std::size_t b = 0; b < n; ++b) {
                                 const std::size_t off = b * plane;
                                 double dot = 0.0;
                                 for (std::size_t i = 0; i < plane; ++i) dot += g[off + i] * y[off + i];
                                 for (std::size_t i = 0; i < plane; ++i) {
                                   grads[0][off + i] += y[off + i] * (g[off + i] - dot);
                                 }
                               }
                             });
}

Tensor dropout2d(const Tensor& input, double p, bool training, DropoutKey key) {
  if (p < 0.0 || p >= 1.0) throw ContractError("dropout2d: p must lie in [0, 1)");
  if (!training || p == 0.0) return input;
  require_rank(input, 4, "dropout2d input");
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  const std::uint64_t base = hash_combine(hash_combine(key.seed, key.layer), key.step);
  const double scale = 1.0 / (1.0 - p);
  std::vector<double> mask(input.numel());
  for (std::size_t i = 0; i < planes; ++i) {
    const double keep = key_to_unit(hash_combine(base, i)) >= p ? scale : 0.0;
    std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(i * plane), plane, keep);
  }
  return mask_multiply(input, Tensor::from(input.shape(), std::move(mask)));
}

Tensor mask_multiply(const Tensor& input, const Tensor& mask) {
  require_same_shape(input, mask, "mask_multiply");
  const auto x = input.data();
  const auto m = mask.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * m[i];
  return Tensor::make_result(input.shape(), std::move(out), {input},
                             [mask](std::span<const double>, std::span<const double> g,
                                    std::span<const std::span<double>> grads) {
                               const auto m = mask.data();
                               for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i] * m[i];
                             });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b},
                             [](std::span<const double>, std::span<const double> g,
                                std::span<const std::span<double>> grads) {
                               for (auto& gi : grads) {
                                 if (gi.empty()) continue;
                                 for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                               }
                             });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b},
                             [](std::span<const double>, std::span<const double> g,
                                std::span<const std::span<double>> grads) {
                               if (!grads[0].empty()) {
                                 for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i];
                               }
                               if (!grads[1].empty()) {
                                 for (std::size_t i = 0; i < g.size(); ++i) grads[1][i] -= g[i];
                               }
                             });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b},
                             [a, b](std::span<const double>, std::span<const double> g,
                                    std::span<const std::span<double>> grads) {
                               const auto x = a.data();
                               const auto y = b.data();
                               if (!grads[0].empty()) {
                                 for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i] * y[i];
                               }
                               if (!grads[1].empty()) {
                                 for (std::size_t i = 0; i < g.size(); ++i) grads[1][i] += g[i] * x[i];
                               }
                             });
}

Tensor affine(const Tensor& x, double scale, double shift) {
  const auto v = x.data();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = scale * v[i] + shift;
  return Tensor::make_result(x.shape(), std::move(out), {x},
                             [scale](std::span<const double>, std::span<const double> g,
                                     std::span<const std::span<double>> grads) {
                               for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += scale * g[i];
                             });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return Tensor::make_result(Shape{}, {s}, {x},
                             [](std::span<const double>, std::span<const double> g,
                                std::span<const std::span<double>> grads) {
                               for (auto& v : grads[0]) v += g[0];
                             });
}

Tensor mean(const Tensor& x) {
  return affine(sum(x), 1.0 / static_cast<double>(x.numel()), 0.0);
}

Tensor weighted_sum(const Tensor& x, const Tensor& weights) {
  require_same_shape(x, weights, "weighted_sum");
  const auto v = x.data();
  const auto w = weights.data();
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * w[i];
  return Tensor::make_result(Shape{}, {s}, {x},
                             [weights](std::span<const double>, std::span<const double> g,
                                       std::span<const std::span<double>> grads) {
                               const auto w = weights.data();
                               for (std::size_t i = 0; i < w.size(); ++i) grads[0][i] += g[0] * w[i];
                             });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " +
                         shape_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), {x},
                             [](std::span<const double>, std::span<const double> g,
                                std::span<const std::span<double>> grads) {
                               for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i];
                             });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_channels: no inputs");
  for (const auto& p : parts) require_rank(p, 4, "concat_channels input");
  const std::size_t n = parts[0].dim(0);
  const std::size_t h = parts[0].dim(2);
  const std::size_t w = parts[0].dim(3);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.dim(0) != n) throw DimensionError("concat_channels: batch axis 0 mismatch");
    if (p.dim(2) != h) throw DimensionError("concat_channels: height axis 2 mismatch");
    if (p.dim(3) != w) throw DimensionError("concat_channels: width axis 3 mismatch");
    total += p.dim(1);
  }
  const std::size_t plane = h * w;
  std::vector<double> out(n * total * plane);
  std::vector<std::size_t> offsets;
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    offsets.push_back(c0);
    const auto d = p.data();
    const std::size_t c = p.dim(1);
    for (std::size_t b = 0; b < n; ++b) {
      std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(b * c * plane), c * plane,
                  out.begin() + static_cast<std::ptrdiff_t>((b * total + c0) * plane));
    }
    c0 += c;
  }
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.dim(1));
  return Tensor::make_result(
      Shape{n, total, h, w}, std::move(out), parts,
      [offsets, widths, n, total, plane](std::span<const double>, std::span<const double> g,
                                         std::span<const std::span<double>> grads) {
        for (std::size_t k = 0; k < grads.size(); ++k) {
          if (grads[k].empty()) continue;
          const std::size_t c = widths[k];
          for (std::size_t b = 0; b < n; ++b) {
            const double* src = g.data() + (b * total + offsets[k]) * plane;
            double* dst = grads[k].data() + b * c * plane;
            for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
          }
        }
      });
}

Tensor concat_batch(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_batch: no inputs");
  Shape inner(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<double> out;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    if (Shape(p.shape().begin() + 1, p.shape().end()) != inner) {
      throw DimensionError("concat_batch: trailing axes mismatch " + shape_string(p.shape()));
    }
    rows += p.dim(0);
    sizes.push_back(p.numel());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  Shape shape{rows};
  shape.insert(shape.end(), inner.begin(), inner.end());
  return Tensor::make_result(std::move(shape), std::move(out), parts,
                             [sizes](std::span<const double>, std::span<const double> g,
                                     std::span<const std::span<double>> grads) {
                               std::size_t off = 0;
                               for (std::size_t k = 0; k < grads.size(); ++k) {
                                 if (!grads[k].empty()) {
                                   for (std::size_t i = 0; i < sizes[k]; ++i) grads[k][i] += g[off + i];
                                 }
                                 off += sizes[k];
                               }
                             });
}

Tensor slice_batch(const Tensor& x, std::size_t start, std::size_t count) {
  if (x.rank() == 0) throw DimensionError("slice_batch: scalar input");
  if (start + count > x.dim(0)) {
    throw DimensionError("slice_batch: rows [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") exceed axis 0 of size " +
                         std::to_string(x.dim(0)));
  }
  Shape shape = x.shape();
  const std::size_t row = x.numel() / shape[0];
  shape[0] = count;
  const auto d = x.data();
  std::vector<double> out(d.begin() + static_cast<std::ptrdiff_t>(start * row),
                          d.begin() + static_cast<std::ptrdiff_t>((start + count) * row));
  return Tensor::make_result(std::move(shape), std::move(out), {x},
                             [start, row](std::span<const double>, std::span<const double> g,
                                          std::span<const std::span<double>> grads) {
                               for (std::size_t i = 0; i < g.size(); ++i) grads[0][start * row + i] += g[i];
                             });
}

Tensor repeat_batch(const Tensor& x, std::size_t count) {
  if (x.rank() == 0 || x.dim(0) != 1) {
    throw DimensionError("repeat_batch: axis 0 must have size 1, got " + shape_string(x.shape()));
  }
  Shape shape = x.shape();
  shape[0] = count;
  const auto d = x.data();
  std::vector<double> out;
  out.reserve(d.size() * count);
  for (std::size_t k = 0; k < count; ++k) out.insert(out.end(), d.begin(), d.end());
  const std::size_t row = d.size();
  return Tensor::make_result(std::move(shape), std::move(out), {x},
                             [row, count](std::span<const double>, std::span<const double> g,
                                          std::span<const std::span<double>> grads) {
                               for (std::size_t k = 0; k < count; ++k) {
                                 for (std::size_t i = 0; i < row; ++i) grads[0][i] += g[k * row + i];
                               }
                             });
}

}  // namespace unisal

#include "unisal/domain_adaptive.hpp"

#include <cmath>

#include "unisal/errors.hpp"
#include "unisal/rng.hpp"

namespace unisal {

Tensor dabn_forward(const BatchNorm& dabn, const Tensor& input, const DomainId& domain,
                    bool training) {
  return dabn.forward(input, domain, training);
}

std::vector<GaussianPrior> init_priors(std::size_t n_maps, std::uint64_t seed) {
  std::vector<GaussianPrior> t;
  t.push_back({0.5, 0.5, std::log(0.5), std::log(0.5)});
  for (double y : {0.25, 0.5, 0.75}) {
    for (double x : {0.25, 0.5, 0.75}) t.push_back({x, y, std::log(0.15), std::log(0.15)});
  }
  for (double y : {0.25, 0.5, 0.75}) t.push_back({0.5, y, std::log(0.6), std::log(0.1)});
  for (double x : {0.25, 0.5, 0.75}) t.push_back({x, 0.5, std::log(0.1), std::log(0.6)});

  if (n_maps <= t.size()) {
    t.resize(n_maps);
    return t;
  }
  CounterRng rng(seed, 0x7072696fULL);
  while (t.size() < n_maps) {
    t.push_back({rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), std::log(rng.uniform(0.1, 0.5)),
                 std::log(rng.uniform(0.1, 0.5))});
  }
  return t;
}

Tensor render_priors(const Tensor& means, const Tensor& log_sigmas, std::size_t height,
                     std::size_t width) {
  if (means.rank() != 2 || means.dim(1) != 2) {
    throw DimensionError("render_priors: means must be N_G x 2, got " + shape_string(means.shape()));
  }
  if (log_sigmas.shape() != means.shape()) {
    throw DimensionError("render_priors: log_sigmas shape " + shape_string(log_sigmas.shape()) +
                         " does not match means");
  }
  if (height == 0 || width == 0) throw ContractError("render_priors: empty grid");
  const std::size_t maps = means.dim(0);
  const std::size_t plane = height * width;
  const auto mu = means.data();
  const auto ls = log_sigmas.data();
  std::vector<double> out(maps * plane);
  for (std::size_t m = 0; m < maps; ++m) {
    const double inv_x = std::exp(-2.0 * ls[2 * m]);
    const double inv_y = std::exp(-2.0 * ls[2 * m + 1]);
    for (std::size_t i = 0; i < height; ++i) {
      const double dy = (static_cast<double>(i) + 0.5) / static_cast<double>(height) - mu[2 * m + 1];
      for (std::size_t j = 0; j < width; ++j) {
        const double dx = (static_cast<double>(j) + 0.5) / static_cast<double>(width) - mu[2 * m];
        out[m * plane + i * width + j] = kPriorScale * std::exp(-dx * dx * inv_x - dy * dy * inv_y);
      }
    }
  }
  return Tensor::make_result(
      Shape{1, maps, height, width}, std::move(out), {means, log_sigmas},
      [means, log_sigmas, maps, height, width](std::span<const double> g_out,
                                               std::span<const double> grad,
                                               std::span<const std::span<double>> grads) {
        const std::size_t plane = height * width;
        const auto mu = means.data();
        const auto ls = log_sigmas.data();
        for (std::size_t m = 0; m < maps; ++m) {
          const double inv_x = std::exp(-2.0 * ls[2 * m]);
          const double inv_y = std::exp(-2.0 * ls[2 * m + 1]);
          double d_mx = 0.0, d_my = 0.0, d_lx = 0.0, d_ly = 0.0;
          for (std::size_t i = 0; i < height; ++i) {
            const double dy =
                (static_cast<double>(i) + 0.5) / static_cast<double>(height) - mu[2 * m + 1];
            for (std::size_t j = 0; j < width; ++j) {
              const double dx =
                  (static_cast<double>(j) + 0.5) / static_cast<double>(width) - mu[2 * m];
              const std::size_t k = m * plane + i * width + j;
              const double gv = grad[k] * g_out[k];
              d_mx += gv * 2.0 * dx * inv_x;
              d_my += gv * 2.0 * dy * inv_y;
              d_lx += gv * 2.0 * dx * dx * inv_x;
              d_ly += gv * 2.0 * dy * dy * inv_y;
            }
          }
          if (!grads[0].empty()) {
            grads[0][2 * m] += d_mx;
            grads[0][2 * m + 1] += d_my;
          }
          if (!grads[1].empty()) {
            grads[1][2 * m] += d_lx;
            grads[1][2 * m + 1] += d_ly;
          }
        }
      });
}

GaussianPriorBank::GaussianPriorBank(ParameterStore& store, const std::string& name,
                                     std::size_t n_maps, DomainScope scope, std::uint64_t seed)
    : scope_(std::move(scope)), n_maps_(n_maps) {
  const auto priors = init_priors(n_maps, seed);
  std::vector<double> mu, ls;
  for (const auto& p : priors) {
    mu.insert(mu.end(), {p.mu_x, p.mu_y});
    ls.insert(ls.end(), {p.log_sigma_x, p.log_sigma_y});
  }
  for (std::size_t s = 0; s < scope_.slots(); ++s) {
    means_.push_back(store.add_parameter(name + ".mu", scope_.tag(s), Tensor::from({n_maps, 2}, mu)));
    log_sigmas_.push_back(
        store.add_parameter(name + ".log_sigma", scope_.tag(s), Tensor::from({n_maps, 2}, ls)));
  }
}

Tensor GaussianPriorBank::render(const DomainId& domain, std::size_t height,
                                 std::size_t width) const {
  const std::size_t s = scope_.slot(domain);
  return render_priors(means_[s], log_sigmas_[s], height, width);
}

DomainAdaptiveFusion::DomainAdaptiveFusion(ParameterStore& store, const std::string& name,
                                           std::size_t channels, DomainScope scope,
                                           std::uint64_t seed)
    : scope_(std::move(scope)), channels_(channels) {
  const Tensor init = kaiming_normal({1, channels, 1, 1}, channels, seed, name + ".weight");
  for (std::size_t s = 0; s < scope_.slots(); ++s) {
    weight_.push_back(store.add_parameter(name + ".weight", scope_.tag(s), init.clone()));
    bias_.push_back(store.add_parameter(name + ".bias", scope_.tag(s), Tensor::zeros({1})));
  }
}

Tensor DomainAdaptiveFusion::forward(const Tensor& input, const DomainId& domain) const {
  if (input.rank() != 4 || input.dim(1) != channels_) {
    throw DimensionError("fusion: expected " + std::to_string(channels_) +
                         " input channels (axis 1), got shape " + shape_string(input.shape()));
  }
  const std::size_t s = scope_.slot(domain);
  return conv2d(input, weight_[s], bias_[s]);
}

Tensor gaussian_kernel(std::size_t size, double sigma) {
  std::vector<double> k(size * size);
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j < size; ++j) {
      const double dy = static_cast<double>(i) - c;
      const double dx = static_cast<double>(j) - c;
      k[i * size + j] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      total += k[i * size + j];
    }
  }
  for (auto& v : k) v /= total;
  return Tensor::from({1, 1, size, size}, std::move(k));
}

DomainAdaptiveSmoothing::DomainAdaptiveSmoothing(ParameterStore& store, const std::string& name,
                                                 std::size_t kernel_size, double init_sigma,
                                                 DomainScope scope)
    : scope_(std::move(scope)), size_(kernel_size) {
  if (kernel_size % 2 == 0) throw BuildError(name + ": smoothing kernel size must be odd");
  const Tensor init = gaussian_kernel(kernel_size, init_sigma);
  for (std::size_t s = 0; s < scope_.slots(); ++s) {
    kernel_.push_back(store.add_parameter(name + ".kernel", scope_.tag(s), init.clone()));
  }
}

Tensor DomainAdaptiveSmoothing::forward(const Tensor& input, const DomainId& domain) const {
  if (input.rank() != 4 || input.dim(1) != 1) {
    throw ContractError("smoothing: expected a single-channel map, got " +
                        shape_string(input.shape()));
  }
  const std::size_t s = scope_.slot(domain);
  return conv2d(input, kernel_[s], {}, 1, size_ / 2, 1);
}

ConvGRUCell::ConvGRUCell(ParameterStore& store, const std::string& name, std::size_t in_channels,
                         std::size_t hidden_channels, double recurrent_dropout, std::uint64_t seed)
    : in_(in_channels),
      hidden_(hidden_channels),
      dropout_(recurrent_dropout),
      layer_key_(string_key(name)) {
  const std::size_t joint = in_channels + hidden_channels;
  gate_dw_ = Conv2d(store, name + ".gate_dw", joint, joint, 3, 1, joint, false, false, seed);
  update_pw_ = Conv2d(store, name + ".update_pw", joint, hidden_channels, 1, 1, 1, true, false, seed);
  reset_pw_ = Conv2d(store, name + ".reset_pw", joint, hidden_channels, 1, 1, 1, true, false, seed);
  cand_dw_ = Conv2d(store, name + ".candidate_dw", joint, joint, 3, 1, joint, false, false, seed);
  cand_pw_ = Conv2d(store, name + ".candidate_pw", joint, hidden_channels, 1, 1, 1, true, false, seed);
}

std::vector<Tensor> ConvGRUCell::parameters() const {
  std::vector<Tensor> out;
  for (const Conv2d* c : {&gate_dw_, &update_pw_, &reset_pw_, &cand_dw_, &cand_pw_}) {
    out.push_back(c->weight());
    if (c->bias().defined()) out.push_back(c->bias());
  }
  return out;
}

Tensor ConvGRUCell::step(const Tensor& x, BypassCGRUState& state, const ForwardContext& ctx) const {
  if (x.rank() != 4 || x.dim(1) != in_) {
    throw DimensionError("cgru: expected " + std::to_string(in_) +
                         " input channels (axis 1), got shape " + shape_string(x.shape()));
  }
  const Shape hidden_shape{x.dim(0), hidden_, x.dim(2), x.dim(3)};
  Tensor h = state.hidden.defined() ? state.hidden : Tensor::zeros(hidden_shape);
  if (h.shape() != hidden_shape) {
    throw DimensionError("cgru: hidden state shape " + shape_string(h.shape()) +
                         " incompatible with input " + shape_string(x.shape()));
  }

  const Tensor joint = concat_channels({x, h});
  const Tensor mixed = gate_dw_.forward(joint);
  const Tensor z = sigmoid(update_pw_.forward(mixed));
  const Tensor r = sigmoid(reset_pw_.forward(mixed));

  Tensor h_drop = h;
  if (ctx.training && dropout_ > 0.0) {
    if (!state.dropout_mask.defined() || state.dropout_mask.shape() != hidden_shape) {
      const std::uint64_t base = hash_combine(hash_combine(ctx.seed, layer_key_), ctx.step);
      const double scale = 1.0 / (1.0 - dropout_);
      std::vector<double> mask(shape_numel(hidden_shape));
      for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = key_to_unit(hash_combine(base, i)) >= dropout_ ? scale : 0.0;
      }
      state.dropout_mask = Tensor::from(hidden_shape, std::move(mask));
    }
    h_drop = mask_multiply(h, state.dropout_mask);
  }

  const Tensor candidate =
      tanh(cand_pw_.forward(cand_dw_.forward(concat_channels({x, mul(r, h_drop)}))));
  Tensor h_new = add(h, mul(z, sub(candidate, h)));
  state.hidden = h_new;
  ++state.steps;
  return h_new;
}

BypassRNN::BypassRNN(ParameterStore& store, const std::string& name, std::size_t channels,
                     std::size_t hidden_channels, double recurrent_dropout, std::uint64_t seed)
    : cell_(store, name + ".cgru", channels, hidden_channels, recurrent_dropout, seed),
      post_(store, name + ".post_pw", hidden_channels, channels, 1, 1, 1, true, false, seed) {}

std::vector<Tensor> BypassRNN::parameters() const {
  auto out = cell_.parameters();
  out.push_back(post_.weight());
  out.push_back(post_.bias());
  return out;
}

Tensor BypassRNN::forward(const Tensor& features, const DomainId& domain, BypassCGRUState& state,
                          const ForwardContext& ctx) const {
  if (features.rank() != 5) {
    throw DimensionError("bypass rnn: expected T x N x C x h x w features, got " +
                         shape_string(features.shape()));
  }
  const std::size_t steps = features.dim(0);
  if (domain.is_static() || ctx.static_input) {
    if (steps != 1) {
      throw ContractError("bypass rnn: static input under domain '" + domain.name + "' requires T = 1, got " +
                          std::to_string(steps));
    }
    return features;
  }
  const Shape frame{features.dim(1), features.dim(2), features.dim(3), features.dim(4)};
  const Shape row{1, features.dim(1), features.dim(2), features.dim(3), features.dim(4)};
  std::vector<Tensor> outputs;
  outputs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const Tensor x = reshape(slice_batch(features, t, 1), frame);
    const Tensor h = cell_.step(x, state, ctx);
    outputs.push_back(reshape(add(x, post_.forward(h)), row));
  }
  return concat_batch(outputs);
}

}  // namespace unisal

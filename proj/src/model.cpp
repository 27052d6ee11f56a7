#include "unisal/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "unisal/errors.hpp"
#include "unisal/ops.hpp"

namespace unisal {

std::size_t ModelConfig::scaled(std::size_t channels) const {
  const auto c = static_cast<std::size_t>(std::lround(static_cast<double>(channels) * width_multiplier));
  return std::max<std::size_t>(1, c);
}

ModelConfig ModelConfig::full() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.width_multiplier = 0.25;
  for (auto& s : c.encoder_stages) s.repeats = 1;
  // Inputs are 1/8 of 288x384 per side; the smoothing kernel shrinks with them.
  c.smoothing_kernel = 9;
  c.smoothing_sigma = 1.5;
  return c;
}

namespace {

std::string stages_to_text(const std::vector<StageSpec>& stages) {
  std::ostringstream out;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (i) out << ',';
    out << stages[i].expansion << ':' << stages[i].channels << ':' << stages[i].stride << ':'
        << stages[i].repeats;
  }
  return out.str();
}

std::vector<StageSpec> stages_from_text(const std::string& text) {
  std::vector<StageSpec> stages;
  for (const auto& item : split(text, ',')) {
    const auto f = split(trim(item), ':');
    if (f.size() != 4) throw ConfigError("encoder stage '" + item + "' is not t:c:s:r");
    try {
      stages.push_back({std::stoul(f[0]), std::stoul(f[1]), std::stoul(f[2]), std::stoul(f[3])});
    } catch (const std::exception&) {
      throw ConfigError("encoder stage '" + item + "' has a non-numeric field");
    }
  }
  return stages;
}

std::string tap_to_text(const SkipTap& t) {
  return std::to_string(t.scale) + ":" + std::to_string(t.channels);
}

SkipTap tap_from_text(const std::string& text) {
  const auto f = split(text, ':');
  if (f.size() != 2) throw ConfigError("skip tap '" + text + "' is not scale:channels");
  return {std::stoul(f[0]), std::stoul(f[1])};
}

}  // namespace

void ModelConfig::to_key_values(KeyValues& kv, const std::string& p) const {
  kv.set(p + "stem_channels", stem_channels);
  kv.set(p + "encoder_stages", stages_to_text(encoder_stages));
  kv.set(p + "encoder_out_channels", encoder_out_channels);
  kv.set(p + "n_prior_maps", n_prior_maps);
  kv.set(p + "rnn_channels", rnn_channels);
  kv.set(p + "skip2x_tap", tap_to_text(skip2x_tap));
  kv.set(p + "skip4x_tap", tap_to_text(skip4x_tap));
  kv.set(p + "skip2x_hidden", skip2x_hidden);
  kv.set(p + "skip2x_out", skip2x_out);
  kv.set(p + "skip4x_hidden", skip4x_hidden);
  kv.set(p + "skip4x_out", skip4x_out);
  kv.set(p + "us2_hidden", us2_hidden);
  kv.set(p + "us2_out", us2_out);
  kv.set(p + "post_us2_nominal_in", post_us2_nominal_in);
  kv.set(p + "post_us2_hidden", post_us2_hidden);
  kv.set(p + "post_us2_out", post_us2_out);
  kv.set(p + "smoothing_kernel", smoothing_kernel);
  kv.set(p + "smoothing_sigma", smoothing_sigma);
  kv.set(p + "skip_dropout", skip_dropout);
  kv.set(p + "rnn_dropout", rnn_dropout);
  kv.set(p + "width_multiplier", width_multiplier);
  kv.set(p + "bn_momentum", bn_momentum);
  kv.set(p + "domain_adaptive", domain_adaptive);
  kv.set(p + "encoder_bn_frozen", encoder_bn_frozen);
}

ModelConfig ModelConfig::from_key_values(const KeyValues& kv, const std::string& p) {
  ModelConfig c;
  if (kv.get(p + "preset", "") == "desk") c = desk();
  c.stem_channels = kv.get_size(p + "stem_channels", c.stem_channels);
  if (auto s = kv.find(p + "encoder_stages")) c.encoder_stages = stages_from_text(*s);
  c.encoder_out_channels = kv.get_size(p + "encoder_out_channels", c.encoder_out_channels);
  c.n_prior_maps = kv.get_size(p + "n_prior_maps", c.n_prior_maps);
  c.rnn_channels = kv.get_size(p + "rnn_channels", c.rnn_channels);
  if (auto s = kv.find(p + "skip2x_tap")) c.skip2x_tap = tap_from_text(*s);
  if (auto s = kv.find(p + "skip4x_tap")) c.skip4x_tap = tap_from_text(*s);
  c.skip2x_hidden = kv.get_size(p + "skip2x_hidden", c.skip2x_hidden);
  c.skip2x_out = kv.get_size(p + "skip2x_out", c.skip2x_out);
  c.skip4x_hidden = kv.get_size(p + "skip4x_hidden", c.skip4x_hidden);
  c.skip4x_out = kv.get_size(p + "skip4x_out", c.skip4x_out);
  c.us2_hidden = kv.get_size(p + "us2_hidden", c.us2_hidden);
  c.us2_out = kv.get_size(p + "us2_out", c.us2_out);
  c.post_us2_nominal_in = kv.get_size(p + "post_us2_nominal_in", c.post_us2_nominal_in);
  c.post_us2_hidden = kv.get_size(p + "post_us2_hidden", c.post_us2_hidden);
  c.post_us2_out = kv.get_size(p + "post_us2_out", c.post_us2_out);
  c.smoothing_kernel = kv.get_size(p + "smoothing_kernel", c.smoothing_kernel);
  c.smoothing_sigma = kv.get_double(p + "smoothing_sigma", c.smoothing_sigma);
  c.skip_dropout = kv.get_double(p + "skip_dropout", c.skip_dropout);
  c.rnn_dropout = kv.get_double(p + "rnn_dropout", c.rnn_dropout);
  c.width_multiplier = kv.get_double(p + "width_multiplier", c.width_multiplier);
  c.bn_momentum = kv.get_double(p + "bn_momentum", c.bn_momentum);
  c.domain_adaptive = kv.get_bool(p + "domain_adaptive", c.domain_adaptive);
  c.encoder_bn_frozen = kv.get_bool(p + "encoder_bn_frozen", c.encoder_bn_frozen);
  return c;
}

const ModuleWiring& BuildReport::at(const std::string& module) const {
  for (const auto& m : modules) {
    if (m.module == module) return m;
  }
  throw ContractError("build report has no module '" + module + "'");
}

std::string BuildReport::to_text() const {
  std::ostringstream out;
  for (const auto& m : modules) {
    out << m.module << ':';
    for (std::size_t i = 0; i < m.operations.size(); ++i) out << (i ? ", " : " ") << m.operations[i];
    out << '\n';
    if (!m.note.empty()) out << "  note: " << m.note << '\n';
  }
  return out.str();
}

const ModuleParamCount& ParamReport::at(const std::string& module) const {
  for (const auto& m : modules) {
    if (m.module == module) return m;
  }
  throw ContractError("parameter report has no module '" + module + "'");
}

std::string ParamReport::to_text() const {
  std::ostringstream out;
  out << "module shared domain_private\n";
  for (const auto& m : modules) out << m.module << ' ' << m.shared << ' ' << m.domain_private << '\n';
  out << "total_shared " << shared << '\n'
      << "total_domain_private " << domain_private << " over " << n_domains << " domains\n"
      << "total " << total << '\n'
      << "bytes_fp32 " << bytes_fp32 << '\n';
  return out.str();
}

std::vector<double> SaliencyOutput::frame(std::size_t t, std::size_t n) const {
  const std::size_t plane = maps.dim(3) * maps.dim(4);
  const auto d = maps.data();
  const std::size_t off = (t * maps.dim(1) + n) * plane;
  return {d.begin() + static_cast<std::ptrdiff_t>(off),
          d.begin() + static_cast<std::ptrdiff_t>(off + plane)};
}

UnisalModel UnisalModel::build(const ModelConfig& config,
                               std::shared_ptr<const DomainRegistry> registry, std::uint64_t seed) {
  if (!registry || registry->size() == 0) throw BuildError("model needs at least one domain");
  if (config.width_multiplier <= 0.0) throw BuildError("width multiplier must be positive");
  if (config.smoothing_kernel % 2 == 0) throw BuildError("Smoothing: kernel size must be odd");
  if (config.n_prior_maps == 0) throw BuildError("Priors: need at least one prior map");

  UnisalModel m;
  m.config_ = config;
  m.registry_ = registry;
  auto& st = m.store_;
  const auto& c = config;
  const double mom = c.bn_momentum;
  const DomainScope enc = DomainScope::shared();
  const DomainScope da(registry, c.domain_adaptive);

  // Encoder.
  std::size_t width = c.scaled(c.stem_channels);
  m.stem_ = ConvBlock(st, "encoder.stem", ConvKind::Full, 3, width, 2, true, enc, true, mom, seed);
  std::size_t scale = 1;
  std::size_t index = 0;
  for (const auto& stage : c.encoder_stages) {
    if (stage.stride != 1 && stage.stride != 2) throw BuildError("encoder: stage stride must be 1 or 2");
    for (std::size_t r = 0; r < stage.repeats; ++r, ++index) {
      const std::size_t stride = r == 0 ? stage.stride : 1;
      const std::size_t out = c.scaled(stage.channels);
      const std::size_t hidden = width * stage.expansion;
      const std::string name = "encoder.block" + std::to_string(index);
      InvertedResidual b;
      b.has_expand = stage.expansion != 1;
      if (b.has_expand) {
        b.expand = ConvBlock(st, name + ".expand", ConvKind::Pointwise, width, hidden, 1, true, enc,
                             true, mom, seed);
      }
      b.depthwise = ConvBlock(st, name + ".dw", ConvKind::Depthwise, hidden, hidden, stride, true,
                              enc, true, mom, seed);
      b.project = ConvBlock(st, name + ".project", ConvKind::Pointwise, hidden, out, 1, false, enc,
                            true, mom, seed);
      b.residual = stride == 1 && width == out;
      if (stride == 2) ++scale;
      b.scale = scale;
      m.blocks_.push_back(std::move(b));
      width = out;
    }
  }
  const std::size_t encoder_scale = scale;
  const std::size_t enc_out = c.scaled(c.encoder_out_channels);
  m.head_ = ConvBlock(st, "encoder.head", ConvKind::Pointwise, width, enc_out, 1, true, enc, true,
                      mom, seed);

  auto find_tap = [&](const SkipTap& tap, const std::string& junction) {
    std::size_t found = m.blocks_.size();
    for (std::size_t i = 0; i < m.blocks_.size(); ++i) {
      if (m.blocks_[i].scale == tap.scale) found = i;
    }
    if (found == m.blocks_.size()) {
      throw BuildError(junction + ": encoder has no block at scale " + std::to_string(tap.scale));
    }
    const std::size_t have = m.blocks_[found].project.out_channels();
    if (have != c.scaled(tap.channels)) {
      throw BuildError(junction + ": encoder tap at scale " + std::to_string(tap.scale) + " has " +
                       std::to_string(have) + " channels, expected " +
                       std::to_string(c.scaled(tap.channels)));
    }
    return found;
  };
  if (c.skip2x_tap.scale + 1 != encoder_scale || c.skip4x_tap.scale + 2 != encoder_scale) {
    throw BuildError("Skip taps: expected scales " + std::to_string(encoder_scale - 1) + " and " +
                     std::to_string(encoder_scale - 2) + " below the encoder output scale " +
                     std::to_string(encoder_scale));
  }
  m.tap2x_block_ = find_tap(c.skip2x_tap, "Skip-2x");
  m.tap4x_block_ = find_tap(c.skip4x_tap, "Skip-4x");
  const std::size_t tap2x_ch = m.blocks_[m.tap2x_block_].project.out_channels();
  const std::size_t tap4x_ch = m.blocks_[m.tap4x_block_].project.out_channels();

  // Priors and Post-CNN.
  m.priors_ = GaussianPriorBank(st, "priors", c.n_prior_maps, da, seed);
  const std::size_t post_in = enc_out + c.n_prior_maps;
  const std::size_t rnn_ch = c.scaled(c.rnn_channels);
  m.post_dw_ = conv_dw(st, "postcnn.dw", post_in, 1, da, false, mom, seed);
  m.post_pw_ = conv_pw(st, "postcnn.pw", post_in, rnn_ch, da, false, mom, seed);
  m.rnn_ = BypassRNN(st, "rnn", rnn_ch, rnn_ch, c.rnn_dropout, seed);

  // Decoder.
  const std::size_t s2h = c.scaled(c.skip2x_hidden), s2o = c.scaled(c.skip2x_out);
  const std::size_t s4h = c.scaled(c.skip4x_hidden), s4o = c.scaled(c.skip4x_out);
  m.skip2x_a_ = conv_pw(st, "skip2x.pw1", tap2x_ch, s2h, da, false, mom, seed);
  m.skip2x_b_ = conv_pw(st, "skip2x.pw2", s2h, s2o, da, false, mom, seed);
  m.skip4x_a_ = conv_pw(st, "skip4x.pw1", tap4x_ch, s4h, da, false, mom, seed);
  m.skip4x_b_ = conv_pw(st, "skip4x.pw2", s4h, s4o, da, false, mom, seed);

  const std::size_t us2_in = rnn_ch + s2o;
  const std::size_t us2h = c.scaled(c.us2_hidden), us2o = c.scaled(c.us2_out);
  m.us2_a_ = conv_pw(st, "us2.pw1", us2_in, us2h, da, false, mom, seed);
  m.us2_dw_ = conv_dw(st, "us2.dw", us2h, 1, da, false, mom, seed);
  m.us2_b_ = conv_pw(st, "us2.pw2", us2h, us2o, da, false, mom, seed);

  const std::size_t pu_in = us2o + s4o;
  const std::size_t puh = c.scaled(c.post_us2_hidden), puo = c.scaled(c.post_us2_out);
  m.post_us2_a_ = conv_pw(st, "postus2.pw1", pu_in, puh, da, false, mom, seed);
  m.post_us2_dw_ = conv_dw(st, "postus2.dw", puh, 1, da, false, mom, seed);
  m.post_us2_b_ = conv_pw(st, "postus2.pw2", puh, puo, da, false, mom, seed);

  m.fusion_ = DomainAdaptiveFusion(st, "fusion", puo, da, seed);
  m.smoothing_ = DomainAdaptiveSmoothing(st, "smoothing", c.smoothing_kernel, c.smoothing_sigma, da);

  // Wiring report.
  auto dropout = [](double p) {
    std::ostringstream o;
    o << "DO(" << p << ")";
    return o.str();
  };
  auto up = [](std::size_t ch) { return "Up(" + std::to_string(ch) + ", 2)"; };
  auto pw = [](std::size_t i, std::size_t o) {
    return "ConvPW(" + std::to_string(i) + ", " + std::to_string(o) + ")";
  };
  auto dw = [](std::size_t ch) { return "ConvDW(" + std::to_string(ch) + ")"; };

  auto& rep = m.report_.modules;
  {
    ModuleWiring w{"Post-CNN", {m.post_dw_.describe(), m.post_pw_.describe()},
                   {dw(enc_out), pw(enc_out, rnn_ch)}, {}};
    w.note = "input width " + std::to_string(post_in) + " = encoder " + std::to_string(enc_out) +
             " + " + std::to_string(c.n_prior_maps) + " prior maps (declared " +
             std::to_string(enc_out) + ")";
    rep.push_back(w);
  }
  rep.push_back({"Skip-4x", {m.skip4x_a_.describe(), dropout(c.skip_dropout), m.skip4x_b_.describe()},
                 {pw(tap4x_ch, s4h), dropout(c.skip_dropout), pw(s4h, s4o)}, {}});
  rep.push_back({"Skip-2x", {m.skip2x_a_.describe(), dropout(c.skip_dropout), m.skip2x_b_.describe()},
                 {pw(tap2x_ch, s2h), dropout(c.skip_dropout), pw(s2h, s2o)}, {}});
  rep.push_back({"US1", {up(rnn_ch)}, {up(rnn_ch)}, {}});
  rep.push_back({"US2",
                 {m.us2_a_.describe(), m.us2_dw_.describe(), m.us2_b_.describe(), up(us2o)},
                 {pw(us2_in, us2h), dw(us2h), pw(us2h, us2o), up(us2o)}, {}});
  {
    const std::size_t declared = c.scaled(c.post_us2_nominal_in);
    ModuleWiring w{"Post-US2",
                   {m.post_us2_a_.describe(), m.post_us2_dw_.describe(), m.post_us2_b_.describe()},
                   {pw(declared, puh), dw(puh), pw(puh, puo)}, {}};
    if (declared != pu_in) {
      w.note = "input width " + std::to_string(pu_in) + " = US2 " + std::to_string(us2o) +
               " + Skip-4x " + std::to_string(s4o) + " (declared " + std::to_string(declared) + ")";
    }
    rep.push_back(w);
  }
  rep.push_back({"Fusion", {pw(puo, 1)}, {pw(puo, 1)}, {}});
  rep.push_back({"Smoothing",
                 {"Conv(" + std::to_string(c.smoothing_kernel) + "x" +
                  std::to_string(c.smoothing_kernel) + ")"},
                 {}, {}});
  return m;
}

SaliencyOutput UnisalModel::forward_image(const Tensor& images, const DomainId& domain,
                                          const ForwardContext& ctx) const {
  registry_->require(domain);
  if (!domain.is_static()) {
    throw ContractError("forward_image: domain '" + domain.name + "' is dynamic");
  }
  if (images.rank() != 4) {
    throw DimensionError("forward_image: expected N x 3 x H x W, got " + shape_string(images.shape()));
  }
  BypassCGRUState state;
  Shape s{1};
  s.insert(s.end(), images.shape().begin(), images.shape().end());
  return forward(reshape(images, s), domain, ctx, state);
}

SaliencyOutput UnisalModel::forward_clip(const Tensor& clip, const DomainId& domain,
                                         const ForwardContext& ctx) const {
  registry_->require(domain);
  if (domain.is_static()) {
    throw ContractError("forward_clip: domain '" + domain.name + "' is static");
  }
  BypassCGRUState state;
  return forward(clip, domain, ctx, state);
}

SaliencyOutput UnisalModel::forward(const Tensor& frames, const DomainId& domain,
                                    const ForwardContext& ctx, BypassCGRUState& state,
                                    ForwardTrace* trace) const {
  registry_->require(domain);
  if (frames.rank() != 5 || frames.dim(2) != 3) {
    throw DimensionError("forward: expected T x N x 3 x H x W frames, got " +
                         shape_string(frames.shape()));
  }
  const std::size_t steps = frames.dim(0), batch = frames.dim(1);
  const std::size_t height = frames.dim(3), width = frames.dim(4);
  if (steps == 0 || batch == 0) throw ContractError("forward: empty clip");
  if (height != domain.input_resolution.height || width != domain.input_resolution.width) {
    throw ContractError("forward: input " + std::to_string(height) + "x" + std::to_string(width) +
                        " does not match domain '" + domain.name + "' resolution " +
                        std::to_string(domain.input_resolution.height) + "x" +
                        std::to_string(domain.input_resolution.width));
  }
  if (domain.is_static() && steps != 1) {
    throw ContractError("forward: static domain '" + domain.name + "' requires T = 1");
  }
  const bool train = ctx.training;
  const bool frozen = config_.encoder_bn_frozen;
  const std::size_t n = steps * batch;

  Tensor x = reshape(frames, {n, 3, height, width});
  x = stem_.forward(x, domain, train, frozen);
  Tensor tap2x, tap4x;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& b = blocks_[i];
    Tensor y = x;
    if (b.has_expand) y = b.expand.forward(y, domain, train, frozen);
    y = b.depthwise.forward(y, domain, train, frozen);
    y = b.project.forward(y, domain, train, frozen);
    x = b.residual ? add(x, y) : y;
    if (i == tap2x_block_) tap2x = x;
    if (i == tap4x_block_) tap4x = x;
  }
  x = head_.forward(x, domain, train, frozen);

  const std::size_t h5 = x.dim(2), w5 = x.dim(3);
  const Tensor priors = repeat_batch(priors_.render(domain, h5, w5), n);
  x = concat_channels({x, priors});
  x = post_dw_.forward(x, domain, train);
  x = post_pw_.forward(x, domain, train);

  const std::size_t rnn_channels = x.dim(1);
  const Tensor rnn_in = reshape(x, {steps, batch, rnn_channels, h5, w5});
  const Tensor rnn_out = rnn_.forward(rnn_in, domain, state, ctx);
  if (trace) {
    trace->rnn_input = rnn_in;
    trace->rnn_output = rnn_out;
  }
  x = reshape(rnn_out, {n, rnn_channels, h5, w5});

  static const std::uint64_t skip2x_key = string_key("skip2x.dropout");
  static const std::uint64_t skip4x_key = string_key("skip4x.dropout");
  Tensor s2 = skip2x_a_.forward(tap2x, domain, train);
  s2 = dropout2d(s2, config_.skip_dropout, train, {ctx.seed, skip2x_key, ctx.step});
  s2 = skip2x_b_.forward(s2, domain, train);
  x = resize(x, s2.dim(2), s2.dim(3), Interpolation::Bilinear);
  x = concat_channels({x, s2});

  x = us2_a_.forward(x, domain, train);
  x = us2_dw_.forward(x, domain, train);
  x = us2_b_.forward(x, domain, train);
  Tensor s4 = skip4x_a_.forward(tap4x, domain, train);
  s4 = dropout2d(s4, config_.skip_dropout, train, {ctx.seed, skip4x_key, ctx.step});
  s4 = skip4x_b_.forward(s4, domain, train);
  x = resize(x, s4.dim(2), s4.dim(3), Interpolation::Bilinear);
  x = concat_channels({x, s4});

  x = post_us2_a_.forward(x, domain, train);
  x = post_us2_dw_.forward(x, domain, train);
  x = post_us2_b_.forward(x, domain, train);
  x = fusion_.forward(x, domain);
  x = resize(x, height, width, Interpolation::Nearest);
  x = smoothing_.forward(x, domain);
  x = softmax_spatial(x);
  return SaliencyOutput{reshape(x, {steps, batch, 1, height, width})};
}

std::vector<Tensor> UnisalModel::shared_parameters() const {
  std::vector<Tensor> out;
  for (const auto& e : store_.entries()) {
    if (e.role == ParamRole::Parameter && e.domain == kSharedTag) out.push_back(e.value);
  }
  return out;
}

std::vector<Tensor> UnisalModel::private_parameters(const DomainId& domain) const {
  registry_->require(domain);
  std::vector<Tensor> out;
  if (!config_.domain_adaptive) return out;
  for (const auto& e : store_.entries()) {
    if (e.role == ParamRole::Parameter && e.domain == static_cast<int>(domain.index)) {
      out.push_back(e.value);
    }
  }
  return out;
}

void UnisalModel::copy_private_set(const DomainId& source, const DomainId& target) {
  registry_->require(source);
  registry_->require(target);
  if (!config_.domain_adaptive) return;
  for (auto& e : store_.entries()) {
    if (e.domain != static_cast<int>(target.index)) continue;
    const auto* src = store_.find(e.name, static_cast<int>(source.index));
    if (!src) throw ContractError("private tensor '" + e.name + "' missing for source domain");
    auto dst = e.value.mutable_data();
    std::copy(src->value.data().begin(), src->value.data().end(), dst.begin());
  }
}

ParamReport param_report(const UnisalModel& model) {
  ParamReport r;
  r.n_domains = model.registry().size();
  std::map<std::string, std::size_t> index;
  for (const auto& e : model.store().entries()) {
    if (e.role != ParamRole::Parameter) continue;
    const std::string module = e.name.substr(0, e.name.find('.'));
    auto it = index.find(module);
    if (it == index.end()) {
      it = index.emplace(module, r.modules.size()).first;
      r.modules.push_back({module, 0, 0});
    }
    auto& m = r.modules[it->second];
    if (e.domain == kSharedTag) {
      m.shared += e.value.numel();
      r.shared += e.value.numel();
    } else {
      m.domain_private += e.value.numel();
      r.domain_private += e.value.numel();
    }
  }
  r.total = r.shared + r.domain_private;
  r.bytes_fp32 = 4 * r.total;
  return r;
}

}  // namespace unisal

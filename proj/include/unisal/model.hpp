#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "unisal/config.hpp"
#include "unisal/domain.hpp"
#include "unisal/domain_adaptive.hpp"
#include "unisal/layers.hpp"
#include "unisal/params.hpp"

namespace unisal {

/// Inverted-residual stage: `repeats` blocks, the first with `stride`.
struct StageSpec {
  std::size_t expansion = 6;
  std::size_t channels = 0;
  std::size_t stride = 1;
  std::size_t repeats = 1;
  friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

/// Encoder feature map feeding a skip branch: the last block output at
/// scale 1 / 2^scale, expected to have `channels` (before width scaling).
struct SkipTap {
  std::size_t scale = 0;
  std::size_t channels = 0;
  friend bool operator==(const SkipTap&, const SkipTap&) = default;
};

struct ModelConfig {
  std::size_t stem_channels = 32;
  std::vector<StageSpec> encoder_stages = {{1, 16, 1, 1},  {6, 24, 2, 2}, {6, 32, 2, 3},
                                           {6, 64, 1, 4},  {6, 96, 2, 3}, {6, 160, 1, 3},
                                           {6, 320, 2, 1}};
  std::size_t encoder_out_channels = 1280;
  std::size_t n_prior_maps = 16;
  std::size_t rnn_channels = 256;
  SkipTap skip2x_tap{4, 160};
  SkipTap skip4x_tap{3, 64};
  std::size_t skip2x_hidden = 256;
  std::size_t skip2x_out = 128;
  std::size_t skip4x_hidden = 128;
  std::size_t skip4x_out = 64;
  std::size_t us2_hidden = 768;
  std::size_t us2_out = 128;
  /// Declared input width of Post-US2; the wiring uses the true
  /// concatenation width and logs the difference.
  std::size_t post_us2_nominal_in = 200;
  std::size_t post_us2_hidden = 400;
  std::size_t post_us2_out = 64;
  std::size_t smoothing_kernel = 41;
  double smoothing_sigma = 6.0;
  double skip_dropout = 0.6;
  double rnn_dropout = 0.2;
  double width_multiplier = 1.0;
  double bn_momentum = 0.1;
  /// False shares the priors, fusion, smoothing and normalization across
  /// all domains (the non-adaptive ablation).
  bool domain_adaptive = true;
  /// Encoder normalization always uses (and never updates) running stats.
  bool encoder_bn_frozen = false;

  /// Channel count after width scaling (at least 1).
  std::size_t scaled(std::size_t channels) const;

  /// Full-width configuration.
  static ModelConfig full();
  /// Quarter-width configuration with one block per stage and a 9x9, sigma 1.5
  /// smoothing kernel, for CPU-scale runs at 36x48.
  static ModelConfig desk();

  void to_key_values(KeyValues& kv, const std::string& prefix = "model.") const;
  static ModelConfig from_key_values(const KeyValues& kv, const std::string& prefix = "model.");
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// One row of the wiring report: the operations a module runs, the widths
/// the reference table declares for it, and any adjustment.
struct ModuleWiring {
  std::string module;
  std::vector<std::string> operations;
  std::vector<std::string> nominal;
  std::string note;
};

struct BuildReport {
  std::vector<ModuleWiring> modules;
  const ModuleWiring& at(const std::string& module) const;
  std::string to_text() const;
};

struct ModuleParamCount {
  std::string module;
  std::size_t shared = 0;
  std::size_t domain_private = 0;  // summed over all domains
};

struct ParamReport {
  std::vector<ModuleParamCount> modules;
  std::size_t shared = 0;
  std::size_t domain_private = 0;
  std::size_t total = 0;
  std::size_t n_domains = 0;
  /// Storage size if parameters were kept as 32-bit floats.
  std::size_t bytes_fp32 = 0;
  const ModuleParamCount& at(const std::string& module) const;
  std::string to_text() const;
};

/// Probability maps T x N x 1 x H x W; every (t, n) map sums to one.
struct SaliencyOutput {
  Tensor maps;
  std::size_t frames() const { return maps.dim(0); }
  std::size_t batch() const { return maps.dim(1); }
  /// Values of one H x W map.
  std::vector<double> frame(std::size_t t, std::size_t n) const;
};

/// Intermediate tensors exposed for inspection.
struct ForwardTrace {
  /// T x N x C x h x w input and output of the Bypass-RNN block.
  Tensor rnn_input;
  Tensor rnn_output;
};

/// Encoder -> priors -> Post-CNN -> Bypass-RNN -> decoder with skips ->
/// fusion -> nearest upsampling -> smoothing -> spatial softmax.
class UnisalModel {
 public:
  static UnisalModel build(const ModelConfig& config,
                           std::shared_ptr<const DomainRegistry> registry, std::uint64_t seed);

  UnisalModel(UnisalModel&&) noexcept = default;
  UnisalModel& operator=(UnisalModel&&) noexcept = default;
  UnisalModel(const UnisalModel&) = delete;
  UnisalModel& operator=(const UnisalModel&) = delete;

  /// Static domain; `images` is N x 3 x H x W at the domain resolution.
  SaliencyOutput forward_image(const Tensor& images, const DomainId& domain,
                               const ForwardContext& ctx) const;
  /// Dynamic domain; `clip` is T x N x 3 x H x W. One recurrent state is
  /// threaded through the clip.
  SaliencyOutput forward_clip(const Tensor& clip, const DomainId& domain,
                              const ForwardContext& ctx) const;
  /// Either modality; `frames` is T x N x 3 x H x W (T = 1 for static).
  SaliencyOutput forward(const Tensor& frames, const DomainId& domain, const ForwardContext& ctx,
                         BypassCGRUState& state, ForwardTrace* trace = nullptr) const;

  const ModelConfig& config() const { return config_; }
  const DomainRegistry& registry() const { return *registry_; }
  std::shared_ptr<const DomainRegistry> registry_ptr() const { return registry_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  const BuildReport& build_report() const { return report_; }

  std::vector<Tensor> shared_parameters() const;
  std::vector<Tensor> private_parameters(const DomainId& domain) const;
  const BypassRNN& rnn() const { return rnn_; }

  /// Copies every private tensor (parameters and buffers) of `source` onto
  /// the private set of `target`.
  void copy_private_set(const DomainId& source, const DomainId& target);

 private:
  UnisalModel() = default;

  struct InvertedResidual {
    bool has_expand = false;
    ConvBlock expand, depthwise, project;
    bool residual = false;
    std::size_t scale = 0;
  };

  ModelConfig config_;
  std::shared_ptr<const DomainRegistry> registry_;
  ParameterStore store_;
  BuildReport report_;

  ConvBlock stem_;
  std::vector<InvertedResidual> blocks_;
  ConvBlock head_;
  std::size_t tap2x_block_ = 0, tap4x_block_ = 0;

  GaussianPriorBank priors_;
  ConvBlock post_dw_, post_pw_;
  BypassRNN rnn_;
  ConvBlock skip2x_a_, skip2x_b_;
  ConvBlock skip4x_a_, skip4x_b_;
  ConvBlock us2_a_, us2_dw_, us2_b_;
  ConvBlock post_us2_a_, post_us2_dw_, post_us2_b_;
  DomainAdaptiveFusion fusion_;
  DomainAdaptiveSmoothing smoothing_;
};

ParamReport param_report(const UnisalModel& model);

}  // namespace unisal

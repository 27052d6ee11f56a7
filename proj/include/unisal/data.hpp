#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "unisal/domain.hpp"
#include "unisal/image_io.hpp"
#include "unisal/metrics.hpp"
#include "unisal/tensor.hpp"

namespace unisal {

using LogSink = std::function<void(std::string_view)>;

/// Frames at the domain resolution with per-frame targets. Static samples
/// have exactly one frame.
struct Sample {
  std::string id;
  DomainId domain;
  std::vector<Image> frames;  // RGB
  std::vector<FixationMap> fixations;
  std::vector<SaliencyMap> saliency;
  /// Source fixations that landed on an already fixated target pixel.
  std::size_t fixation_collisions = 0;

  std::size_t frame_count() const { return frames.size(); }
};

/// Contents of `<root>/manifest.txt`.
struct DatasetManifest {
  std::string name;
  Modality modality = Modality::Static;
  std::size_t fps = 0;
  Resolution resolution;
};

DatasetManifest read_dataset_manifest(const std::filesystem::path& root);
void write_dataset_manifest(const std::filesystem::path& root, const DatasetManifest& manifest);

/// Fixation coordinates mapped from a source grid to a target grid by the
/// nearest target pixel center. Collisions merge and are counted.
FixationMap resize_fixations(const std::vector<std::pair<std::size_t, std::size_t>>& points,
                             Resolution source, Resolution target, std::size_t* collisions = nullptr);

/// Lazily indexed dataset directory. Sample files are read on first access
/// and cached; frames are resized to the domain resolution.
class Dataset {
 public:
  /// Indexes `root` and checks that every frame has a fixation file and a
  /// saliency map, and that the manifest agrees with `domain`.
  static Dataset load(const std::filesystem::path& root, const DomainId& domain);

  Dataset(Dataset&&) noexcept;
  Dataset& operator=(Dataset&&) noexcept;
  ~Dataset();

  const DomainId& domain() const { return domain_; }
  const std::filesystem::path& root() const { return root_; }
  std::size_t size() const { return entries_.size(); }
  const std::string& sample_id(std::size_t i) const;
  std::size_t frame_count(std::size_t i) const;
  const Sample& sample(std::size_t i) const;

  /// Rebuilds the index from disk and drops the cache.
  void reindex();

 private:
  Dataset() = default;
  struct Entry {
    std::string id;
    std::vector<std::filesystem::path> frames, fixations, saliency;
  };

  std::filesystem::path root_;
  DomainId domain_;
  std::vector<Entry> entries_;
  mutable std::unique_ptr<std::mutex> mutex_;
  mutable std::map<std::size_t, std::shared_ptr<const Sample>> cache_;
};

/// Loads a sample directly (no cache).
Sample load_sample(const std::filesystem::path& sample_dir, const DomainId& domain);

/// Per-domain parameters of the synthetic generator.
struct SyntheticDomainSpec {
  std::string name;
  Modality modality = Modality::Static;
  std::size_t fps = 0;
  Resolution resolution{36, 48};
  std::size_t samples = 8;
  /// Raw frames per dynamic sample.
  std::size_t frames = 60;
  /// Weight of the center Gaussian in the ground truth, in [0, 1].
  double center_bias = 0.3;
  /// Blur of the ground truth in pixels; 0 disables blurring.
  double blur_sigma = 1.5;
  /// Saliency weight of each palette color.
  std::vector<double> color_weights{1.0, 0.0};
  std::size_t blobs = 2;
  std::size_t fixations_per_frame = 12;
  std::uint64_t seed = 0;
};

/// Blob palette used by the generator (RGB in [0, 1]).
const std::vector<std::array<double, 3>>& synthetic_palette();

/// Writes a dataset for `spec` under `root` (manifest plus one directory
/// per sample). The output is a pure function of its SyntheticDomainSpec.
void generate_synthetic(const SyntheticDomainSpec& spec, const std::filesystem::path& root);

/// Gaussian blob in pixel coordinates with a per-frame velocity.
struct SyntheticBlob {
  double row = 0.0, col = 0.0;
  double radius = 1.0;
  std::size_t color = 0;
  double d_row = 0.0, d_col = 0.0;
};

/// Unit-sum ground truth for one frame: weighted blob map blended with the
/// center Gaussian, then blurred and renormalized.
SaliencyMap synthetic_ground_truth(const SyntheticDomainSpec& spec, const std::vector<SyntheticBlob>& blobs);
/// Center Gaussian used as the bias component (unit sum).
SaliencyMap synthetic_center_bias(Resolution resolution);
/// RGB frame showing the blobs on a gray background.
Image synthetic_frame(Resolution resolution, const std::vector<SyntheticBlob>& blobs);

/// Stride that maps `native_fps` onto `target_fps`; ConfigError unless it
/// divides evenly.
std::size_t assimilation_stride(std::size_t native_fps, std::size_t target_fps = 6);
/// Indices 0, stride, 2 stride, ... below `frame_count`.
std::vector<std::size_t> assimilation_indices(std::size_t frame_count, std::size_t native_fps,
                                              std::size_t target_fps = 6);

template <typename T>
std::vector<T> assimilate_frame_rate(const std::vector<T>& frames, std::size_t native_fps,
                                     std::size_t target_fps = 6) {
  std::vector<T> out;
  for (std::size_t i : assimilation_indices(frames.size(), native_fps, target_fps)) out.push_back(frames[i]);
  return out;
}

inline constexpr std::size_t kTargetFps = 6;
inline constexpr std::size_t kClipLength = 12;

/// A window of raw frame indices of one sample.
struct Clip {
  std::size_t sample = 0;
  std::vector<std::size_t> frames;
};

/// One clip per sample at a random offset into the assimilated sequence.
/// Samples shorter than `clip_length` after assimilation are skipped with a
/// warning.
std::vector<Clip> make_clips(const Dataset& dataset, std::size_t clip_length, std::uint64_t seed,
                             const LogSink& warn = {}, std::size_t target_fps = kTargetFps);
std::vector<Clip> make_clips(const std::vector<std::size_t>& frame_counts, std::size_t native_fps,
                             std::size_t clip_length, std::uint64_t seed, const LogSink& warn = {},
                             std::size_t target_fps = kTargetFps);

/// Units (samples or clips) available to the scheduler in one domain.
struct ScheduleSource {
  DomainId domain;
  std::size_t units = 0;
  std::size_t batch_size = 0;
};

/// Domain-pure batch of unit indices.
struct BatchPlan {
  DomainId domain;
  std::vector<std::size_t> units;
};

/// 4 for video domains, 32 for image domains.
std::size_t default_batch_size(const DomainId& domain);

/// Shuffles units within each domain, cuts them into batches (the last one
/// may be short) and interleaves the batches of all domains in a uniformly
/// shuffled order, so each domain's share of the order matches its share of
/// batches.
std::vector<BatchPlan> schedule_epoch(const std::vector<ScheduleSource>& sources, std::uint64_t seed);

/// Input resolution configured for a registered domain.
Resolution resolve_resolution(const DomainRegistry& registry, const std::string& domain_name);

/// Interleaved RGB image as a 3 x H x W planar buffer.
std::vector<double> image_to_planar(const Image& image);
/// Per-channel statistics that model inputs are standardized with (ImageNet).
inline constexpr std::array<double, 3> kInputMean{0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kInputStd{0.229, 0.224, 0.225};
/// Planar RGB standardized per channel: the tensor layout the model consumes.
/// An all-zero model input is therefore the mean-colored image.
std::vector<double> model_input(const Image& rgb);
/// Bilinear resize of an image.
Image resize_image(const Image& image, Resolution target);
/// Gray images replicated to three channels; RGB returned as is.
Image to_rgb(const Image& image);

/// Model inputs and targets of one batch: frames are T x N x 3 x H x W and
/// targets are indexed [t][n].
struct BatchData {
  DomainId domain;
  Tensor frames;
  std::vector<std::vector<SaliencyMap>> saliency;
  std::vector<std::vector<FixationMap>> fixations;
  std::vector<std::string> sample_ids;
};

/// Static: one frame per sample. Dynamic: each unit is an index into
/// `clips`.
BatchData assemble_batch(const Dataset& dataset, const BatchPlan& plan, const std::vector<Clip>& clips = {});

}  // namespace unisal

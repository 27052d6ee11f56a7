#include "unisal/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "unisal/config.hpp"
#include "unisal/errors.hpp"
#include "unisal/ops.hpp"
#include "unisal/rng.hpp"

namespace fs = std::filesystem;

namespace unisal {

namespace {

constexpr const char* kManifestFile = "manifest.txt";

std::string frame_name(std::size_t index, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%05zu%s", index, ext);
  return buf;
}

std::vector<fs::path> sorted_images(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

fs::path find_saliency(const fs::path& dir, const std::string& stem) {
  for (const char* ext : {".png", ".pgm", ".PNG", ".PGM"}) {
    fs::path p = dir / (stem + ext);
    if (fs::is_regular_file(p)) return p;
  }
  return {};
}

std::vector<std::pair<std::size_t, std::size_t>> read_fixation_points(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot read fixation file " + path.string());
  std::vector<std::pair<std::size_t, std::size_t>> points;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream ss(t);
    long long r = -1, c = -1;
    std::string extra;
    if (!(ss >> r >> c) || (ss >> extra) || r < 0 || c < 0) {
      throw IngestionError(path.string() + ":" + std::to_string(line_no) + ": expected \"row col\"");
    }
    points.emplace_back(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
  }
  return points;
}

SaliencyMap to_gray_map(const Image& img) {
  SaliencyMap m(img.height, img.width);
  for (std::size_t r = 0; r < img.height; ++r) {
    for (std::size_t c = 0; c < img.width; ++c) {
      double s = 0.0;
      for (std::size_t ch = 0; ch < img.channels; ++ch) s += img.at(r, c, ch);
      m(r, c) = s / static_cast<double>(img.channels);
    }
  }
  return m;
}

void normalize_sum(std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  if (s > 0.0) {
    for (double& x : v) x /= s;
  }
}

// Separable Gaussian blur; the kernel is renormalized over the part that
// falls inside the map so borders do not lose mass.
void gaussian_blur(SaliencyMap& m, double sigma) {
  if (sigma <= 0.0) return;
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  const auto h = static_cast<std::ptrdiff_t>(m.height), w = static_cast<std::ptrdiff_t>(m.width);
  SaliencyMap tmp(m.height, m.width);
  for (std::ptrdiff_t r = 0; r < h; ++r) {
    for (std::ptrdiff_t c = 0; c < w; ++c) {
      double s = 0.0, mass = 0.0;
      for (std::ptrdiff_t d = -radius; d <= radius; ++d) {
        const std::ptrdiff_t cc = c + d;
        if (cc < 0 || cc >= w) continue;
        s += k[d + radius] * m.values[r * w + cc];
        mass += k[d + radius];
      }
      tmp.values[r * w + c] = s / mass;
    }
  }
  for (std::ptrdiff_t r = 0; r < h; ++r) {
    for (std::ptrdiff_t c = 0; c < w; ++c) {
      double s = 0.0, mass = 0.0;
      for (std::ptrdiff_t d = -radius; d <= radius; ++d) {
        const std::ptrdiff_t rr = r + d;
        if (rr < 0 || rr >= h) continue;
        s += k[d + radius] * tmp.values[rr * w + c];
        mass += k[d + radius];
      }
      m.values[r * w + c] = s / mass;
    }
  }
}

double blob_weight(const SyntheticBlob& b, double r, double c) {
  const double dr = r - b.row, dc = c - b.col;
  return std::exp(-(dr * dr + dc * dc) / (2.0 * b.radius * b.radius));
}

std::vector<std::pair<std::size_t, std::size_t>> sample_fixations(const SaliencyMap& gt, std::size_t count,
                                                                  CounterRng& rng) {
  std::vector<double> cdf(gt.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) cdf[i] = acc += gt.values[i];
  std::vector<std::pair<std::size_t, std::size_t>> points;
  for (std::size_t k = 0; k < count; ++k) {
    const double u = rng.uniform() * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    std::size_t idx = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), gt.size() - 1);
    points.emplace_back(idx / gt.width, idx % gt.width);
  }
  return points;
}

}  // namespace

// ---- manifest ---------------------------------------------------------------

DatasetManifest read_dataset_manifest(const fs::path& root) {
  const fs::path path = root / kManifestFile;
  if (!fs::is_regular_file(path)) throw IngestionError("missing dataset manifest " + path.string());
  KeyValues kv;
  try {
    kv = KeyValues::load(path);
  } catch (const Error& e) {
    throw IngestionError(e.what());
  }
  DatasetManifest m;
  try {
    m.name = kv.require("name");
    m.modality = parse_modality(kv.require("modality"));
    m.fps = kv.get_size("fps", 0);
    m.resolution.height = kv.get_size("height", 0);
    m.resolution.width = kv.get_size("width", 0);
  } catch (const Error& e) {
    throw IngestionError(path.string() + ": " + e.what());
  }
  return m;
}

void write_dataset_manifest(const fs::path& root, const DatasetManifest& m) {
  KeyValues kv;
  kv.set("name", m.name);
  kv.set("modality", to_string(m.modality));
  kv.set("fps", m.fps);
  kv.set("height", m.resolution.height);
  kv.set("width", m.resolution.width);
  fs::create_directories(root);
  kv.save(root / kManifestFile);
}

// ---- fixations ---------------------------------------------------------------

FixationMap resize_fixations(const std::vector<std::pair<std::size_t, std::size_t>>& points,
                             Resolution source, Resolution target, std::size_t* collisions) {
  FixationMap out(target.height, target.width);
  std::size_t merged = 0;
  for (auto [r, c] : points) {
    if (r >= source.height || c >= source.width) {
      throw DimensionError("fixation (" + std::to_string(r) + ", " + std::to_string(c) + ") outside " +
                           std::to_string(source.height) + "x" + std::to_string(source.width));
    }
    const auto tr = std::min<std::size_t>(
        static_cast<std::size_t>((r + 0.5) * target.height / source.height), target.height - 1);
    const auto tc = std::min<std::size_t>(
        static_cast<std::size_t>((c + 0.5) * target.width / source.width), target.width - 1);
    if (out(tr, tc)) ++merged;
    out.set(tr, tc);
  }
  if (collisions) *collisions = merged;
  return out;
}

// ---- images ------------------------------------------------------------------

Image to_rgb(const Image& img) {
  if (img.channels == 3) return img;
  Image out(img.height, img.width, 3);
  for (std::size_t i = 0; i < img.height * img.width; ++i) {
    for (std::size_t ch = 0; ch < 3; ++ch) out.samples[i * 3 + ch] = img.samples[i];
  }
  return out;
}

std::vector<double> image_to_planar(const Image& image) {
  std::vector<double> out(image.samples.size());
  const std::size_t plane = image.height * image.width;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t ch = 0; ch < image.channels; ++ch) out[ch * plane + i] = image.samples[i * image.channels + ch];
  }
  return out;
}

std::vector<double> model_input(const Image& rgb) {
  if (rgb.channels != 3) throw DimensionError("model input must be RGB, got " + std::to_string(rgb.channels) + " channels");
  std::vector<double> out = image_to_planar(rgb);
  const std::size_t plane = rgb.height * rgb.width;
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] = (out[ch * plane + i] - kInputMean[ch]) / kInputStd[ch];
  }
  return out;
}

Image resize_image(const Image& image, Resolution target) {
  if (image.height == target.height && image.width == target.width) return image;
  NoGradGuard no_grad;
  const Tensor t = Tensor::from({1, image.channels, image.height, image.width}, image_to_planar(image));
  const Tensor r = resize(t, target.height, target.width, Interpolation::Bilinear);
  Image out(target.height, target.width, image.channels);
  const std::size_t plane = target.height * target.width;
  const auto d = r.data();
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t ch = 0; ch < image.channels; ++ch) out.samples[i * image.channels + ch] = d[ch * plane + i];
  }
  return out;
}

// ---- dataset -------------------------------------------------------------------

Sample load_sample(const fs::path& sample_dir, const DomainId& domain) {
  Sample s;
  s.id = sample_dir.filename().string();
  s.domain = domain;
  const auto frames = sorted_images(sample_dir / "frames");
  if (frames.empty()) throw IngestionError("no frames in " + (sample_dir / "frames").string());
  const Resolution target = domain.input_resolution;
  Resolution native{};
  for (const auto& frame_path : frames) {
    const std::string stem = frame_path.stem().string();
    const fs::path fix_path = sample_dir / "fixations" / (stem + ".txt");
    const fs::path sal_path = find_saliency(sample_dir / "saliency", stem);
    if (!fs::is_regular_file(fix_path)) throw IngestionError("frame " + frame_path.string() + " has no fixation file");
    if (sal_path.empty()) throw IngestionError("frame " + frame_path.string() + " has no saliency map");

    Image img;
    try {
      img = read_image(frame_path);
    } catch (const Error& e) {
      throw IngestionError(e.what());
    }
    if (native.height == 0) native = {img.height, img.width};
    if (img.height != native.height || img.width != native.width) {
      throw IngestionError("frame " + frame_path.string() + " differs in resolution from the first frame");
    }
    s.frames.push_back(resize_image(to_rgb(img), target));

    SaliencyMap sal;
    try {
      sal = to_gray_map(read_image(sal_path));
    } catch (const Error& e) {
      throw IngestionError(e.what());
    }
    s.saliency.push_back(resize_map(sal, target));

    std::size_t merged = 0;
    try {
      s.fixations.push_back(resize_fixations(read_fixation_points(fix_path), native, target, &merged));
    } catch (const DimensionError& e) {
      throw IngestionError(fix_path.string() + ": " + e.what());
    }
    s.fixation_collisions += merged;
  }
  return s;
}

Dataset Dataset::load(const fs::path& root, const DomainId& domain) {
  Dataset d;
  d.root_ = root;
  d.domain_ = domain;
  d.mutex_ = std::make_unique<std::mutex>();
  if (!fs::is_directory(root)) throw IngestionError("dataset root " + root.string() + " does not exist");
  const DatasetManifest m = read_dataset_manifest(root);
  if (m.modality != domain.modality) {
    throw IngestionError(root.string() + ": manifest modality " + to_string(m.modality) + " does not match domain " +
                         domain.name);
  }
  if (!domain.is_static() && m.fps != domain.native_fps) {
    throw IngestionError(root.string() + ": manifest fps " + std::to_string(m.fps) + " does not match domain " +
                         domain.name);
  }
  d.reindex();
  return d;
}

Dataset::Dataset(Dataset&&) noexcept = default;
Dataset& Dataset::operator=(Dataset&&) noexcept = default;
Dataset::~Dataset() = default;

void Dataset::reindex() {
  std::vector<Entry> entries;
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root_)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    Entry entry;
    entry.id = dir.filename().string();
    entry.frames = sorted_images(dir / "frames");
    if (entry.frames.empty()) throw IngestionError("sample " + dir.string() + " has no frames");
    if (domain_.is_static() && entry.frames.size() != 1) {
      throw IngestionError("static sample " + dir.string() + " has " + std::to_string(entry.frames.size()) + " frames");
    }
    for (const auto& frame : entry.frames) {
      const std::string stem = frame.stem().string();
      fs::path fix = dir / "fixations" / (stem + ".txt");
      if (!fs::is_regular_file(fix)) throw IngestionError("frame " + frame.string() + " has no fixation file");
      fs::path sal = find_saliency(dir / "saliency", stem);
      if (sal.empty()) throw IngestionError("frame " + frame.string() + " has no saliency map");
      entry.fixations.push_back(fix);
      entry.saliency.push_back(sal);
    }
    entries.push_back(std::move(entry));
  }
  std::lock_guard lock(*mutex_);
  entries_ = std::move(entries);
  cache_.clear();
}

const std::string& Dataset::sample_id(std::size_t i) const { return entries_.at(i).id; }

std::size_t Dataset::frame_count(std::size_t i) const { return entries_.at(i).frames.size(); }

const Sample& Dataset::sample(std::size_t i) const {
  const Entry& e = entries_.at(i);
  {
    std::lock_guard lock(*mutex_);
    auto it = cache_.find(i);
    if (it != cache_.end()) return *it->second;
  }
  auto loaded = std::make_shared<const Sample>(load_sample(root_ / e.id, domain_));
  std::lock_guard lock(*mutex_);
  auto [it, inserted] = cache_.emplace(i, std::move(loaded));
  return *it->second;
}

// ---- synthetic data ----------------------------------------------------------

const std::vector<std::array<double, 3>>& synthetic_palette() {
  static const std::vector<std::array<double, 3>> palette{
      {0.90, 0.15, 0.15}, {0.15, 0.80, 0.20}, {0.20, 0.30, 0.90}};
  return palette;
}

SaliencyMap synthetic_center_bias(Resolution res) {
  SaliencyMap m(res.height, res.width);
  const double sr = 0.2 * static_cast<double>(res.height), sc = 0.2 * static_cast<double>(res.width);
  const double cr = 0.5 * static_cast<double>(res.height), ccol = 0.5 * static_cast<double>(res.width);
  for (std::size_t r = 0; r < res.height; ++r) {
    for (std::size_t c = 0; c < res.width; ++c) {
      const double dr = (r + 0.5 - cr) / sr, dc = (c + 0.5 - ccol) / sc;
      m(r, c) = std::exp(-0.5 * (dr * dr + dc * dc));
    }
  }
  normalize_sum(m.values);
  return m;
}

SaliencyMap synthetic_ground_truth(const SyntheticDomainSpec& spec, const std::vector<SyntheticBlob>& blobs) {
  const Resolution res = spec.resolution;
  SaliencyMap objects(res.height, res.width);
  for (const auto& b : blobs) {
    const double w = b.color < spec.color_weights.size() ? spec.color_weights[b.color] : 0.0;
    if (w == 0.0) continue;
    for (std::size_t r = 0; r < res.height; ++r) {
      for (std::size_t c = 0; c < res.width; ++c) objects(r, c) += w * blob_weight(b, r + 0.5, c + 0.5);
    }
  }
  normalize_sum(objects.values);
  double object_mass = 0.0;
  for (double v : objects.values) object_mass += v;
  const double bias = object_mass > 0.0 ? std::clamp(spec.center_bias, 0.0, 1.0) : 1.0;
  const SaliencyMap center = synthetic_center_bias(res);
  SaliencyMap gt(res.height, res.width);
  for (std::size_t i = 0; i < gt.size(); ++i) gt.values[i] = (1.0 - bias) * objects.values[i] + bias * center.values[i];
  gaussian_blur(gt, spec.blur_sigma);
  normalize_sum(gt.values);
  return gt;
}

Image synthetic_frame(Resolution res, const std::vector<SyntheticBlob>& blobs) {
  Image img(res.height, res.width, 3);
  std::fill(img.samples.begin(), img.samples.end(), 0.5);
  const auto& palette = synthetic_palette();
  for (const auto& b : blobs) {
    const auto& color = palette[b.color % palette.size()];
    for (std::size_t r = 0; r < res.height; ++r) {
      for (std::size_t c = 0; c < res.width; ++c) {
        const double a = std::min(1.0, 1.5 * blob_weight(b, r + 0.5, c + 0.5));
        for (std::size_t ch = 0; ch < 3; ++ch) img.at(r, c, ch) = (1.0 - a) * img.at(r, c, ch) + a * color[ch];
      }
    }
  }
  return img;
}

void generate_synthetic(const SyntheticDomainSpec& spec, const fs::path& root) {
  if (spec.resolution.height == 0 || spec.resolution.width == 0) throw ConfigError("synthetic resolution is empty");
  if (spec.modality == Modality::Dynamic && spec.fps == 0) throw ConfigError("dynamic synthetic domain needs fps > 0");
  const Resolution res = spec.resolution;
  write_dataset_manifest(root, {spec.name, spec.modality, spec.modality == Modality::Static ? 0 : spec.fps, res});

  const std::size_t n_frames = spec.modality == Modality::Static ? 1 : spec.frames;
  const auto& palette = synthetic_palette();
  const double short_side = static_cast<double>(std::min(res.height, res.width));
  for (std::size_t s = 0; s < spec.samples; ++s) {
    CounterRng rng(spec.seed, hash_combine(0x73796e74ULL, s));
    std::vector<SyntheticBlob> blobs(spec.blobs);
    const std::size_t color_offset = static_cast<std::size_t>(rng.below(palette.size()));
    for (std::size_t b = 0; b < spec.blobs; ++b) {
      auto& blob = blobs[b];
      blob.radius = rng.uniform(0.08, 0.13) * short_side;
      blob.row = rng.uniform(blob.radius, static_cast<double>(res.height) - blob.radius);
      blob.col = rng.uniform(blob.radius, static_cast<double>(res.width) - blob.radius);
      blob.color = (b + color_offset) % std::max<std::size_t>(1, std::min(palette.size(), spec.color_weights.size()));
      const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
      blob.d_row = 0.15 * std::sin(angle);
      blob.d_col = 0.15 * std::cos(angle);
    }

    const fs::path dir = root / frame_name(s, "");
    fs::create_directories(dir / "frames");
    fs::create_directories(dir / "fixations");
    fs::create_directories(dir / "saliency");
    for (std::size_t f = 0; f < n_frames; ++f) {
      write_image(dir / "frames" / frame_name(f, ".png"), synthetic_frame(res, blobs), 8);

      const SaliencyMap gt = synthetic_ground_truth(spec, blobs);
      const double peak = *std::max_element(gt.values.begin(), gt.values.end());
      Image sal(res.height, res.width, 1);
      for (std::size_t i = 0; i < gt.size(); ++i) sal.samples[i] = gt.values[i] / peak;
      write_image(dir / "saliency" / frame_name(f, ".png"), sal, 16);

      std::ofstream fix(dir / "fixations" / frame_name(f, ".txt"));
      for (auto [r, c] : sample_fixations(gt, spec.fixations_per_frame, rng)) fix << r << " " << c << "\n";

      for (auto& blob : blobs) {
        blob.row += blob.d_row;
        blob.col += blob.d_col;
        if (blob.row < blob.radius || blob.row > res.height - blob.radius) blob.d_row = -blob.d_row;
        if (blob.col < blob.radius || blob.col > res.width - blob.radius) blob.d_col = -blob.d_col;
      }
    }
  }
}

// ---- frame rate, clips, scheduling ---------------------------------------------

std::size_t assimilation_stride(std::size_t native_fps, std::size_t target_fps) {
  if (target_fps == 0 || native_fps == 0) throw ConfigError("frame rates must be positive");
  if (native_fps % target_fps != 0) {
    throw ConfigError("native frame rate " + std::to_string(native_fps) + " is not divisible by target " +
                      std::to_string(target_fps));
  }
  return native_fps / target_fps;
}

std::vector<std::size_t> assimilation_indices(std::size_t frame_count, std::size_t native_fps,
                                              std::size_t target_fps) {
  const std::size_t stride = assimilation_stride(native_fps, target_fps);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < frame_count; i += stride) out.push_back(i);
  return out;
}

std::vector<Clip> make_clips(const std::vector<std::size_t>& frame_counts, std::size_t native_fps,
                             std::size_t clip_length, std::uint64_t seed, const LogSink& warn,
                             std::size_t target_fps) {
  if (clip_length == 0) throw ConfigError("clip length must be positive");
  std::vector<Clip> clips;
  CounterRng rng(seed, 0x636c6970ULL);
  for (std::size_t s = 0; s < frame_counts.size(); ++s) {
    const auto idx = assimilation_indices(frame_counts[s], native_fps, target_fps);
    if (idx.size() < clip_length) {
      if (warn) {
        warn("sample " + std::to_string(s) + " has " + std::to_string(idx.size()) +
             " frames after assimilation, fewer than the clip length " + std::to_string(clip_length) +
             "; discarded");
      }
      continue;
    }
    const auto offset = static_cast<std::size_t>(rng.below(idx.size() - clip_length + 1));
    clips.push_back({s, {idx.begin() + static_cast<std::ptrdiff_t>(offset),
                         idx.begin() + static_cast<std::ptrdiff_t>(offset + clip_length)}});
  }
  return clips;
}

std::vector<Clip> make_clips(const Dataset& dataset, std::size_t clip_length, std::uint64_t seed,
                             const LogSink& warn, std::size_t target_fps) {
  if (dataset.domain().is_static()) throw ContractError("clips need a dynamic domain");
  std::vector<std::size_t> counts(dataset.size());
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] = dataset.frame_count(i);
  const LogSink named = warn ? LogSink([&](std::string_view msg) {
    warn(dataset.domain().name + ": " + std::string(msg));
  })
                             : LogSink{};
  return make_clips(counts, dataset.domain().native_fps, clip_length, seed, named, target_fps);
}

std::size_t default_batch_size(const DomainId& domain) { return domain.is_static() ? 32 : 4; }

std::vector<BatchPlan> schedule_epoch(const std::vector<ScheduleSource>& sources, std::uint64_t seed) {
  if (sources.empty()) throw ConfigError("no datasets to schedule");
  std::vector<std::vector<BatchPlan>> per_domain;
  std::vector<std::pair<std::size_t, std::size_t>> tokens;
  for (std::size_t d = 0; d < sources.size(); ++d) {
    const auto& src = sources[d];
    if (src.units == 0) throw ConfigError("dataset for domain " + src.domain.name + " is empty");
    if (src.batch_size == 0) throw ConfigError("batch size for domain " + src.domain.name + " must be positive");
    std::vector<std::size_t> order(src.units);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    CounterRng rng(seed, hash_combine(0x756e6974ULL, d));
    rng.shuffle(order);
    std::vector<BatchPlan> batches;
    for (std::size_t start = 0; start < order.size(); start += src.batch_size) {
      const std::size_t end = std::min(order.size(), start + src.batch_size);
      batches.push_back({src.domain, {order.begin() + static_cast<std::ptrdiff_t>(start),
                                      order.begin() + static_cast<std::ptrdiff_t>(end)}});
      tokens.emplace_back(d, batches.size() - 1);
    }
    per_domain.push_back(std::move(batches));
  }
  CounterRng rng(seed, 0x6f726472ULL);
  rng.shuffle(tokens);
  std::vector<BatchPlan> out;
  out.reserve(tokens.size());
  for (auto [d, b] : tokens) out.push_back(std::move(per_domain[d][b]));
  return out;
}

Resolution resolve_resolution(const DomainRegistry& registry, const std::string& domain_name) {
  return registry.by_name(domain_name).input_resolution;
}

BatchData assemble_batch(const Dataset& dataset, const BatchPlan& plan, const std::vector<Clip>& clips) {
  if (plan.domain.name != dataset.domain().name) throw ContractError("batch domain does not match the dataset");
  if (plan.units.empty()) throw ContractError("empty batch");
  const Resolution res = dataset.domain().input_resolution;
  const std::size_t n = plan.units.size();
  BatchData out;
  out.domain = dataset.domain();

  std::vector<std::pair<const Sample*, std::vector<std::size_t>>> picks;
  for (std::size_t u : plan.units) {
    if (dataset.domain().is_static()) {
      picks.emplace_back(&dataset.sample(u), std::vector<std::size_t>{0});
    } else {
      const Clip& clip = clips.at(u);
      picks.emplace_back(&dataset.sample(clip.sample), clip.frames);
    }
  }
  const std::size_t t_len = picks.front().second.size();
  for (const auto& p : picks) {
    if (p.second.size() != t_len) throw ContractError("clips in a batch differ in length");
  }

  const std::size_t plane = 3 * res.height * res.width;
  std::vector<double> values(t_len * n * plane);
  out.saliency.assign(t_len, {});
  out.fixations.assign(t_len, {});
  for (std::size_t j = 0; j < n; ++j) {
    const Sample& s = *picks[j].first;
    out.sample_ids.push_back(s.id);
    for (std::size_t t = 0; t < t_len; ++t) {
      const std::size_t f = picks[j].second[t];
      const auto planar = model_input(s.frames.at(f));
      std::copy(planar.begin(), planar.end(), values.begin() + static_cast<std::ptrdiff_t>((t * n + j) * plane));
      out.saliency[t].push_back(s.saliency.at(f));
      out.fixations[t].push_back(s.fixations.at(f));
    }
  }
  out.frames = Tensor::from({t_len, n, 3, res.height, res.width}, std::move(values));
  return out;
}

}  // namespace unisal

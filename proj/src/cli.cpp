#include "unisal/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "unisal/checkpoint.hpp"
#include "unisal/errors.hpp"
#include "unisal/image_io.hpp"
#include "unisal/parallel.hpp"
#include "unisal/rng.hpp"
#include "unisal/verify.hpp"

namespace fs = std::filesystem;

namespace unisal {

namespace {

const std::vector<std::string> kDomainKeys{"root", "val_root", "height", "width"};
const std::vector<std::string> kSyntheticKeys{"modality", "fps",         "height",        "width",
                                              "samples",  "frames",      "center_bias",   "blur_sigma",
                                              "color_weights", "blobs",  "fixations",     "seed"};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  for (const auto& part : split(text, ',')) {
    const std::string t = trim(part);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

std::string join(const std::vector<std::string>& items, const std::string& sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
  return out;
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

fs::path resolve(const std::string& text, const fs::path& base) {
  if (text.empty()) return {};
  const fs::path p(text);
  return p.is_absolute() || base.empty() ? p : base / p;
}

void check_name(const std::string& name, const std::string& list_key) {
  if (name.empty() || name.find_first_of(" \t=.,/") != std::string::npos) {
    throw ConfigError(list_key + ": invalid domain name '" + name + "'");
  }
}

// Keys accepted under the model. and train. prefixes.
std::set<std::string> known_keys() {
  std::set<std::string> keys{"model.preset", "train.seed", "train.loss_cc", "train.loss_nss", "data.domains",
                             "gen.domains", "gen.val_samples"};
  KeyValues kv;
  ModelConfig{}.to_key_values(kv);
  TrainPolicy{}.to_key_values(kv);
  for (const auto& [k, v] : kv.items()) keys.insert(k);
  return keys;
}

SyntheticDomainSpec synthetic_from(const KeyValues& kv, const std::string& name, std::size_t index,
                                   std::uint64_t run_seed) {
  const std::string p = "gen." + name + ".";
  SyntheticDomainSpec s;
  s.name = name;
  s.modality = parse_modality(kv.get(p + "modality", "static"));
  s.fps = kv.get_size(p + "fps", s.modality == Modality::Dynamic ? 30 : 0);
  s.resolution = {kv.get_size(p + "height", s.resolution.height), kv.get_size(p + "width", s.resolution.width)};
  s.samples = kv.get_size(p + "samples", s.samples);
  s.frames = kv.get_size(p + "frames", s.modality == Modality::Static ? 1 : s.frames);
  s.center_bias = kv.get_double(p + "center_bias", s.center_bias);
  s.blur_sigma = kv.get_double(p + "blur_sigma", s.blur_sigma);
  if (auto w = kv.find(p + "color_weights")) {
    s.color_weights.clear();
    for (const auto& part : split_list(*w)) {
      KeyValues one;
      one.set("w", part);
      s.color_weights.push_back(one.get_double("w", 0.0));
    }
  }
  s.blobs = kv.get_size(p + "blobs", s.blobs);
  s.fixations_per_frame = kv.get_size(p + "fixations", s.fixations_per_frame);
  s.seed = kv.get_u64(p + "seed", hash_combine(run_seed, index));
  if (s.center_bias < 0.0 || s.center_bias > 1.0) throw ConfigError(p + "center_bias must lie in [0, 1]");
  if (s.resolution.height == 0 || s.resolution.width == 0) throw ConfigError(p + "height/width must be positive");
  return s;
}

}  // namespace

// ---- configuration ------------------------------------------------------------

RunConfig RunConfig::from_key_values(const KeyValues& kv, const fs::path& base_dir) {
  RunConfig c;
  c.preset = kv.get("model.preset", "desk");
  if (c.preset != "desk" && c.preset != "full") {
    throw ConfigError("model.preset must be 'desk' or 'full', got '" + c.preset + "'");
  }
  KeyValues model_kv = kv;
  model_kv.set("model.preset", c.preset);
  c.model = ModelConfig::from_key_values(model_kv);
  c.policy = TrainPolicy::from_key_values(kv);
  c.loss.cc = kv.get_double("train.loss_cc", c.loss.cc);
  c.loss.nss = kv.get_double("train.loss_nss", c.loss.nss);
  c.seed = kv.get_u64("train.seed", c.seed);

  std::set<std::string> allowed = known_keys();
  for (const auto& name : split_list(kv.get("data.domains", ""))) {
    check_name(name, "data.domains");
    for (const auto& k : kDomainKeys) allowed.insert("data." + name + "." + k);
    DomainSource d;
    d.name = name;
    const std::string p = "data." + name + ".";
    d.root = resolve(kv.get(p + "root", ""), base_dir);
    if (d.root.empty()) throw ConfigError("missing key '" + p + "root'");
    d.val_root = resolve(kv.get(p + "val_root", ""), base_dir);
    d.resolution = {kv.get_size(p + "height", 0), kv.get_size(p + "width", 0)};
    if ((d.resolution.height == 0) != (d.resolution.width == 0)) {
      throw ConfigError(p + "height and " + p + "width must be given together");
    }
    if (std::any_of(c.domains.begin(), c.domains.end(), [&](const DomainSource& o) { return o.name == name; })) {
      throw ConfigError("data.domains lists '" + name + "' twice");
    }
    c.domains.push_back(std::move(d));
  }
  const auto gen = split_list(kv.get("gen.domains", ""));
  for (std::size_t i = 0; i < gen.size(); ++i) {
    check_name(gen[i], "gen.domains");
    for (const auto& k : kSyntheticKeys) allowed.insert("gen." + gen[i] + "." + k);
    c.synthetic.push_back(synthetic_from(kv, gen[i], i, c.seed));
  }
  c.synthetic_val_samples = kv.get_size("gen.val_samples", c.synthetic_val_samples);
  for (const auto& [key, value] : kv.items()) {
    if (allowed.count(key) || starts_with(key, "train.batch_size.")) continue;
    throw ConfigError("unknown configuration key '" + key + "'");
  }
  return c;
}

KeyValues RunConfig::to_key_values() const {
  KeyValues kv;
  kv.set("model.preset", preset);
  model.to_key_values(kv);
  policy.to_key_values(kv);
  kv.set("train.loss_cc", loss.cc);
  kv.set("train.loss_nss", loss.nss);
  kv.set("train.seed", std::to_string(seed));
  std::vector<std::string> names;
  for (const auto& d : domains) {
    names.push_back(d.name);
    const std::string p = "data." + d.name + ".";
    kv.set(p + "root", fs::absolute(d.root).lexically_normal().string());
    if (!d.val_root.empty()) kv.set(p + "val_root", fs::absolute(d.val_root).lexically_normal().string());
    if (d.resolution.height) {
      kv.set(p + "height", d.resolution.height);
      kv.set(p + "width", d.resolution.width);
    }
  }
  if (!names.empty()) kv.set("data.domains", join(names));
  names.clear();
  for (const auto& s : synthetic) {
    names.push_back(s.name);
    const std::string p = "gen." + s.name + ".";
    kv.set(p + "modality", to_string(s.modality));
    kv.set(p + "fps", s.fps);
    kv.set(p + "height", s.resolution.height);
    kv.set(p + "width", s.resolution.width);
    kv.set(p + "samples", s.samples);
    kv.set(p + "frames", s.frames);
    kv.set(p + "center_bias", s.center_bias);
    kv.set(p + "blur_sigma", s.blur_sigma);
    std::vector<std::string> w;
    for (double x : s.color_weights) w.push_back(format_double(x));
    kv.set(p + "color_weights", join(w));
    kv.set(p + "blobs", s.blobs);
    kv.set(p + "fixations", s.fixations_per_frame);
    kv.set(p + "seed", std::to_string(s.seed));
  }
  if (!names.empty()) kv.set("gen.domains", join(names));
  kv.set("gen.val_samples", synthetic_val_samples);
  return kv;
}

RunConfig load_run_config(const std::optional<fs::path>& path, const KeyValues& overrides) {
  KeyValues kv;
  fs::path base;
  if (path) {
    if (!fs::exists(*path)) throw ConfigError("config file does not exist: " + path->string());
    kv = KeyValues::load(*path);
    base = fs::absolute(*path).parent_path();
  }
  kv.merge(overrides);
  return RunConfig::from_key_values(kv, base);
}

std::shared_ptr<DomainRegistry> registry_from_sources(const std::vector<DomainSource>& sources) {
  auto reg = std::make_shared<DomainRegistry>();
  for (const auto& s : sources) {
    if (!fs::is_directory(s.root)) {
      throw ConfigError("dataset root of domain '" + s.name + "' does not exist: " + s.root.string());
    }
    if (!s.val_root.empty() && !fs::is_directory(s.val_root)) {
      throw ConfigError("validation root of domain '" + s.name + "' does not exist: " + s.val_root.string());
    }
    const DatasetManifest m = read_dataset_manifest(s.root);
    reg->add(s.name, m.modality, m.fps, s.resolution.height ? s.resolution : m.resolution);
  }
  return reg;
}

std::vector<SyntheticDomainSpec> default_synthetic_domains(std::uint64_t seed) {
  SyntheticDomainSpec img;
  img.name = "images";
  img.modality = Modality::Static;
  img.fps = 0;
  img.frames = 1;
  img.center_bias = 0.6;
  img.color_weights = {1.0, 0.0};
  img.seed = hash_combine(seed, 0);
  SyntheticDomainSpec vid;
  vid.name = "videos";
  vid.modality = Modality::Dynamic;
  vid.fps = 30;
  vid.center_bias = 0.2;
  vid.color_weights = {0.0, 1.0};
  vid.seed = hash_combine(seed, 1);
  return {img, vid};
}

// ---- heatmaps -----------------------------------------------------------------

namespace {

fs::path scale_path(const fs::path& path) {
  fs::path p = path;
  return p.replace_extension(".scale.txt");
}

}  // namespace

void write_heatmap(const fs::path& path, const SaliencyMap& map) {
  const double max = map.values.empty() ? 0.0 : *std::max_element(map.values.begin(), map.values.end());
  RawImage raw;
  raw.height = map.height;
  raw.width = map.width;
  raw.channels = 1;
  raw.max_value = 65535;
  raw.samples.resize(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) {
    const double v = max > 0.0 ? std::max(0.0, map.values[i]) / max : 0.0;
    raw.samples[i] = static_cast<std::uint16_t>(std::lround(v * 65535.0));
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_raw_image(path, raw);
  KeyValues kv;
  kv.set("max", format_double(max));
  kv.save(scale_path(path));
}

SaliencyMap read_heatmap(const fs::path& path) {
  const RawImage raw = read_raw_image(path);
  if (raw.channels != 1) throw InputError("heatmap " + path.string() + " is not grayscale");
  const double max = KeyValues::load(scale_path(path)).get_double("max", 0.0);
  SaliencyMap m(raw.height, raw.width);
  for (std::size_t i = 0; i < m.size(); ++i) m.values[i] = raw.samples[i] / static_cast<double>(raw.max_value) * max;
  return m;
}

std::pair<double, double> center_of_mass(const SaliencyMap& map) {
  double mass = 0.0, r = 0.0, c = 0.0;
  for (std::size_t i = 0; i < map.height; ++i) {
    for (std::size_t j = 0; j < map.width; ++j) {
      const double v = map(i, j);
      mass += v;
      r += v * (static_cast<double>(i) + 0.5);
      c += v * (static_cast<double>(j) + 0.5);
    }
  }
  if (!(mass > 0.0)) throw InputError("center of mass of an empty map");
  return {r / mass / static_cast<double>(map.height), c / mass / static_cast<double>(map.width)};
}

// ---- commands -----------------------------------------------------------------

namespace {

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> epochs;
  std::string domain;
  std::string metrics = "all";
  std::string suite = "all";
  std::string checkpoint;
  std::string input;
  std::string share_private;
};

KeyValues overrides_from(const Options& o) {
  KeyValues kv;
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    kv.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  if (o.seed) kv.set("train.seed", std::to_string(*o.seed));
  if (o.epochs) kv.set("train.total_epochs", *o.epochs);
  return kv;
}

RunConfig config_from(const Options& o) {
  return load_run_config(o.config.empty() ? std::nullopt : std::optional<fs::path>(o.config), overrides_from(o));
}

fs::path output_dir(const Options& o, const std::string& fallback) {
  const fs::path dir = o.out.empty() ? fs::path(fallback) : fs::path(o.out);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

struct FrameInput {
  std::string stem;
  Image rgb;
};

// A single image file is a still image under every domain; a directory is
// a clip for dynamic domains and a set of images for static ones.
struct Inputs {
  std::vector<FrameInput> frames;
  bool still = false;
};

Inputs read_inputs(const fs::path& input) {
  if (!fs::exists(input)) throw ConfigError("input does not exist: " + input.string());
  std::vector<fs::path> files;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input)) {
      if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ConfigError("no image files in " + input.string());
  } else {
    if (!is_image_file(input)) throw ConfigError("not a supported image file: " + input.string());
    files.push_back(input);
  }
  Inputs out;
  out.still = !fs::is_directory(input);
  for (const auto& f : files) out.frames.push_back({f.stem().string(), to_rgb(read_image(f))});
  return out;
}

const DomainId& pick_domain(const DomainRegistry& reg, const std::string& name) {
  if (!name.empty()) {
    for (const auto& d : reg.domains()) {
      if (d.name == name) return d;
    }
    std::vector<std::string> names;
    for (const auto& d : reg.domains()) names.push_back(d.name);
    throw ConfigError("unknown domain '" + name + "'; the checkpoint has: " + join(names, ", "));
  }
  if (reg.size() == 1) return reg.at(0);
  throw ConfigError("--domain is required for a checkpoint with several domains");
}

std::vector<SaliencyMap> predict_frames(const UnisalModel& model, const DomainId& domain, const Inputs& inputs,
                                        std::uint64_t seed) {
  const auto& frames = inputs.frames;
  const Resolution res = domain.input_resolution;
  const std::size_t plane = 3 * res.height * res.width;
  ForwardContext ctx{false, seed, 0};
  ctx.static_input = inputs.still;
  std::vector<SaliencyMap> out(frames.size());
  if (domain.is_static() || inputs.still) {
    parallel_for(frames.size(), [&](std::size_t i) {
      const Tensor x = Tensor::from({1, 1, 3, res.height, res.width},
                                    model_input(resize_image(frames[i].rgb, res)));
      BypassCGRUState state;
      out[i] = SaliencyMap(res.height, res.width, model.forward(x, domain, ctx, state).frame(0, 0));
    });
    return out;
  }
  for (const auto& f : frames) {
    if (f.rgb.height != frames[0].rgb.height || f.rgb.width != frames[0].rgb.width) {
      throw ConfigError("frame '" + f.stem + "' is " + std::to_string(f.rgb.height) + "x" +
                        std::to_string(f.rgb.width) + " but the clip starts at " +
                        std::to_string(frames[0].rgb.height) + "x" + std::to_string(frames[0].rgb.width));
    }
  }
  std::vector<double> values(frames.size() * plane);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto p = model_input(resize_image(frames[t].rgb, res));
    std::copy(p.begin(), p.end(), values.begin() + static_cast<std::ptrdiff_t>(t * plane));
  }
  NoGradGuard no_grad;
  BypassCGRUState state;
  const SaliencyOutput o =
      model.forward(Tensor::from({frames.size(), 1, 3, res.height, res.width}, std::move(values)), domain, ctx, state);
  for (std::size_t t = 0; t < frames.size(); ++t) out[t] = SaliencyMap(res.height, res.width, o.frame(t, 0));
  return out;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = config_from(o);
  if (cfg.domains.empty()) throw ConfigError("no domains configured (data.domains)");
  auto reg = registry_from_sources(cfg.domains);
  std::vector<Dataset> train_sets, val_sets;
  train_sets.reserve(cfg.domains.size());
  val_sets.reserve(cfg.domains.size());
  std::vector<DomainData> data;
  for (std::size_t i = 0; i < cfg.domains.size(); ++i) {
    train_sets.push_back(Dataset::load(cfg.domains[i].root, reg->at(i)));
    if (!cfg.domains[i].val_root.empty()) val_sets.push_back(Dataset::load(cfg.domains[i].val_root, reg->at(i)));
  }
  for (std::size_t i = 0, v = 0; i < cfg.domains.size(); ++i) {
    data.push_back({&train_sets[i], cfg.domains[i].val_root.empty() ? nullptr : &val_sets[v++]});
  }
  const fs::path dir = output_dir(o, "run");
  cfg.to_key_values().save(dir / "effective.cfg");

  UnisalModel model = UnisalModel::build(cfg.model, reg, cfg.seed);
  write_text(dir / "build_report.txt", model.build_report().to_text());
  write_text(dir / "params.txt", param_report(model).to_text());
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& e) {
    out << "epoch " << e.epoch << " lr " << format_double(e.lr);
    for (const auto& [name, loss] : e.train_loss) out << " train[" << name << "] " << format_double(loss);
    for (const auto& [name, loss] : e.val_loss) out << " val[" << name << "] " << format_double(loss);
    out << " monitor " << format_double(e.monitor) << '\n';
  };
  hooks.warn = [&](std::string_view msg) { err << "warning: " << msg << '\n'; };
  const TrainingReport report = train(model, data, cfg.policy, cfg.loss, cfg.seed, hooks);
  write_text(dir / "report.txt", report.to_text());
  save_checkpoint(model, dir / "checkpoint.bin");
  out << "best epoch " << report.best_epoch << (report.stopped_early ? " (stopped early)" : "") << "; wrote "
      << (dir / "checkpoint.bin").string() << '\n';
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const auto metrics = parse_metrics(o.metrics);
  const UnisalModel model = load_checkpoint(o.checkpoint);
  const fs::path root(o.input);
  if (!fs::is_directory(root)) throw ConfigError("dataset root does not exist: " + root.string());
  const std::string name = o.domain.empty() ? read_dataset_manifest(root).name : o.domain;
  const DomainId& domain = pick_domain(model.registry(), name);
  const Dataset ds = Dataset::load(root, domain);
  const EvaluationResult r = evaluate(model, ds, metrics, o.seed.value_or(0));
  const std::string table = r.to_table();
  out << table;
  if (!o.out.empty()) write_text(output_dir(o, "") / ("eval_" + domain.name + ".txt"), table);
  return 0;
}

int cmd_predict(const Options& o, std::ostream& out) {
  const UnisalModel model = load_checkpoint(o.checkpoint);
  const DomainId& domain = pick_domain(model.registry(), o.domain);
  const Inputs inputs = read_inputs(o.input);
  const auto maps = predict_frames(model, domain, inputs, o.seed.value_or(0));
  const fs::path dir = output_dir(o, "predictions");
  for (std::size_t i = 0; i < maps.size(); ++i) write_heatmap(dir / (inputs.frames[i].stem + ".png"), maps[i]);
  out << "wrote " << maps.size() << " heatmap" << (maps.size() == 1 ? "" : "s") << " to " << dir.string() << '\n';
  return 0;
}

int cmd_inspect_bias(const Options& o, std::ostream& out) {
  const UnisalModel model = load_checkpoint(o.checkpoint);
  std::vector<DomainId> domains;
  if (o.domain.empty()) {
    domains = model.registry().domains();
  } else {
    for (const auto& name : split_list(o.domain)) domains.push_back(pick_domain(model.registry(), name));
  }
  const fs::path dir = output_dir(o, "bias");
  NoGradGuard no_grad;
  for (const auto& d : domains) {
    const Resolution res = d.input_resolution;
    BypassCGRUState state;
    ForwardContext ctx{false, o.seed.value_or(0), 0};
    ctx.static_input = true;
    const auto maps = model.forward(Tensor::zeros({1, 1, 3, res.height, res.width}), d, ctx, state);
    const SaliencyMap m(res.height, res.width, maps.frame(0, 0));
    for (double v : m.values) {
      if (!std::isfinite(v)) throw Error("bias map of domain '" + d.name + "' is not finite");
    }
    write_heatmap(dir / ("bias_" + d.name + ".png"), m);
    const auto [r, c] = center_of_mass(m);
    out << "domain " << d.name << " center_of_mass_row " << format_double(r) << " center_of_mass_col "
        << format_double(c) << " offset " << format_double(std::max(std::abs(r - 0.5), std::abs(c - 0.5))) << '\n';
  }
  return 0;
}

int cmd_cross_domain(const Options& o, std::ostream& out) {
  UnisalModel model = load_checkpoint(o.checkpoint);
  std::vector<DomainId> domains;
  if (o.domain.empty()) {
    domains = model.registry().domains();
  } else {
    for (const auto& name : split_list(o.domain)) domains.push_back(pick_domain(model.registry(), name));
  }
  if (!o.share_private.empty()) {
    const DomainId source = pick_domain(model.registry(), o.share_private);
    for (const auto& d : model.registry().domains()) {
      if (d.index != source.index) model.copy_private_set(source, d);
    }
  }
  const Inputs inputs = read_inputs(o.input);
  const fs::path dir = output_dir(o, "cross_domain");
  std::size_t written = 0;
  for (const auto& d : domains) {
    const auto maps = predict_frames(model, d, inputs, o.seed.value_or(0));
    for (std::size_t i = 0; i < maps.size(); ++i) {
      write_heatmap(dir / (inputs.frames[i].stem + "_" + d.name + ".png"), maps[i]);
      ++written;
    }
  }
  out << "wrote " << written << " heatmaps for " << domains.size() << " domains to " << dir.string() << '\n';
  return 0;
}

int cmd_gen_data(const Options& o, std::ostream& out) {
  const RunConfig cfg = config_from(o);
  const auto specs = cfg.synthetic.empty() ? default_synthetic_domains(cfg.seed) : cfg.synthetic;
  const fs::path dir = output_dir(o, "synthetic");
  KeyValues train_cfg;
  train_cfg.set("model.preset", "desk");
  std::vector<std::string> names;
  for (const auto& spec : specs) {
    generate_synthetic(spec, dir / spec.name / "train");
    SyntheticDomainSpec val = spec;
    val.samples = cfg.synthetic_val_samples;
    val.seed = hash_combine(spec.seed, 0x76616cULL);
    if (val.samples > 0) generate_synthetic(val, dir / spec.name / "val");
    names.push_back(spec.name);
    train_cfg.set("data." + spec.name + ".root", spec.name + "/train");
    if (val.samples > 0) train_cfg.set("data." + spec.name + ".val_root", spec.name + "/val");
    out << "domain " << spec.name << ": " << spec.samples << " training and " << val.samples
        << " validation samples (" << to_string(spec.modality) << ")\n";
  }
  train_cfg.set("data.domains", join(names));
  train_cfg.save(dir / "train.cfg");
  out << "wrote " << (dir / "train.cfg").string() << '\n';
  return 0;
}

int cmd_verify(const Options& o, std::ostream& out) {
  const auto results = run_verify_suite(o.suite, o.seed.value_or(0));
  std::size_t failed = 0;
  for (const auto& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name;
    if (!r.detail.empty()) out << " (" << r.detail << ")";
    out << '\n';
    if (!r.passed) ++failed;
  }
  out << results.size() - failed << "/" << results.size() << " checks passed\n";
  return failed == 0 ? 0 : 1;
}

int cmd_report(const Options& o, std::ostream& out) {
  std::optional<UnisalModel> model;
  if (!o.checkpoint.empty()) {
    model.emplace(load_checkpoint(o.checkpoint));
  } else {
    const RunConfig cfg = config_from(o);
    auto reg = std::make_shared<DomainRegistry>();
    if (cfg.domains.empty()) {
      reg->add("default", Modality::Static, 0, {48, 64});
    } else {
      reg = registry_from_sources(cfg.domains);
    }
    model.emplace(UnisalModel::build(cfg.model, reg, cfg.seed));
  }
  const std::string text = model->build_report().to_text() + "\n" + param_report(*model).to_text();
  out << text;
  if (!o.out.empty()) write_text(output_dir(o, "") / "report.txt", text);
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Unified image and video saliency prediction"};
  app.name("unisal");
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* c) {
    c->add_option("--config", o.config, "key=value configuration file");
    c->add_option("--set", o.sets, "configuration override key=value (repeatable)");
  };
  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "random seed"); };
  auto add_out = [&](CLI::App* c) { c->add_option("--out", o.out, "output directory"); };

  auto* train = app.add_subcommand("train", "train a model on the configured domains");
  add_config(train);
  add_seed(train);
  add_out(train);
  train->add_option("--epochs", o.epochs, "number of epochs");

  auto* eval = app.add_subcommand("eval", "score a checkpoint on a dataset");
  eval->add_option("checkpoint", o.checkpoint, "checkpoint file")->required();
  eval->add_option("dataset", o.input, "dataset root")->required();
  eval->add_option("--domain", o.domain, "domain (default: the dataset manifest name)");
  eval->add_option("--metrics", o.metrics, "comma-separated metrics or 'all'");
  add_seed(eval);
  add_out(eval);

  auto* predict = app.add_subcommand("predict", "write heatmaps for an image or a frame directory");
  predict->add_option("checkpoint", o.checkpoint, "checkpoint file")->required();
  predict->add_option("input", o.input, "image file or directory of frames")->required();
  predict->add_option("--domain", o.domain, "domain of the input");
  add_seed(predict);
  add_out(predict);

  auto* bias = app.add_subcommand("inspect-bias", "predict an all-zero input per domain");
  bias->add_option("checkpoint", o.checkpoint, "checkpoint file")->required();
  bias->add_option("--domain", o.domain, "comma-separated domains (default: all)");
  add_seed(bias);
  add_out(bias);

  auto* cross = app.add_subcommand("cross-domain", "predict one input under several domains");
  cross->add_option("checkpoint", o.checkpoint, "checkpoint file")->required();
  cross->add_option("input", o.input, "image file or directory of frames")->required();
  cross->add_option("--domain", o.domain, "comma-separated domains (default: all)");
  cross->add_option("--share-private", o.share_private, "debug: copy this domain's private set to every domain");
  add_seed(cross);
  add_out(cross);

  auto* gen = app.add_subcommand("gen-data", "write synthetic datasets and a training config");
  add_config(gen);
  add_seed(gen);
  add_out(gen);

  auto* verify = app.add_subcommand("verify", "run a verification suite");
  verify->add_option("--suite", o.suite, "gradcheck, invariants, metrics-oracle or all");
  add_seed(verify);

  auto* report = app.add_subcommand("report", "print the build and parameter reports");
  report->add_option("checkpoint", o.checkpoint, "checkpoint file (default: build from the config)");
  add_config(report);
  add_seed(report);
  add_out(report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    worker_count();
    if (*train) return cmd_train(o, out, err);
    if (*eval) return cmd_eval(o, out);
    if (*predict) return cmd_predict(o, out);
    if (*bias) return cmd_inspect_bias(o, out);
    if (*cross) return cmd_cross_domain(o, out);
    if (*gen) return cmd_gen_data(o, out);
    if (*verify) return cmd_verify(o, out);
    if (*report) return cmd_report(o, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const RegistryError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace unisal

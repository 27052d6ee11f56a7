#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "unisal/config.hpp"
#include "unisal/data.hpp"
#include "unisal/metrics.hpp"
#include "unisal/model.hpp"
#include "unisal/trainer.hpp"

namespace unisal {

/// Dataset roots of one configured domain. A zero resolution means the one
/// recorded in the dataset manifest.
struct DomainSource {
  std::string name;
  std::filesystem::path root;
  std::filesystem::path val_root;  // empty: no validation data
  Resolution resolution;
};

/// Everything a command needs, parsed from flat `model.` / `train.` /
/// `data.` / `gen.` keys. Every field has a default.
struct RunConfig {
  std::string preset = "desk";
  ModelConfig model = ModelConfig::desk();
  TrainPolicy policy;
  LossWeights loss;
  std::uint64_t seed = 0;
  std::vector<DomainSource> domains;
  /// Synthetic domains written by gen-data; empty selects the default pair.
  std::vector<SyntheticDomainSpec> synthetic;
  /// Validation samples generated per synthetic domain.
  std::size_t synthetic_val_samples = 4;

  /// Relative dataset paths are resolved against `base_dir`. Unknown keys
  /// and malformed values raise ConfigError.
  static RunConfig from_key_values(const KeyValues& kv, const std::filesystem::path& base_dir = {});
  /// Effective configuration; parsing it back reproduces this object.
  KeyValues to_key_values() const;
};

/// Reads an optional config file and applies `overrides` on top.
RunConfig load_run_config(const std::optional<std::filesystem::path>& path, const KeyValues& overrides = {});

/// Registry in configuration order, modality and frame rate taken from each
/// dataset manifest. A missing root raises ConfigError naming the path.
std::shared_ptr<DomainRegistry> registry_from_sources(const std::vector<DomainSource>& sources);

/// Two 36x48 domains with opposite color-to-saliency mappings: a static
/// one with strong center bias and a 30 fps dynamic one with weak bias.
std::vector<SyntheticDomainSpec> default_synthetic_domains(std::uint64_t seed = 0);

/// Writes a probability map as a 16-bit grayscale image scaled so that its
/// maximum is 65535, plus `<stem>.scale.txt` holding that maximum.
void write_heatmap(const std::filesystem::path& path, const SaliencyMap& map);
/// Inverse of write_heatmap.
SaliencyMap read_heatmap(const std::filesystem::path& path);

/// Mass-weighted mean pixel-center position as (row, col) fractions of the
/// image height and width.
std::pair<double, double> center_of_mass(const SaliencyMap& map);

/// Entry point of the `unisal` executable. Returns 0 on success, 1 on a
/// runtime failure and 2 on a usage or configuration error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace unisal

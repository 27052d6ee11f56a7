#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "unisal/model.hpp"

namespace unisal {

inline constexpr char kCheckpointMagic[8] = {'U', 'N', 'I', 'S', 'A', 'L', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Model configuration and domain registry as key=value text.
KeyValues checkpoint_manifest(const UnisalModel& model);
/// Registry described by the "domain." keys of a manifest.
std::shared_ptr<DomainRegistry> registry_from_manifest(const KeyValues& manifest);

/// Writes every parameter and buffer with the manifest.
void save_checkpoint(const UnisalModel& model, const std::filesystem::path& path);

/// Rebuilds the model from the manifest and loads its tensors.
UnisalModel load_checkpoint(const std::filesystem::path& path);

/// Loads tensors into an existing model. Blobs are checked in file order
/// against the model; the first missing, extra or misshaped one raises a
/// LoadError naming it.
void load_parameters(UnisalModel& model, const std::filesystem::path& path);

/// Manifest of a checkpoint without reading the tensors.
KeyValues read_checkpoint_manifest(const std::filesystem::path& path);

}  // namespace unisal

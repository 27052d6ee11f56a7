#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace unisal {

/// Interleaved image with 1 (gray) or 3 (RGB) channels; samples in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> samples;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c) : height(h), width(w), channels(c), samples(h * w * c, 0.0) {}
  double& at(std::size_t r, std::size_t col, std::size_t ch) { return samples[(r * width + col) * channels + ch]; }
  double at(std::size_t r, std::size_t col, std::size_t ch) const {
    return samples[(r * width + col) * channels + ch];
  }
};

/// Raw integer samples plus their maximum value (255 or 65535).
struct RawImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::uint32_t max_value = 255;
  std::vector<std::uint16_t> samples;
};

/// Reads PNG (8/16-bit, gray or RGB, alpha dropped, palettes expanded) or
/// binary PGM/PPM. The format is chosen by extension.
RawImage read_raw_image(const std::filesystem::path& path);
/// Writes PNG, PGM or PPM depending on the extension.
void write_raw_image(const std::filesystem::path& path, const RawImage& image);

/// Samples divided by the maximum value.
Image read_image(const std::filesystem::path& path);
/// Quantizes [0, 1] samples to `bit_depth` (8 or 16) bits.
void write_image(const std::filesystem::path& path, const Image& image, int bit_depth = 8);

/// True for the extensions this module reads.
bool is_image_file(const std::filesystem::path& path);

}  // namespace unisal

#include "unisal/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "unisal/errors.hpp"

namespace unisal {

namespace {

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// libpng reports errors through longjmp; the message is kept for the
// exception raised after the jump lands.
struct PngError {
  char message[256] = {0};
};

[[noreturn]] void png_fail(png_structp png, png_const_charp message) {
  auto* err = static_cast<PngError*>(png_get_error_ptr(png));
  std::snprintf(err->message, sizeof(err->message), "%s", message);
  png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

RawImage read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) throw LoadError("cannot open " + path.string());
  PngError err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  if (!png) throw LoadError("png: cannot allocate reader");
  png_infop info = png_create_info_struct(png);
  struct Cleanup {
    png_structp* png;
    png_infop* info;
    ~Cleanup() { png_destroy_read_struct(png, info, nullptr); }
  } cleanup{&png, &info};

  RawImage out;
  std::vector<unsigned char> buffer;
  std::vector<png_bytep> rows;
  int out_depth = 8;
  if (setjmp(png_jmpbuf(png))) throw LoadError(path.string() + ": png: " + err.message);
  {
    png_init_io(png, file.get());
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png), png_set_strip_alpha(png);
    png_read_update_info(png, info);

    out.height = png_get_image_height(png, info);
    out.width = png_get_image_width(png, info);
    out.channels = png_get_channels(png, info);
    out_depth = png_get_bit_depth(png, info);
    out.max_value = out_depth == 16 ? 65535u : 255u;
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    buffer.resize(rowbytes * out.height);
    rows.resize(out.height);
    for (std::size_t r = 0; r < out.height; ++r) rows[r] = buffer.data() + r * rowbytes;
    png_read_image(png, rows.data());

    out.samples.resize(out.height * out.width * out.channels);
    for (std::size_t r = 0; r < out.height; ++r) {
      for (std::size_t i = 0; i < out.width * out.channels; ++i) {
        std::uint16_t v;
        if (out_depth == 16) {
          v = static_cast<std::uint16_t>((rows[r][2 * i] << 8) | rows[r][2 * i + 1]);
        } else {
          v = rows[r][i];
        }
        out.samples[r * out.width * out.channels + i] = v;
      }
    }
  }
  if (out.channels != 1 && out.channels != 3) {
    throw LoadError(path.string() + ": unsupported channel count " + std::to_string(out.channels));
  }
  return out;
}

void write_png(const std::filesystem::path& path, const RawImage& image) {
  FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) throw Error("cannot write " + path.string());
  PngError err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  if (!png) throw Error("png: cannot allocate writer");
  png_infop info = png_create_info_struct(png);
  struct Cleanup {
    png_structp* png;
    png_infop* info;
    ~Cleanup() { png_destroy_write_struct(png, info); }
  } cleanup{&png, &info};

  const bool wide = image.max_value > 255;
  const int color = image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  const std::size_t per_row = image.width * image.channels;
  std::vector<unsigned char> row(per_row * (wide ? 2 : 1));
  if (setjmp(png_jmpbuf(png))) throw Error(path.string() + ": png: " + err.message);
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height),
               wide ? 16 : 8, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < image.height; ++r) {
    for (std::size_t i = 0; i < per_row; ++i) {
      const std::uint16_t v = image.samples[r * per_row + i];
      if (wide) {
        row[2 * i] = static_cast<unsigned char>(v >> 8);  // PNG is big-endian
        row[2 * i + 1] = static_cast<unsigned char>(v & 0xff);
      } else {
        row[i] = static_cast<unsigned char>(v);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
}

// Netpbm header tokens, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string token;
  while (in) {
    int c = in.get();
    if (c == '#') {
      while (in && c != '\n') c = in.get();
      continue;
    }
    if (std::isspace(c)) {
      if (!token.empty()) return token;
      continue;
    }
    if (c == EOF) break;
    token.push_back(static_cast<char>(c));
  }
  return token;
}

RawImage read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  const std::string magic = next_token(in);
  RawImage out;
  if (magic == "P5") {
    out.channels = 1;
  } else if (magic == "P6") {
    out.channels = 3;
  } else {
    throw LoadError(path.string() + ": not a binary PGM/PPM file");
  }
  try {
    out.width = std::stoul(next_token(in));
    out.height = std::stoul(next_token(in));
    out.max_value = static_cast<std::uint32_t>(std::stoul(next_token(in)));
  } catch (const std::exception&) {
    throw LoadError(path.string() + ": malformed header");
  }
  if (out.max_value == 0 || out.max_value > 65535) throw LoadError(path.string() + ": bad maxval");
  const bool wide = out.max_value > 255;
  const std::size_t count = out.height * out.width * out.channels;
  std::vector<unsigned char> bytes(count * (wide ? 2 : 1));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) throw LoadError(path.string() + ": truncated");
  out.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.samples[i] = wide ? static_cast<std::uint16_t>((bytes[2 * i] << 8) | bytes[2 * i + 1]) : bytes[i];
  }
  return out;
}

void write_pnm(const std::filesystem::path& path, const RawImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << (image.channels == 1 ? "P5" : "P6") << "\n"
      << image.width << " " << image.height << "\n"
      << image.max_value << "\n";
  const bool wide = image.max_value > 255;
  std::vector<unsigned char> bytes;
  bytes.reserve(image.samples.size() * (wide ? 2 : 1));
  for (std::uint16_t v : image.samples) {
    if (wide) bytes.push_back(static_cast<unsigned char>(v >> 8));
    bytes.push_back(static_cast<unsigned char>(v & 0xff));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

bool is_image_file(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  return ext == ".png" || ext == ".pgm" || ext == ".ppm" || ext == ".pnm";
}

RawImage read_raw_image(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") return read_pnm(path);
  throw LoadError(path.string() + ": unsupported image extension");
}

void write_raw_image(const std::filesystem::path& path, const RawImage& image) {
  if (image.channels != 1 && image.channels != 3) throw Error("images must have 1 or 3 channels");
  if (image.samples.size() != image.height * image.width * image.channels) {
    throw Error("image sample count does not match its size");
  }
  const std::string ext = lower_extension(path);
  if (ext == ".png") return write_png(path, image);
  if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") return write_pnm(path, image);
  throw Error(path.string() + ": unsupported image extension");
}

Image read_image(const std::filesystem::path& path) {
  const RawImage raw = read_raw_image(path);
  Image img(raw.height, raw.width, raw.channels);
  const double scale = 1.0 / raw.max_value;
  for (std::size_t i = 0; i < raw.samples.size(); ++i) img.samples[i] = raw.samples[i] * scale;
  return img;
}

void write_image(const std::filesystem::path& path, const Image& image, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw Error("bit depth must be 8 or 16");
  RawImage raw;
  raw.height = image.height;
  raw.width = image.width;
  raw.channels = image.channels;
  raw.max_value = bit_depth == 16 ? 65535u : 255u;
  raw.samples.resize(image.samples.size());
  for (std::size_t i = 0; i < image.samples.size(); ++i) {
    const double v = std::clamp(image.samples[i], 0.0, 1.0);
    raw.samples[i] = static_cast<std::uint16_t>(std::lround(v * raw.max_value));
  }
  write_raw_image(path, raw);
}

}  // namespace unisal

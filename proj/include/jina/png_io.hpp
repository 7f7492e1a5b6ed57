#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "jina/error.hpp"
#include "jina/image.hpp"

namespace jina {

namespace detail {

struct PngHeader {
  int bit_depth = 0;
  int color_type = 0;
};

// Reads bit depth and color type straight from the IHDR chunk; the simplified
// libpng API converts silently, so format validation has to happen first.
inline PngHeader read_png_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<unsigned char, 26> head{};
  in.read(reinterpret_cast<char*>(head.data()), head.size());
  static constexpr unsigned char kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  if (in.gcount() != static_cast<std::streamsize>(head.size()) ||
      std::memcmp(head.data(), kSignature, 8) != 0 || std::memcmp(head.data() + 12, "IHDR", 4) != 0) {
    throw FormatError(path.string() + " is not a PNG file");
  }
  return {head[24], head[25]};
}

}  // namespace detail

inline Image load_png(const std::filesystem::path& path) {
  const auto header = detail::read_png_header(path);
  // color type 0 = gray, 2 = RGB
  if (header.bit_depth != 8 || (header.color_type != 0 && header.color_type != 2)) {
    throw FormatError(path.string() + ": unsupported PNG (bit depth " +
                      std::to_string(header.bit_depth) + ", color type " +
                      std::to_string(header.color_type) + "); need 8-bit gray or RGB");
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str())) {
    throw IoError(path.string() + ": " + png.message);
  }
  const int channels = header.color_type == 2 ? 3 : 1;
  png.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&png);
    throw IoError(path.string() + ": " + png.message);
  }
  std::vector<double> data(buffer.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) data[i] = buffer[i] / 255.0;
  return Image(static_cast<int>(png.height), static_cast<int>(png.width), channels, std::move(data));
}

inline void save_png(const Image& img, const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width());
  png.height = static_cast<png_uint_32>(img.height());
  png.format = img.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<unsigned char> buffer(img.size());
  const auto values = img.values();
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const double v = std::clamp(values[i], 0.0, 1.0);
    buffer[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, buffer.data(), 0, nullptr)) {
    throw IoError(path.string() + ": " + png.message);
  }
}

}  // namespace jina

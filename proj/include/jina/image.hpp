#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "jina/error.hpp"

namespace jina {

// Owned raster, row-major with interleaved channels, values in [0,1].
class Image {
 public:
  Image() = default;

  Image(int height, int width, int channels, double fill = 0.0)
      : height_(height), width_(width), channels_(channels) {
    check_shape();
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
  }

  Image(int height, int width, int channels, std::vector<double> data)
      : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    check_shape();
    if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
      throw GeometryError("image data length " + std::to_string(data_.size()) +
                          " does not match " + std::to_string(height) + "x" +
                          std::to_string(width) + "x" + std::to_string(channels));
    }
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(int y, int x, int c = 0) {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  double operator()(int y, int x, int c = 0) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool same_geometry(const Image& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  bool operator==(const Image&) const = default;

  bool in_unit_range() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; });
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  void clamp() {
    for (double& v : data_) v = std::clamp(v, 0.0, 1.0);
  }

  // Single channel; Rec.601 weights for RGB, copy for grayscale.
  Image luminance() const {
    if (channels_ == 1) return *this;
    Image out(height_, width_, 1);
    for (std::size_t p = 0; p < pixel_count(); ++p) {
      const double* px = &data_[p * 3];
      out.data_[p] = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
    }
    return out;
  }

  Image channel(int c) const {
    Image out(height_, width_, 1);
    for (std::size_t p = 0; p < pixel_count(); ++p) out.data_[p] = data_[p * channels_ + c];
    return out;
  }

  void set_channel(int c, const Image& plane) {
    for (std::size_t p = 0; p < pixel_count(); ++p) data_[p * channels_ + c] = plane.data_[p];
  }

  Image crop(int y0, int x0, int h, int w) const {
    if (y0 < 0 || x0 < 0 || h <= 0 || w <= 0 || y0 + h > height_ || x0 + w > width_) {
      throw GeometryError("crop window out of bounds");
    }
    Image out(h, w, channels_);
    for (int y = 0; y < h; ++y) {
      const auto src = data_.begin() + ((static_cast<std::ptrdiff_t>(y0 + y) * width_ + x0) * channels_);
      std::copy(src, src + static_cast<std::ptrdiff_t>(w) * channels_,
                out.data_.begin() + static_cast<std::ptrdiff_t>(y) * w * channels_);
    }
    return out;
  }

 private:
  void check_shape() const {
    if (height_ <= 0 || width_ <= 0) throw GeometryError("image dimensions must be positive");
    if (channels_ != 1 && channels_ != 3) throw GeometryError("image must have 1 or 3 channels");
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

}  // namespace jina

#pragma once

#include <png.h>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "cloakforge/errors.hpp"

namespace cloakforge {

struct RGB {
  uint8_t r = 0, g = 0, b = 0;
  bool operator==(const RGB&) const = default;
};

// 8-bit RGB raster, interleaved row-major (HWC).
class Image {
 public:
  Image() = default;
  Image(int width, int height, RGB fill = RGB{0, 0, 0})
      : width_(width), height_(height), data_(static_cast<size_t>(width) * height * 3) {
    for (int i = 0; i < width * height; ++i) {
      data_[i * 3 + 0] = fill.r;
      data_[i * 3 + 1] = fill.g;
      data_[i * 3 + 2] = fill.b;
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }

  RGB at(int x, int y) const {
    size_t i = idx(x, y);
    return RGB{data_[i], data_[i + 1], data_[i + 2]};
  }

  void set(int x, int y, RGB c) {
    size_t i = idx(x, y);
    data_[i] = c.r;
    data_[i + 1] = c.g;
    data_[i + 2] = c.b;
  }

  // Solid fill over [x0,x1) x [y0,y1), clipped to the raster.
  void fill_rect(int x0, int y0, int x1, int y1, RGB c) {
    x0 = std::max(x0, 0);
    y0 = std::max(y0, 0);
    x1 = std::min(x1, width_);
    y1 = std::min(y1, height_);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) set(x, y, c);
  }

  const uint8_t* data() const { return data_.data(); }
  uint8_t* data() { return data_.data(); }

  bool operator==(const Image&) const = default;

 private:
  size_t idx(int x, int y) const { return (static_cast<size_t>(y) * width_ + x) * 3; }

  int width_ = 0, height_ = 0;
  std::vector<uint8_t> data_;
};

inline void write_png(const Image& img, const std::filesystem::path& path) {
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width());
  pi.height = static_cast<png_uint_32>(img.height());
  pi.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&pi, path.string().c_str(), 0, img.data(), 0, nullptr))
    throw IoError("png write failed: " + path.string() + ": " + pi.message);
}

inline Image read_png(const std::filesystem::path& path) {
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.string().c_str()))
    throw IoError("png read failed: " + path.string() + ": " + pi.message);
  pi.format = PNG_FORMAT_RGB;
  Image img(static_cast<int>(pi.width), static_cast<int>(pi.height));
  if (!png_image_finish_read(&pi, nullptr, img.data(), 0, nullptr)) {
    png_image_free(&pi);
    throw IoError("png decode failed: " + path.string() + ": " + pi.message);
  }
  return img;
}

}  // namespace cloakforge

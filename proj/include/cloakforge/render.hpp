#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "cloakforge/image.hpp"
#include "cloakforge/metrics.hpp"
#include "cloakforge/types.hpp"

namespace cloakforge::eval {

namespace detail {

// 5x7 bitmap font, one byte per row, low 5 bits used.
inline const uint8_t* glyph5x7(char c) {
  static const uint8_t kLetters[26][7] = {
      {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}, {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E},
      {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}, {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E},
      {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}, {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10},
      {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0E}, {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11},
      {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}, {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C},
      {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}, {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F},
      {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}, {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11},
      {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}, {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10},
      {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}, {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11},
      {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}, {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04},
      {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}, {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04},
      {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}, {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11},
      {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}, {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}};
  static const uint8_t kDigits[10][7] = {
      {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}, {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},
      {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}, {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},
      {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}, {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},
      {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}, {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},
      {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}, {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}};
  static const uint8_t kDot[7] = {0, 0, 0, 0, 0, 0x0C, 0x0C};
  static const uint8_t kDash[7] = {0, 0, 0, 0x1F, 0, 0, 0};
  static const uint8_t kPercent[7] = {0x19, 0x19, 0x02, 0x04, 0x08, 0x13, 0x13};
  static const uint8_t kSpace[7] = {0, 0, 0, 0, 0, 0, 0};
  if (c >= 'a' && c <= 'z') return kLetters[c - 'a'];
  if (c >= 'A' && c <= 'Z') return kLetters[c - 'A'];
  if (c >= '0' && c <= '9') return kDigits[c - '0'];
  if (c == '.') return kDot;
  if (c == '-' || c == '_') return kDash;
  if (c == '%') return kPercent;
  return kSpace;
}

inline void draw_text(Image& img, int x, int y, const std::string& text, RGB color) {
  for (char c : text) {
    const uint8_t* glyph = glyph5x7(c);
    for (int r = 0; r < 7; ++r)
      for (int col = 0; col < 5; ++col)
        if (glyph[r] & (1 << (4 - col))) {
          int px = x + col, py = y + r;
          if (px >= 0 && px < img.width() && py >= 0 && py < img.height())
            img.set(px, py, color);
        }
    x += 6;
  }
}

inline void draw_box_outline(Image& img, const BBox& b, RGB color) {
  int x0 = static_cast<int>(b.xmin), x1 = static_cast<int>(b.xmax) - 1;
  int y0 = static_cast<int>(b.ymin), y1 = static_cast<int>(b.ymax) - 1;
  for (int x = std::max(0, x0); x <= std::min(img.width() - 1, x1); ++x) {
    if (y0 >= 0 && y0 < img.height()) img.set(x, y0, color);
    if (y1 >= 0 && y1 < img.height()) img.set(x, y1, color);
  }
  for (int y = std::max(0, y0); y <= std::min(img.height() - 1, y1); ++y) {
    if (x0 >= 0 && x0 < img.width()) img.set(x0, y, color);
    if (x1 >= 0 && x1 < img.width()) img.set(x1, y, color);
  }
}

// short corner ticks, visually distinct from detection outlines
inline void draw_box_corners(Image& img, const BBox& b, RGB color) {
  int x0 = static_cast<int>(b.xmin), x1 = static_cast<int>(b.xmax) - 1;
  int y0 = static_cast<int>(b.ymin), y1 = static_cast<int>(b.ymax) - 1;
  int len = std::max(2, std::min(x1 - x0, y1 - y0) / 4);
  auto put = [&](int x, int y) {
    if (x >= 0 && x < img.width() && y >= 0 && y < img.height()) img.set(x, y, color);
  };
  for (int i = 0; i <= len; ++i) {
    put(x0 + i, y0);
    put(x0, y0 + i);
    put(x1 - i, y0);
    put(x1, y0 + i);
    put(x0 + i, y1);
    put(x0, y1 - i);
    put(x1 - i, y1);
    put(x1, y1 - i);
  }
}

inline RGB class_color(const std::string& name) {
  static const RGB palette[] = {RGB{255, 80, 80},  RGB{80, 220, 120}, RGB{90, 160, 255},
                                RGB{250, 210, 60}, RGB{230, 110, 230}, RGB{90, 220, 220}};
  size_t h = 0;
  for (char c : name) h = h * 131 + static_cast<unsigned char>(c);
  return palette[h % (sizeof(palette) / sizeof(palette[0]))];
}

}  // namespace detail

struct RenderOptions {
  bool draw_ground_truth = false;
  bool draw_labels = true;
};

// Draws detection outlines with class+confidence labels, and optionally the
// ground truth as corner ticks. Pure function of its inputs.
inline Image render_frame(const Image& image, const std::vector<metrics::Detection>& detections,
                          const std::vector<ObjectAnnotation>& ground_truth = {},
                          const RenderOptions& opts = {}) {
  Image out = image;
  if (opts.draw_ground_truth)
    for (const auto& gt : ground_truth)
      detail::draw_box_corners(out, gt.bbox, RGB{245, 245, 245});
  for (const auto& d : detections) {
    RGB color = detail::class_color(d.class_name);
    detail::draw_box_outline(out, d.bbox, color);
    if (opts.draw_labels) {
      char label[64];
      std::snprintf(label, sizeof(label), "%s %.2f", d.class_name.c_str(), d.confidence);
      int ty = static_cast<int>(d.bbox.ymin) - 8;
      if (ty < 0) ty = static_cast<int>(d.bbox.ymin) + 1;
      detail::draw_text(out, static_cast<int>(d.bbox.xmin), ty, label, color);
    }
  }
  return out;
}

}  // namespace cloakforge::eval

// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "defectforge/error.hpp"

namespace defectforge {

/// Integer pixel rectangle, half-open: [x, x+w) x [y, y+h).
struct PixelBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  bool empty() const { return w <= 0 || h <= 0; }
  long long area() const { return empty() ? 0 : static_cast<long long>(w) * h; }
  bool contains(const PixelBox& o) const {
    return o.x >= x && o.y >= y && o.x + o.w <= x + w && o.y + o.h <= y + h;
  }
  friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

inline double iou(const PixelBox& a, const PixelBox& b) {
  const int x0 = std::max(a.x, b.x), y0 = std::max(a.y, b.y);
  const int x1 = std::min(a.x + a.w, b.x + b.w), y1 = std::min(a.y + a.h, b.y + b.h);
  const long long inter = (x1 > x0 && y1 > y0) ? static_cast<long long>(x1 - x0) * (y1 - y0) : 0;
  const long long uni = a.area() + b.area() - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

/// 8-bit interleaved RGB image.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // width * height * 3

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

  bool empty() const { return width == 0 || height == 0; }
  std::uint8_t* at(int x, int y) { return &pixels[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* at(int x, int y) const {
    return &pixels[(static_cast<std::size_t>(y) * width + x) * 3];
  }
  friend bool operator==(const Image&, const Image&) = default;
};

/// Binary raster, one byte per pixel holding 0 or 1.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  bool inside(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }

  long long area() const {
    return static_cast<long long>(std::count_if(data.begin(), data.end(), [](auto v) { return v != 0; }));
  }
  bool empty() const { return area() == 0; }

  /// Tight bounding box; empty box when the mask is empty.
  PixelBox bbox() const {
    int x0 = width, y0 = height, x1 = -1, y1 = -1;
    for (int y = 0; y < height; ++y) {
      const auto* row = &data[static_cast<std::size_t>(y) * width];
      for (int x = 0; x < width; ++x) {
        if (row[x]) {
          x0 = std::min(x0, x);
          x1 = std::max(x1, x);
          y0 = std::min(y0, y);
          y1 = std::max(y1, y);
        }
      }
    }
    if (x1 < 0) return {};
    return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
  }

  friend bool operator==(const Mask&, const Mask&) = default;
};

/// Single-channel float raster (soft masks, heatmaps).
struct FloatMap {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  FloatMap() = default;
  FloatMap(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

inline Image crop(const Image& img, const PixelBox& r) {
  if (r.x < 0 || r.y < 0 || r.x + r.w > img.width || r.y + r.h > img.height || r.empty()) {
    throw Error(ErrorKind::InvalidArgument, "crop outside image");
  }
  Image out(r.w, r.h);
  for (int y = 0; y < r.h; ++y) {
    std::copy_n(img.at(r.x, r.y + y), static_cast<std::size_t>(r.w) * 3, out.at(0, y));
  }
  return out;
}

inline Mask crop(const Mask& m, const PixelBox& r) {
  if (r.x < 0 || r.y < 0 || r.x + r.w > m.width || r.y + r.h > m.height || r.empty()) {
    throw Error(ErrorKind::InvalidArgument, "crop outside mask");
  }
  Mask out(r.w, r.h);
  for (int y = 0; y < r.h; ++y) {
    std::copy_n(&m.data[static_cast<std::size_t>(r.y + y) * m.width + r.x], r.w, &out.data[static_cast<std::size_t>(y) * r.w]);
  }
  return out;
}

namespace detail {

struct LinearTap {
  int i0;
  int i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

// Pixel-center aligned source taps, edge-clamped.
inline std::vector<LinearTap> linear_taps(int src, int dst) {
  std::vector<LinearTap> taps(static_cast<std::size_t>(dst));
  const double scale = static_cast<double>(src) / dst;
  for (int d = 0; d < dst; ++d) {
    double s = (d + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src - 1));
    const int i0 = static_cast<int>(std::floor(s));
    const int i1 = std::min(i0 + 1, src - 1);
    taps[static_cast<std::size_t>(d)] = {i0, i1, s - i0};
  }
  return taps;
}

inline int nearest_index(int d, int src, int dst) {
  const long long s = (2LL * d + 1) * src / (2LL * dst);
  return static_cast<int>(std::min<long long>(s, src - 1));
}

}  // namespace detail

/// Bilinear resize with pixel-center alignment; results rounded to nearest.
inline Image resize_bilinear(const Image& src, int dst_w, int dst_h) {
  if (src.width == dst_w && src.height == dst_h) return src;
  const auto tx = detail::linear_taps(src.width, dst_w);
  const auto ty = detail::linear_taps(src.height, dst_h);
  Image out(dst_w, dst_h);
  // Horizontal passes of the two source rows in use, reused across output rows.
  const std::size_t row_len = static_cast<std::size_t>(dst_w) * 3;
  std::vector<double> rows[2] = {std::vector<double>(row_len), std::vector<double>(row_len)};
  int row_src[2] = {-1, -1};
  auto horizontal = [&](int sy) -> const std::vector<double>& {
    for (int k = 0; k < 2; ++k) {
      if (row_src[k] == sy) return rows[k];
    }
    const int k = row_src[0] == -1 || row_src[0] < row_src[1] ? 0 : 1;
    row_src[k] = sy;
    auto& r = rows[k];
    for (int x = 0; x < dst_w; ++x) {
      const auto& s = tx[static_cast<std::size_t>(x)];
      const auto* p0 = src.at(s.i0, sy);
      const auto* p1 = src.at(s.i1, sy);
      for (int c = 0; c < 3; ++c) r[static_cast<std::size_t>(x) * 3 + c] = p0[c] + (p1[c] - p0[c]) * s.w1;
    }
    return r;
  };
  for (int y = 0; y < dst_h; ++y) {
    const auto& t = ty[static_cast<std::size_t>(y)];
    const auto& top = horizontal(t.i0);
    const auto& bot = horizontal(t.i1);
    auto* o = out.at(0, y);
    for (std::size_t i = 0; i < row_len; ++i) {
      const double v = top[i] + (bot[i] - top[i]) * t.w1;
      o[i] = static_cast<std::uint8_t>(v + 0.5);  // v in [0, 255]: rounds half up like lround
    }
  }
  return out;
}

/// Nearest-neighbour resize; binary values are preserved exactly.
inline Mask resize_nearest(const Mask& src, int dst_w, int dst_h) {
  if (src.width == dst_w && src.height == dst_h) return src;
  std::vector<int> xs(static_cast<std::size_t>(dst_w));
  for (int x = 0; x < dst_w; ++x) xs[static_cast<std::size_t>(x)] = detail::nearest_index(x, src.width, dst_w);
  Mask out(dst_w, dst_h);
  for (int y = 0; y < dst_h; ++y) {
    const int sy = detail::nearest_index(y, src.height, dst_h);
    for (int x = 0; x < dst_w; ++x) out.at(x, y) = src.at(xs[static_cast<std::size_t>(x)], sy) ? 1 : 0;
  }
  return out;
}

}  // namespace defectforge

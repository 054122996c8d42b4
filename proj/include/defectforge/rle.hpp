// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "defectforge/error.hpp"
#include "defectforge/image.hpp"

namespace defectforge {

/// COCO run-length encoding: column-major runs alternating 0s and 1s,
/// starting with a (possibly empty) run of 0s.
struct Rle {
  int height = 0;
  int width = 0;
  std::vector<std::uint32_t> counts;

  friend bool operator==(const Rle&, const Rle&) = default;
};

inline Rle rle_encode(const Mask& m) {
  Rle r{m.height, m.width, {}};
  std::uint8_t cur = 0;
  std::uint32_t run = 0;
  for (int x = 0; x < m.width; ++x) {
    for (int y = 0; y < m.height; ++y) {
      const std::uint8_t v = m.at(x, y) ? 1 : 0;
      if (v != cur) {
        r.counts.push_back(run);
        run = 0;
        cur = v;
      }
      ++run;
    }
  }
  r.counts.push_back(run);
  return r;
}

inline Mask rle_decode(const Rle& r) {
  Mask m(r.width, r.height);
  const std::size_t total = static_cast<std::size_t>(r.width) * r.height;
  std::size_t pos = 0;
  std::uint8_t v = 0;
  for (auto c : r.counts) {
    if (pos + c > total) throw Error(ErrorKind::MalformedSegmentation, "RLE runs exceed mask size");
    if (v) {
      for (std::size_t i = pos; i < pos + c; ++i) {
        m.at(static_cast<int>(i / r.height), static_cast<int>(i % r.height)) = 1;
      }
    }
    pos += c;
    v ^= 1;
  }
  if (pos != total) throw Error(ErrorKind::MalformedSegmentation, "RLE runs do not cover mask");
  return m;
}

inline long long rle_area(const Rle& r) {
  long long a = 0;
  for (std::size_t i = 1; i < r.counts.size(); i += 2) a += r.counts[i];
  return a;
}

inline PixelBox rle_bbox(const Rle& r) {
  if (r.height == 0) return {};
  long long pos = 0;
  int x0 = r.width, x1 = -1, y0 = r.height, y1 = -1;
  for (std::size_t i = 0; i < r.counts.size(); ++i) {
    const long long c = r.counts[i];
    if ((i & 1) && c > 0) {
      const long long s = pos, e = pos + c - 1;
      const int xs = static_cast<int>(s / r.height), xe = static_cast<int>(e / r.height);
      x0 = std::min(x0, xs);
      x1 = std::max(x1, xe);
      if (xs == xe) {
        y0 = std::min(y0, static_cast<int>(s % r.height));
        y1 = std::max(y1, static_cast<int>(e % r.height));
      } else {
        y0 = 0;
        y1 = r.height - 1;
      }
    }
    pos += c;
  }
  if (x1 < 0) return {};
  return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

/// Even-odd scanline fill sampled at pixel centers. Multiple polygons are
/// unioned.
inline Mask rasterize_polygons(const std::vector<std::vector<double>>& polygons, int width, int height) {
  Mask m(width, height);
  std::vector<double> xs;
  for (const auto& poly : polygons) {
    if (poly.size() < 6 || poly.size() % 2 != 0) {
      throw Error(ErrorKind::MalformedSegmentation, "polygon needs >= 3 vertices");
    }
    const std::size_t n = poly.size() / 2;
    double ymin = poly[1], ymax = poly[1];
    for (std::size_t i = 0; i < n; ++i) {
      ymin = std::min(ymin, poly[2 * i + 1]);
      ymax = std::max(ymax, poly[2 * i + 1]);
    }
    const int ya = std::max(0, static_cast<int>(std::floor(ymin - 0.5)));
    const int yb = std::min(height - 1, static_cast<int>(std::ceil(ymax)));
    for (int y = ya; y <= yb; ++y) {
      const double yc = y + 0.5;
      xs.clear();
      for (std::size_t i = 0; i < n; ++i) {
        const double x1 = poly[2 * i], y1 = poly[2 * i + 1];
        const double x2 = poly[2 * ((i + 1) % n)], y2 = poly[2 * ((i + 1) % n) + 1];
        if ((y1 <= yc && yc < y2) || (y2 <= yc && yc < y1)) {
          xs.push_back(x1 + (yc - y1) * (x2 - x1) / (y2 - y1));
        }
      }
      std::sort(xs.begin(), xs.end());
      for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
        const int xa = std::max(0, static_cast<int>(std::ceil(xs[k] - 0.5)));
        const int xb = std::min(width, static_cast<int>(std::ceil(xs[k + 1] - 0.5)));
        for (int x = xa; x < xb; ++x) m.at(x, y) = 1;
      }
    }
  }
  return m;
}

/// pycocotools compressed-string form of `counts`.
inline std::string rle_to_string(const Rle& r) {
  std::string s;
  for (std::size_t i = 0; i < r.counts.size(); ++i) {
    long long x = r.counts[i];
    if (i > 2) x -= static_cast<long long>(r.counts[i - 2]);
    bool more = true;
    while (more) {
      char c = static_cast<char>(x & 0x1f);
      x >>= 5;
      more = (c & 0x10) ? x != -1 : x != 0;
      if (more) c |= 0x20;
      s.push_back(static_cast<char>(c + 48));
    }
  }
  return s;
}

inline Rle rle_from_string(std::string_view s, int height, int width) {
  Rle r{height, width, {}};
  std::size_t p = 0;
  while (p < s.size()) {
    long long x = 0;
    int k = 0;
    bool more = true;
    while (more) {
      if (p >= s.size()) throw Error(ErrorKind::MalformedSegmentation, "truncated RLE string");
      const long long c = static_cast<long long>(s[p]) - 48;
      x |= (c & 0x1f) << (5 * k);
      more = (c & 0x20) != 0;
      ++p;
      ++k;
      if (!more && (c & 0x10)) x |= -1LL << (5 * k);
    }
    if (r.counts.size() > 2) x += static_cast<long long>(r.counts[r.counts.size() - 2]);
    if (x < 0) throw Error(ErrorKind::MalformedSegmentation, "negative RLE run");
    r.counts.push_back(static_cast<std::uint32_t>(x));
  }
  return r;
}

}  // namespace defectforge

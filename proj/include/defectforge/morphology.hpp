// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <utility>
#include <vector>

#include "defectforge/image.hpp"

namespace defectforge {

namespace detail {

// Separable square min/max filter of half-width r. Out-of-image pixels count
// as 0, so erosion shrinks masks touching the border.
inline Mask square_filter(const Mask& m, int r, bool dilate) {
  if (r <= 0) return m;
  Mask tmp(m.width, m.height), out(m.width, m.height);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      std::uint8_t v = dilate ? 0 : 1;
      for (int k = -r; k <= r; ++k) {
        const int xx = x + k;
        const std::uint8_t s = (xx >= 0 && xx < m.width) ? m.at(xx, y) : 0;
        if (dilate ? s != 0 : s == 0) {
          v = dilate ? 1 : 0;
          break;
        }
      }
      tmp.at(x, y) = v;
    }
  }
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      std::uint8_t v = dilate ? 0 : 1;
      for (int k = -r; k <= r; ++k) {
        const int yy = y + k;
        const std::uint8_t s = (yy >= 0 && yy < m.height) ? tmp.at(x, yy) : 0;
        if (dilate ? s != 0 : s == 0) {
          v = dilate ? 1 : 0;
          break;
        }
      }
      out.at(x, y) = v;
    }
  }
  return out;
}

}  // namespace detail

inline Mask dilate(const Mask& m, int radius) { return detail::square_filter(m, radius, true); }
inline Mask erode(const Mask& m, int radius) { return detail::square_filter(m, radius, false); }

inline Mask intersect(const Mask& a, const Mask& b) {
  Mask out(a.width, a.height);
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = (a.data[i] && b.data[i]) ? 1 : 0;
  return out;
}

/// True when every set pixel of `inner` is set in `outer`.
inline bool contained_in(const Mask& inner, const Mask& outer) {
  for (std::size_t i = 0; i < inner.data.size(); ++i) {
    if (inner.data[i] && !outer.data[i]) return false;
  }
  return true;
}

inline double mask_iou(const Mask& a, const Mask& b) {
  long long inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    inter += (a.data[i] && b.data[i]);
    uni += (a.data[i] || b.data[i]);
  }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
}

/// 8-connected component labels (0 = background, 1..n); returns n.
inline int label_components(const Mask& m, std::vector<int>& labels) {
  labels.assign(m.data.size(), 0);
  int n = 0;
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * m.width + x;
      if (!m.data[idx] || labels[idx]) continue;
      ++n;
      labels[idx] = n;
      stack.push_back({x, y});
      while (!stack.empty()) {
        auto [cx, cy] = stack.back();
        stack.pop_back();
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = cx + dx, ny = cy + dy;
            if (!m.inside(nx, ny)) continue;
            const std::size_t ni = static_cast<std::size_t>(ny) * m.width + nx;
            if (m.data[ni] && !labels[ni]) {
              labels[ni] = n;
              stack.push_back({nx, ny});
            }
          }
        }
      }
    }
  }
  return n;
}

inline int count_components(const Mask& m) {
  std::vector<int> labels;
  return label_components(m, labels);
}

/// Largest 8-connected component; ties go to the lowest label (scan order).
inline Mask largest_component(const Mask& m) {
  std::vector<int> labels;
  const int n = label_components(m, labels);
  Mask out(m.width, m.height);
  if (n == 0) return out;
  std::vector<long long> sizes(static_cast<std::size_t>(n) + 1, 0);
  for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
  int best = 1;
  for (int l = 2; l <= n; ++l) {
    if (sizes[static_cast<std::size_t>(l)] > sizes[static_cast<std::size_t>(best)]) best = l;
  }
  for (std::size_t i = 0; i < labels.size(); ++i) out.data[i] = labels[i] == best ? 1 : 0;
  return out;
}

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Centroid of set pixels in pixel-center coordinates (x + 0.5, y + 0.5).
inline Point2 centroid(const Mask& m) {
  double sx = 0, sy = 0;
  long long n = 0;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (m.at(x, y)) {
        sx += x + 0.5;
        sy += y + 0.5;
        ++n;
      }
    }
  }
  if (n == 0) return {};
  return {sx / static_cast<double>(n), sy / static_cast<double>(n)};
}

}  // namespace defectforge

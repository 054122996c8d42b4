// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "defectforge/dataset.hpp"
#include "defectforge/image.hpp"
#include "defectforge/rle.hpp"

namespace defectforge::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "df") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline Mask rect_mask(int w, int h, PixelBox r) {
  Mask m(w, h);
  for (int y = r.y; y < r.y + r.h; ++y)
    for (int x = r.x; x < r.x + r.w; ++x) m.at(x, y) = 1;
  return m;
}

inline AnnotationInstance make_annotation(int id, int image_id, const Mask& m) {
  AnnotationInstance a;
  a.id = id;
  a.image_id = image_id;
  a.category_id = 1;
  a.segmentation = rle_encode(m);
  a.bbox = to_bbox(m.bbox());
  a.area = static_cast<double>(m.area());
  return a;
}

/// In-memory dataset; images are not backed by files.
inline Dataset make_dataset(const std::vector<std::pair<int, Resolution>>& images) {
  Dataset ds;
  ds.categories = {{1, "defect"}};
  for (const auto& [id, res] : images) {
    ds.images.push_back({id, "img_" + std::to_string(id) + ".png", res.first, res.second});
  }
  return ds;
}

/// Rasterized ellipse, optionally rotated (radians).
inline Mask ellipse_mask(int w, int h, double cx, double cy, double rx, double ry, double angle = 0.0) {
  std::vector<double> poly;
  for (int i = 0; i < 48; ++i) {
    const double t = 6.283185307179586 * i / 48;
    const double ex = rx * std::cos(t), ey = ry * std::sin(t);
    poly.push_back(cx + ex * std::cos(angle) - ey * std::sin(angle));
    poly.push_back(cy + ex * std::sin(angle) + ey * std::cos(angle));
  }
  return rasterize_polygons({poly}, w, h);
}

}  // namespace defectforge::testing

// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "defectforge/dataset.hpp"
#include "defectforge/error.hpp"
#include "defectforge/image.hpp"
#include "defectforge/png_io.hpp"
#include "defectforge/rle.hpp"
#include "defectforge/rng.hpp"

namespace defectforge {

/// Synthetic stand-in for a ball-screw pitting dataset: real metadata counts,
/// procedurally rendered pixels.
struct FixtureShape {
  struct Group {
    Resolution resolution;
    int images = 0;
  };
  std::vector<Group> retained = {{{1130, 460}, 660}, {{1540, 645}, 375}};
  std::vector<Group> other = {{{800, 600}, 40}, {{1280, 535}, 29}};
  int defective = 325;
  std::array<int, 3> per_image = {299, 20, 6};  // images with 1, 2, 3 instances
  int other_annotations = 37;
  // how many 2- and 3-instance images land in the train split
  int train_doubles = 6;
  int train_triples = 2;
  std::array<double, 3> split_ratios = {0.65, 0.15, 0.20};
  std::uint64_t split_seed = 7;
  std::string category = "pitting";
};

inline std::vector<Resolution> resolutions_of(const std::vector<FixtureShape::Group>& groups) {
  std::vector<Resolution> r;
  for (const auto& g : groups) r.push_back(g.resolution);
  return r;
}

namespace detail {

inline constexpr int kFixtureMargin = 72;
inline constexpr double kFixtureSeparation = 260.0;

struct Ellipse {
  double cx, cy, rx, ry, angle;
};

inline Mask ellipse_raster(const Ellipse& e, int w, int h) {
  std::vector<double> poly;
  for (int i = 0; i < 48; ++i) {
    const double t = 6.283185307179586 * i / 48;
    const double ex = e.rx * std::cos(t), ey = e.ry * std::sin(t);
    poly.push_back(e.cx + ex * std::cos(e.angle) - ey * std::sin(e.angle));
    poly.push_back(e.cy + ex * std::sin(e.angle) + ey * std::cos(e.angle));
  }
  return rasterize_polygons({poly}, w, h);
}

/// Defect centres skew towards the upper-left corner; instances in one
/// image keep their crop windows apart.
inline std::vector<Ellipse> place_defects(Rng& rng, Resolution res, int n) {
  const auto [w, h] = res;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::vector<Ellipse> out;
    for (int i = 0; i < n; ++i) {
      Ellipse e{};
      e.rx = rng.uniform(7.0, 40.0);
      e.ry = rng.uniform(7.0, 40.0);
      e.angle = rng.uniform(0.0, 3.141592653589793);
      e.cx = kFixtureMargin + (w - 2.0 * kFixtureMargin) * std::pow(rng.uniform(), 1.8);
      e.cy = kFixtureMargin + (h - 2.0 * kFixtureMargin) * std::pow(rng.uniform(), 1.8);
      out.push_back(e);
    }
    bool ok = true;
    for (int i = 0; i < n && ok; ++i)
      for (int j = i + 1; j < n && ok; ++j) ok = std::hypot(out[i].cx - out[j].cx, out[i].cy - out[j].cy) >= kFixtureSeparation;
    if (ok) return out;
  }
  throw Error(ErrorKind::InvalidArgument, "cannot place fixture defects apart");
}

}  // namespace detail

/// Metadata of the fixture; images live under `images/` relative to the root.
/// The multi-instance images are arranged so that the split with the shape's
/// seed and ratios gives train_doubles + train_triples of them in train.
inline Dataset make_fixture(const FixtureShape& shape = {}, std::uint64_t seed = 7) {
  Rng rng(derive_seed(seed, {0xf1c5}));
  std::vector<Resolution> slots;
  int retained_total = 0;
  for (const auto& g : shape.retained) {
    slots.insert(slots.end(), static_cast<std::size_t>(g.images), g.resolution);
    retained_total += g.images;
  }
  for (const auto& g : shape.other) slots.insert(slots.end(), static_cast<std::size_t>(g.images), g.resolution);
  rng.shuffle(slots);
  const auto retained_res = resolutions_of(shape.retained);
  const std::set<Resolution> kept(retained_res.begin(), retained_res.end());

  Dataset ds;
  ds.categories = {{1, shape.category}};
  std::vector<int> retained_ids, other_ids;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    char name[40];
    std::snprintf(name, sizeof name, "images/bs_%04d.png", id);
    ds.images.push_back({id, name, slots[i].first, slots[i].second});
    (kept.count(slots[i]) ? retained_ids : other_ids).push_back(id);
  }
  const int multi = shape.per_image[1] + shape.per_image[2];
  if (shape.per_image[0] + multi != shape.defective || shape.defective > retained_total ||
      shape.other_annotations > static_cast<int>(other_ids.size())) {
    throw Error(ErrorKind::InvalidArgument, "inconsistent fixture shape");
  }
  rng.shuffle(retained_ids);
  std::vector<int> defective(retained_ids.begin(), retained_ids.begin() + shape.defective);
  std::sort(defective.begin(), defective.end());

  // Which defective images end up in train depends only on the defective
  // stratum, so one placeholder instance per image is enough to find out.
  Dataset probe;
  for (int id : retained_ids) probe.images.push_back(ds.image(id));
  for (int id : defective) probe.annotations.push_back({id, id, 1, {}, {}, 0.0, {}});
  const auto sp = split(probe, shape.split_ratios, shape.split_seed);
  const std::set<int> train(sp.train.begin(), sp.train.end());
  std::vector<int> in_train, outside;
  for (int id : defective) (train.count(id) ? in_train : outside).push_back(id);
  rng.shuffle(in_train);
  rng.shuffle(outside);
  const int out_doubles = shape.per_image[1] - shape.train_doubles;
  const int out_triples = shape.per_image[2] - shape.train_triples;
  if (shape.train_doubles + shape.train_triples > static_cast<int>(in_train.size()) || out_doubles < 0 ||
      out_triples < 0 || out_doubles + out_triples > static_cast<int>(outside.size())) {
    throw Error(ErrorKind::InvalidArgument, "fixture multi-instance layout does not fit the split");
  }
  std::map<int, int> count;
  for (int id : defective) count[id] = 1;
  for (int i = 0; i < shape.train_doubles; ++i) count[in_train[static_cast<std::size_t>(i)]] = 2;
  for (int i = 0; i < shape.train_triples; ++i) count[in_train[static_cast<std::size_t>(shape.train_doubles + i)]] = 3;
  for (int i = 0; i < out_doubles; ++i) count[outside[static_cast<std::size_t>(i)]] = 2;
  for (int i = 0; i < out_triples; ++i) count[outside[static_cast<std::size_t>(out_doubles + i)]] = 3;
  rng.shuffle(other_ids);
  for (int i = 0; i < shape.other_annotations; ++i) count[other_ids[static_cast<std::size_t>(i)]] = 1;

  int ann_id = 1;
  for (const auto& [image_id, n] : count) {
    const auto& rec = ds.image(image_id);
    Rng geo(derive_seed(seed, {0x9e0, static_cast<std::uint64_t>(image_id)}));
    for (const auto& e : detail::place_defects(geo, rec.resolution(), n)) {
      const Mask m = detail::ellipse_raster(e, rec.width, rec.height);
      AnnotationInstance a;
      a.id = ann_id++;
      a.image_id = image_id;
      a.category_id = 1;
      a.segmentation = rle_encode(m);
      a.bbox = to_bbox(rle_bbox(a.segmentation));
      a.area = static_cast<double>(rle_area(a.segmentation));
      ds.annotations.push_back(std::move(a));
    }
  }
  validate(ds, false);
  return ds;
}

/// Brushed-steel look: horizontal striations over a slow gradient; defects
/// are darker textured pits.
inline Image render_fixture_image(const Dataset& ds, const ImageRecord& rec, std::uint64_t seed = 7) {
  Rng rng(derive_seed(seed, {0x91c, static_cast<std::uint64_t>(rec.id)}));
  const double base = rng.uniform(105, 150), phase = rng.uniform(0, 6.28), period = rng.uniform(5.0, 9.0);
  const double tilt = rng.uniform(-12, 12);
  std::vector<double> row(static_cast<std::size_t>(rec.height));
  for (int y = 0; y < rec.height; ++y) {
    row[static_cast<std::size_t>(y)] = base + 14 * std::sin(6.283185307179586 * y / period + phase) +
                                       5 * std::sin(0.37 * y + 2 * phase);
  }
  Image img(rec.width, rec.height);
  Mask defect(rec.width, rec.height);
  for (const auto* a : ds.annotations_of(rec.id)) {
    const Mask m = rle_decode(a->segmentation);
    for (std::size_t i = 0; i < m.data.size(); ++i) defect.data[i] |= m.data[i];
  }
  for (int y = 0; y < rec.height; ++y) {
    for (int x = 0; x < rec.width; ++x) {
      double v = row[static_cast<std::size_t>(y)] + tilt * (static_cast<double>(x) / rec.width - 0.5);
      if (defect.at(x, y)) v = 0.42 * v + 8 * std::sin(0.9 * x + 0.7 * y);
      v = std::clamp(v, 0.0, 255.0);
      auto* p = img.at(x, y);
      p[0] = static_cast<std::uint8_t>(std::clamp(v - 3, 0.0, 255.0));
      p[1] = static_cast<std::uint8_t>(v);
      p[2] = static_cast<std::uint8_t>(std::clamp(v + 5, 0.0, 255.0));
    }
  }
  return img;
}

/// Writes the images and `annotations.json` under root.
inline void write_fixture(const Dataset& ds, const std::filesystem::path& root, std::uint64_t seed = 7) {
  for (const auto& rec : ds.images) write_png(root / rec.file_path, render_fixture_image(ds, rec, seed));
  Dataset out = ds;
  out.root = root;
  save_coco(out, root / "annotations.json");
}

}  // namespace defectforge

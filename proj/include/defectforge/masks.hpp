// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <future>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "defectforge/dataset.hpp"
#include "defectforge/error.hpp"
#include "defectforge/morphology.hpp"
#include "defectforge/png_io.hpp"
#include "defectforge/rle.hpp"
#include "defectforge/rng.hpp"

namespace defectforge {

struct TransformConfig {
  double scale_min = 0.8;
  double scale_max = 1.2;
  int max_shift = 50;

  void validate() const {
    if (!(scale_min > 0) || scale_max < scale_min || max_shift < 0) {
      throw Error(ErrorKind::ConfigError, "invalid mask transform ranges");
    }
  }
};

struct MaskTransform {
  double scale = 1.0;
  int dx = 0;
  int dy = 0;
  int source_annotation_id = 0;
  std::uint64_t rng_seed = 0;
};

/// scale ~ U[scale_min, scale_max]; dx, dy ~ integer U[-max_shift, max_shift].
inline MaskTransform sample_transform(Rng& rng, const TransformConfig& cfg = {}) {
  cfg.validate();
  MaskTransform t;
  t.scale = cfg.scale_min == cfg.scale_max ? cfg.scale_min : rng.uniform(cfg.scale_min, cfg.scale_max);
  t.dx = static_cast<int>(rng.uniform_int(-cfg.max_shift, cfg.max_shift));
  t.dy = static_cast<int>(rng.uniform_int(-cfg.max_shift, cfg.max_shift));
  t.rng_seed = rng.next();
  return t;
}

enum class PlacementMode { SourcePosition, FullArea, HeatmapWeighted };

inline std::string_view to_string(PlacementMode m) {
  switch (m) {
    case PlacementMode::SourcePosition: return "source-position";
    case PlacementMode::FullArea: return "full-area";
    case PlacementMode::HeatmapWeighted: return "heatmap-weighted";
  }
  return "source-position";
}

inline PlacementMode parse_placement(std::string_view s) {
  if (s == "source-position") return PlacementMode::SourcePosition;
  if (s == "full-area") return PlacementMode::FullArea;
  if (s == "heatmap-weighted") return PlacementMode::HeatmapWeighted;
  throw Error(ErrorKind::ConfigError, "unknown placement prior '" + std::string(s) + "'");
}

struct PlacementPrior {
  PlacementMode mode = PlacementMode::SourcePosition;
  std::optional<Heatmap> heatmap;

  void validate(Resolution target) const {
    if ((mode == PlacementMode::HeatmapWeighted) != heatmap.has_value()) {
      throw Error(ErrorKind::InvalidArgument, "heatmap must be given exactly for the heatmap-weighted prior");
    }
    if (heatmap && heatmap->resolution != target) {
      throw Error(ErrorKind::ResolutionMismatch, "heatmap is for " + to_string(heatmap->resolution));
    }
  }
};

struct SyntheticMask {
  std::string mask_id;
  Resolution resolution{};
  Rle rle;
  MaskTransform transform;
  int attempts = 1;  // placements tried, including the accepted one
  Point2 target_centroid;

  Mask mask() const { return rle_decode(rle); }
  long long area() const { return rle_area(rle); }
  PixelBox bbox() const { return rle_bbox(rle); }
};

/// Source annotation raster cut to its bounding box.
struct SourceShape {
  Mask crop;
  PixelBox box;
  Point2 centroid;  // image coordinates
  long long area = 0;
};

inline SourceShape source_shape(const Mask& full) {
  SourceShape s;
  s.box = full.bbox();
  if (s.box.empty()) throw Error(ErrorKind::MalformedSegmentation, "source mask is empty");
  s.crop = crop(full, s.box);
  const Point2 c = centroid(s.crop);
  s.centroid = {c.x + s.box.x, c.y + s.box.y};
  s.area = s.crop.area();
  return s;
}

namespace detail {

struct Placed {
  Mask local;  // raster over `box`
  PixelBox box;
  long long area = 0;
  bool inside = true;
};

// Inverse mapping: destination pixel center p maps to the source point
// c_src + (p - c_dst) / scale, sampled by the pixel containing it.
inline Placed render_scaled(const SourceShape& src, double scale, Point2 c_dst, Resolution target) {
  const double x0 = c_dst.x + (src.box.x - src.centroid.x) * scale;
  const double y0 = c_dst.y + (src.box.y - src.centroid.y) * scale;
  Placed p;
  p.box.x = static_cast<int>(std::floor(x0)) - 1;
  p.box.y = static_cast<int>(std::floor(y0)) - 1;
  p.box.w = static_cast<int>(std::ceil(src.box.w * scale)) + 3;
  p.box.h = static_cast<int>(std::ceil(src.box.h * scale)) + 3;
  p.local = Mask(p.box.w, p.box.h);
  for (int ly = 0; ly < p.box.h; ++ly) {
    const double sy = src.centroid.y + (p.box.y + ly + 0.5 - c_dst.y) / scale;
    const int iy = static_cast<int>(std::floor(sy)) - src.box.y;
    if (iy < 0 || iy >= src.box.h) continue;
    for (int lx = 0; lx < p.box.w; ++lx) {
      const double sx = src.centroid.x + (p.box.x + lx + 0.5 - c_dst.x) / scale;
      const int ix = static_cast<int>(std::floor(sx)) - src.box.x;
      if (ix < 0 || ix >= src.box.w || !src.crop.at(ix, iy)) continue;
      p.local.at(lx, ly) = 1;
      ++p.area;
      const int gx = p.box.x + lx, gy = p.box.y + ly;
      if (gx < 0 || gy < 0 || gx >= target.first || gy >= target.second) p.inside = false;
    }
  }
  return p;
}

// Sub-pixel phases tried for the destination centroid; the one whose area
// best matches scale^2 * area wins. Keeps small masks area-faithful.
inline constexpr double kPhases[] = {0.0, 0.25, -0.25, 0.5};

inline Placed render_best_phase(const SourceShape& src, double scale, Point2 base, Resolution target) {
  const double want = scale * scale * static_cast<double>(src.area);
  std::optional<Placed> best;
  double best_err = 0;
  for (double py : kPhases) {
    for (double px : kPhases) {
      auto p = render_scaled(src, scale, {base.x + px, base.y + py}, target);
      const double err = std::abs(static_cast<double>(p.area) - want);
      if (!best || err < best_err) {
        best_err = err;
        best = std::move(p);
      }
      if (scale == 1.0) return *best;  // exact copy, phase irrelevant
    }
  }
  return *best;
}

inline Point2 sample_heatmap(const Heatmap& hm, Rng& rng) {
  double total = 0;
  for (double v : hm.counts) total += v;
  if (total <= 0) {
    return {rng.uniform(0, hm.resolution.first), rng.uniform(0, hm.resolution.second)};
  }
  double r = rng.uniform() * total;
  std::size_t cell = 0;
  for (; cell + 1 < hm.counts.size(); ++cell) {
    if (r < hm.counts[cell]) break;
    r -= hm.counts[cell];
  }
  // skip trailing zero cells that floating error could land on
  while (hm.counts[cell] <= 0 && cell > 0) --cell;
  const int gx = static_cast<int>(cell % static_cast<std::size_t>(hm.grid_width));
  const int gy = static_cast<int>(cell / static_cast<std::size_t>(hm.grid_width));
  const double x = std::min<double>((gx + rng.uniform()) * hm.downscale, hm.resolution.first);
  const double y = std::min<double>((gy + rng.uniform()) * hm.downscale, hm.resolution.second);
  return {x, y};
}

inline Point2 base_point(const SourceShape& src, const PlacementPrior& prior, Resolution target, Rng& rng) {
  switch (prior.mode) {
    case PlacementMode::SourcePosition: return src.centroid;
    case PlacementMode::FullArea: return {rng.uniform(0, target.first), rng.uniform(0, target.second)};
    case PlacementMode::HeatmapWeighted: return sample_heatmap(*prior.heatmap, rng);
  }
  return src.centroid;
}

}  // namespace detail

/// Scales the source about its centroid and places it per the prior, shifted
/// by (dx, dy). A placement that leaves the image or does not form a single
/// 8-connected component is redrawn (new shift and base point, same scale)
/// up to `max_attempts` times.
inline SyntheticMask synthesize_mask(const SourceShape& src, MaskTransform t, Resolution target,
                                     const PlacementPrior& prior, int max_attempts = 100, int max_shift = 50) {
  prior.validate(target);
  Rng rng(t.rng_seed);
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    if (attempt > 1) {
      t.dx = static_cast<int>(rng.uniform_int(-max_shift, max_shift));
      t.dy = static_cast<int>(rng.uniform_int(-max_shift, max_shift));
    }
    const Point2 base = detail::base_point(src, prior, target, rng);
    const Point2 c_dst{base.x + t.dx, base.y + t.dy};
    auto placed = detail::render_best_phase(src, t.scale, c_dst, target);
    if (!placed.inside || placed.area == 0 || count_components(placed.local) != 1) continue;
    Mask full(target.first, target.second);
    for (int ly = 0; ly < placed.box.h; ++ly) {
      for (int lx = 0; lx < placed.box.w; ++lx) {
        if (placed.local.at(lx, ly)) full.at(placed.box.x + lx, placed.box.y + ly) = 1;
      }
    }
    SyntheticMask sm;
    sm.resolution = target;
    sm.rle = rle_encode(full);
    sm.transform = t;
    sm.attempts = attempt;
    sm.target_centroid = c_dst;
    return sm;
  }
  throw Error(ErrorKind::PlacementFailed,
              "annotation " + std::to_string(t.source_annotation_id) + ": no valid placement in " +
                  std::to_string(max_attempts) + " attempts",
              std::to_string(t.source_annotation_id));
}

inline SyntheticMask synthesize_mask(const AnnotationInstance& ann, const MaskTransform& t, Resolution target,
                                     const PlacementPrior& prior, int max_attempts = 100, int max_shift = 50) {
  if (ann.segmentation.width != target.first || ann.segmentation.height != target.second) {
    throw Error(ErrorKind::ResolutionMismatch,
                "annotation " + std::to_string(ann.id) + " is not at " + to_string(target), std::to_string(ann.id));
  }
  return synthesize_mask(source_shape(rle_decode(ann.segmentation)), t, target, prior, max_attempts, max_shift);
}

// ---------------------------------------------------------------------------
// Pools

struct PlacementFailure {
  std::string mask_id;
  int source_annotation_id = 0;
  std::string message;
};

struct MaskPool {
  std::vector<SyntheticMask> masks;
  std::vector<PlacementFailure> failures;
  int requested = 0;
  std::uint64_t seed = 0;
  PlacementMode mode = PlacementMode::SourcePosition;
};

struct PoolConfig {
  int per_resolution = 500;
  PlacementMode mode = PlacementMode::HeatmapWeighted;
  TransformConfig transform;
  int heatmap_downscale = 8;
  int max_attempts = 100;
  double min_success = 0.9;
  int threads = 0;  // 0 = hardware concurrency
};

inline std::string mask_id_for(Resolution r, int index) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "m%dx%d_%04d", r.first, r.second, index);
  return buf;
}

/// `per_resolution` masks for every resolution present in `ds`, cycling
/// round-robin over the train-split annotations of that resolution (by
/// annotation id). Mask i of resolution r draws from its own stream
/// derive_seed(seed, {w, h, i}), so results do not depend on threading.
inline MaskPool generate_pool(const Dataset& ds, const SplitManifest& split, const PoolConfig& cfg, std::uint64_t seed) {
  if (cfg.per_resolution < 1) throw Error(ErrorKind::InvalidArgument, "per_resolution must be >= 1");
  cfg.transform.validate();
  const std::unordered_set<int> train(split.train.begin(), split.train.end());
  std::map<Resolution, std::vector<const AnnotationInstance*>> sources;
  std::set<Resolution> resolutions;
  std::unordered_map<int, Resolution> res_of;
  for (const auto& im : ds.images) {
    resolutions.insert(im.resolution());
    res_of[im.id] = im.resolution();
  }
  for (const auto& a : ds.annotations) {
    if (train.count(a.image_id)) sources[res_of.at(a.image_id)].push_back(&a);
  }

  MaskPool pool;
  pool.seed = seed;
  pool.mode = cfg.mode;
  for (const auto& res : resolutions) {
    auto& anns = sources[res];
    if (anns.empty()) {
      throw Error(ErrorKind::TooFewInstances, "no train annotations at " + to_string(res), to_string(res));
    }
    std::sort(anns.begin(), anns.end(), [](auto* a, auto* b) { return a->id < b->id; });
    std::vector<SourceShape> shapes;
    for (const auto* a : anns) shapes.push_back(source_shape(rle_decode(a->segmentation)));

    PlacementPrior prior{cfg.mode, std::nullopt};
    if (cfg.mode == PlacementMode::HeatmapWeighted) {
      prior.heatmap = spatial_heatmap(subset(ds, split.train), res, cfg.heatmap_downscale);
    }

    const int n = cfg.per_resolution;
    std::vector<std::optional<SyntheticMask>> out(static_cast<std::size_t>(n));
    std::vector<std::optional<PlacementFailure>> failed(static_cast<std::size_t>(n));
    auto work = [&](int i) {
      const std::size_t src = static_cast<std::size_t>(i) % anns.size();
      Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(res.first), static_cast<std::uint64_t>(res.second),
                                 static_cast<std::uint64_t>(i)}));
      auto t = sample_transform(rng, cfg.transform);
      t.source_annotation_id = anns[src]->id;
      const auto id = mask_id_for(res, i);
      try {
        auto sm = synthesize_mask(shapes[src], t, res, prior, cfg.max_attempts, cfg.transform.max_shift);
        sm.mask_id = id;
        out[static_cast<std::size_t>(i)] = std::move(sm);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::PlacementFailed) throw;
        failed[static_cast<std::size_t>(i)] = PlacementFailure{id, t.source_annotation_id, e.what()};
      }
    };
    const int threads = std::max(1, cfg.threads > 0 ? cfg.threads : static_cast<int>(std::thread::hardware_concurrency()));
    if (threads == 1) {
      for (int i = 0; i < n; ++i) work(i);
    } else {
      std::vector<std::future<void>> jobs;
      for (int w = 0; w < threads; ++w) {
        jobs.push_back(std::async(std::launch::async, [&, w] {
          for (int i = w; i < n; i += threads) work(i);
        }));
      }
      for (auto& j : jobs) j.get();
    }
    pool.requested += n;
    for (int i = 0; i < n; ++i) {
      if (out[static_cast<std::size_t>(i)]) pool.masks.push_back(std::move(*out[static_cast<std::size_t>(i)]));
      if (failed[static_cast<std::size_t>(i)]) pool.failures.push_back(std::move(*failed[static_cast<std::size_t>(i)]));
    }
  }
  if (static_cast<double>(pool.masks.size()) < cfg.min_success * pool.requested) {
    throw Error(ErrorKind::PlacementFailed, std::to_string(pool.failures.size()) + " of " +
                                                std::to_string(pool.requested) + " placements failed");
  }
  return pool;
}

// ---------------------------------------------------------------------------
// Persistence: one 1-bit PNG per mask plus an index.

inline nlohmann::json to_json(const SyntheticMask& sm) {
  const auto b = sm.bbox();
  return {{"mask_id", sm.mask_id},
          {"resolution", {sm.resolution.first, sm.resolution.second}},
          {"file", sm.mask_id + ".png"},
          {"area", sm.area()},
          {"bbox", {b.x, b.y, b.w, b.h}},
          {"rle", rle_to_string(sm.rle)},
          {"attempts", sm.attempts},
          {"transform",
           {{"scale", sm.transform.scale},
            {"dx", sm.transform.dx},
            {"dy", sm.transform.dy},
            {"source_annotation_id", sm.transform.source_annotation_id},
            {"rng_seed", sm.transform.rng_seed}}}};
}

inline nlohmann::json to_json(const MaskPool& pool) {
  nlohmann::json masks = nlohmann::json::array();
  for (const auto& m : pool.masks) masks.push_back(to_json(m));
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : pool.failures) {
    failures.push_back({{"mask_id", f.mask_id}, {"source_annotation_id", f.source_annotation_id}, {"error", f.message}});
  }
  return {{"seed", pool.seed},
          {"prior", to_string(pool.mode)},
          {"requested", pool.requested},
          {"succeeded", pool.masks.size()},
          {"masks", masks},
          {"failures", failures}};
}

inline void write_pool(const MaskPool& pool, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& m : pool.masks) write_png(dir / (m.mask_id + ".png"), m.mask());
  write_file_atomic(dir / "masks.json", to_json(pool).dump(1) + "\n");
}

/// Reads the index written by write_pool. Masks come from the compact RLE in
/// the index when present, otherwise from the PNG rasters.
inline MaskPool read_pool(const std::filesystem::path& dir) {
  const auto bytes = read_file_bytes(dir / "masks.json");
  const auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
  MaskPool pool;
  pool.seed = j.at("seed").get<std::uint64_t>();
  pool.mode = parse_placement(j.at("prior").get<std::string>());
  pool.requested = j.at("requested").get<int>();
  for (const auto& e : j.at("masks")) {
    SyntheticMask sm;
    sm.mask_id = e.at("mask_id").get<std::string>();
    sm.resolution = {e.at("resolution")[0].get<int>(), e.at("resolution")[1].get<int>()};
    sm.attempts = e.at("attempts").get<int>();
    const auto& t = e.at("transform");
    sm.transform = {t.at("scale").get<double>(), t.at("dx").get<int>(), t.at("dy").get<int>(),
                    t.at("source_annotation_id").get<int>(), t.at("rng_seed").get<std::uint64_t>()};
    if (e.contains("rle")) {
      sm.rle = rle_from_string(e.at("rle").get<std::string>(), sm.resolution.second, sm.resolution.first);
      if (e.contains("area") && sm.area() != e.at("area").get<long long>()) {
        throw Error(ErrorKind::MalformedSegmentation, sm.mask_id + ": RLE area differs from index", sm.mask_id);
      }
    } else {
      const auto m = read_png_mask(dir / e.at("file").get<std::string>());
      if (m.width != sm.resolution.first || m.height != sm.resolution.second) {
        throw Error(ErrorKind::ResolutionMismatch, sm.mask_id + ": raster size differs from index", sm.mask_id);
      }
      sm.rle = rle_encode(m);
    }
    pool.masks.push_back(std::move(sm));
  }
  for (const auto& f : j.at("failures")) {
    pool.failures.push_back({f.at("mask_id").get<std::string>(), f.at("source_annotation_id").get<int>(),
                             f.at("error").get<std::string>()});
  }
  return pool;
}

}  // namespace defectforge

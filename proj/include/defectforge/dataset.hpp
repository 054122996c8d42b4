// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "defectforge/error.hpp"
#include "defectforge/image.hpp"
#include "defectforge/png_io.hpp"
#include "defectforge/rle.hpp"
#include "defectforge/rng.hpp"

namespace defectforge {

using Resolution = std::pair<int, int>;  // (width, height)

inline std::string to_string(const Resolution& r) {
  return std::to_string(r.first) + "x" + std::to_string(r.second);
}

struct Category {
  int id = 0;
  std::string name;
};

struct ImageRecord {
  int id = 0;
  std::string file_path;  // relative to the dataset root unless absolute
  int width = 0;
  int height = 0;

  Resolution resolution() const { return {width, height}; }
};

struct BBox {
  double x = 0, y = 0, w = 0, h = 0;
  friend bool operator==(const BBox&, const BBox&) = default;
};

inline BBox to_bbox(const PixelBox& b) { return {double(b.x), double(b.y), double(b.w), double(b.h)}; }

struct AnnotationInstance {
  int id = 0;
  int image_id = 0;
  int category_id = 0;
  BBox bbox;
  Rle segmentation;  // at the owning image's resolution
  double area = 0.0;
  nlohmann::json provenance;  // optional extension field; null when absent
};

struct Dataset {
  std::filesystem::path root;
  std::vector<ImageRecord> images;
  std::vector<AnnotationInstance> annotations;
  std::vector<Category> categories;

  std::filesystem::path image_path(const ImageRecord& rec) const {
    const std::filesystem::path p(rec.file_path);
    return p.is_absolute() ? p : root / p;
  }

  const ImageRecord& image(int id) const {
    for (const auto& im : images) {
      if (im.id == id) return im;
    }
    throw Error(ErrorKind::DanglingReference, "no image " + std::to_string(id), std::to_string(id));
  }

  /// Annotation count per image id (images without annotations map to 0).
  std::map<int, int> instances_per_image() const {
    std::map<int, int> n;
    for (const auto& im : images) n[im.id] = 0;
    for (const auto& a : annotations) ++n[a.image_id];
    return n;
  }

  std::vector<const AnnotationInstance*> annotations_of(int image_id) const {
    std::vector<const AnnotationInstance*> out;
    for (const auto& a : annotations) {
      if (a.image_id == image_id) out.push_back(&a);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Validation

namespace detail {

inline void validate_annotation(const AnnotationInstance& a, const ImageRecord& im) {
  const auto id = std::to_string(a.id);
  const double eps = 1e-6;
  if (!(a.bbox.w > 0 && a.bbox.h > 0) || a.bbox.x < -eps || a.bbox.y < -eps ||
      a.bbox.x + a.bbox.w > im.width + eps || a.bbox.y + a.bbox.h > im.height + eps) {
    throw Error(ErrorKind::MalformedSegmentation, "annotation " + id + " bbox outside image", id);
  }
  if (a.segmentation.width != im.width || a.segmentation.height != im.height) {
    throw Error(ErrorKind::MalformedSegmentation, "annotation " + id + " segmentation size mismatch", id);
  }
  const long long raster = rle_area(a.segmentation);
  if (raster == 0) throw Error(ErrorKind::MalformedSegmentation, "annotation " + id + " is empty", id);
  if (std::abs(static_cast<double>(raster) - a.area) > 0.01 * a.area) {
    throw Error(ErrorKind::MalformedSegmentation,
                "annotation " + id + " area " + std::to_string(a.area) + " vs raster " + std::to_string(raster), id);
  }
  const PixelBox tight = rle_bbox(a.segmentation);
  if (tight.x < std::floor(a.bbox.x) - 1 || tight.y < std::floor(a.bbox.y) - 1 ||
      tight.x + tight.w > std::ceil(a.bbox.x + a.bbox.w) + 1 ||
      tight.y + tight.h > std::ceil(a.bbox.y + a.bbox.h) + 1) {
    throw Error(ErrorKind::MalformedSegmentation, "annotation " + id + " segmentation leaves its bbox", id);
  }
}

}  // namespace detail

/// Checks every Dataset invariant; throws on the first violation.
inline void validate(const Dataset& ds, bool check_files = false) {
  std::unordered_map<int, const ImageRecord*> by_id;
  for (const auto& im : ds.images) {
    const auto id = std::to_string(im.id);
    if (!by_id.emplace(im.id, &im).second) throw Error(ErrorKind::DuplicateId, "duplicate image id " + id, id);
    if (im.width <= 0 || im.height <= 0) throw Error(ErrorKind::InvalidArgument, "image " + id + " has no size", id);
    if (check_files && !std::filesystem::exists(ds.image_path(im))) {
      throw Error(ErrorKind::MissingImageFile, "image " + id + " file " + ds.image_path(im).string(), id);
    }
  }
  std::unordered_set<int> cats;
  for (const auto& c : ds.categories) cats.insert(c.id);
  std::unordered_set<int> ann_ids;
  for (const auto& a : ds.annotations) {
    const auto id = std::to_string(a.id);
    if (!ann_ids.insert(a.id).second) throw Error(ErrorKind::DuplicateId, "duplicate annotation id " + id, id);
    auto it = by_id.find(a.image_id);
    if (it == by_id.end()) {
      throw Error(ErrorKind::DanglingReference, "annotation " + id + " references image " + std::to_string(a.image_id),
                  std::to_string(a.image_id));
    }
    if (!cats.count(a.category_id)) {
      throw Error(ErrorKind::DanglingReference,
                  "annotation " + id + " references category " + std::to_string(a.category_id),
                  std::to_string(a.category_id));
    }
    detail::validate_annotation(a, *it->second);
  }
}

// ---------------------------------------------------------------------------
// COCO I/O

namespace detail {

inline Rle parse_segmentation(const nlohmann::json& seg, const ImageRecord& im, int ann_id) {
  const auto id = std::to_string(ann_id);
  if (seg.is_array()) {
    std::vector<std::vector<double>> polys;
    for (const auto& p : seg) polys.push_back(p.get<std::vector<double>>());
    if (polys.empty()) throw Error(ErrorKind::MalformedSegmentation, "annotation " + id + " has no polygon", id);
    return rle_encode(rasterize_polygons(polys, im.width, im.height));
  }
  if (seg.is_object() && seg.contains("counts") && seg.contains("size")) {
    const auto size = seg.at("size").get<std::vector<int>>();
    if (size.size() != 2) throw Error(ErrorKind::MalformedSegmentation, "annotation " + id + " bad RLE size", id);
    Rle r;
    if (seg.at("counts").is_string()) {
      r = rle_from_string(seg.at("counts").get<std::string>(), size[0], size[1]);
    } else {
      r = Rle{size[0], size[1], seg.at("counts").get<std::vector<std::uint32_t>>()};
    }
    long long total = 0;
    for (auto c : r.counts) total += c;
    if (total != static_cast<long long>(r.height) * r.width) {
      throw Error(ErrorKind::MalformedSegmentation, "annotation " + id + " RLE does not cover mask", id);
    }
    return r;
  }
  throw Error(ErrorKind::MalformedSegmentation, "annotation " + id + " has unsupported segmentation", id);
}

inline nlohmann::json number(double v) {
  if (std::isfinite(v) && v == std::floor(v) && std::abs(v) < 9e15) return static_cast<long long>(v);
  return v;
}

}  // namespace detail

inline Dataset parse_coco(const nlohmann::json& j, const std::filesystem::path& root, bool check_files = true) {
  Dataset ds;
  ds.root = root;
  try {
    for (const auto& c : j.at("categories")) ds.categories.push_back({c.at("id").get<int>(), c.value("name", "")});
    std::unordered_map<int, std::size_t> index;
    for (const auto& im : j.at("images")) {
      ImageRecord rec{im.at("id").get<int>(), im.at("file_name").get<std::string>(), im.at("width").get<int>(),
                      im.at("height").get<int>()};
      index.emplace(rec.id, ds.images.size());
      ds.images.push_back(std::move(rec));
    }
    const auto& anns = j.contains("annotations") ? j.at("annotations") : nlohmann::json::array();
    for (const auto& a : anns) {
      AnnotationInstance ann;
      ann.id = a.at("id").get<int>();
      ann.image_id = a.at("image_id").get<int>();
      ann.category_id = a.at("category_id").get<int>();
      auto it = index.find(ann.image_id);
      if (it == index.end()) {
        throw Error(ErrorKind::DanglingReference,
                    "annotation " + std::to_string(ann.id) + " references image " + std::to_string(ann.image_id),
                    std::to_string(ann.image_id));
      }
      const auto bb = a.at("bbox").get<std::vector<double>>();
      if (bb.size() != 4) throw Error(ErrorKind::MalformedSegmentation, "bad bbox", std::to_string(ann.id));
      ann.bbox = {bb[0], bb[1], bb[2], bb[3]};
      ann.segmentation = detail::parse_segmentation(a.at("segmentation"), ds.images[it->second], ann.id);
      ann.area = a.contains("area") ? a.at("area").get<double>() : static_cast<double>(rle_area(ann.segmentation));
      if (a.contains("provenance")) ann.provenance = a.at("provenance");
      ds.annotations.push_back(std::move(ann));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MalformedSegmentation, std::string("not a COCO document: ") + e.what());
  }
  validate(ds, check_files);
  return ds;
}

inline Dataset load_coco(const std::filesystem::path& root, const std::filesystem::path& annotation_file,
                         bool check_files = true) {
  std::ifstream in(annotation_file);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + annotation_file.string(), annotation_file.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::MalformedSegmentation, std::string("invalid JSON: ") + e.what(), annotation_file.string());
  }
  return parse_coco(j, root, check_files);
}

/// COCO document with sorted keys and integral numbers written as integers,
/// so identical datasets serialize to identical bytes.
inline nlohmann::json to_coco_json(const Dataset& ds) {
  nlohmann::json j;
  j["images"] = nlohmann::json::array();
  for (const auto& im : ds.images) {
    j["images"].push_back({{"id", im.id}, {"file_name", im.file_path}, {"width", im.width}, {"height", im.height}});
  }
  j["annotations"] = nlohmann::json::array();
  for (const auto& a : ds.annotations) {
    nlohmann::json ja = {
        {"id", a.id},
        {"image_id", a.image_id},
        {"category_id", a.category_id},
        {"bbox", {detail::number(a.bbox.x), detail::number(a.bbox.y), detail::number(a.bbox.w), detail::number(a.bbox.h)}},
        {"area", detail::number(a.area)},
        {"iscrowd", 0},
        {"segmentation", {{"size", {a.segmentation.height, a.segmentation.width}}, {"counts", a.segmentation.counts}}},
    };
    if (!a.provenance.is_null()) ja["provenance"] = a.provenance;
    j["annotations"].push_back(std::move(ja));
  }
  j["categories"] = nlohmann::json::array();
  for (const auto& c : ds.categories) j["categories"].push_back({{"id", c.id}, {"name", c.name}});
  return j;
}

inline void save_coco(const Dataset& ds, const std::filesystem::path& path) {
  write_file_atomic(path, to_coco_json(ds).dump(1) + "\n");
}

// ---------------------------------------------------------------------------
// Filtering

inline Dataset filter_resolutions(const Dataset& ds, const std::set<Resolution>& allowed) {
  if (allowed.empty()) throw Error(ErrorKind::InvalidArgument, "no resolutions allowed");
  Dataset out;
  out.root = ds.root;
  out.categories = ds.categories;
  std::unordered_set<int> kept;
  for (const auto& im : ds.images) {
    if (allowed.count(im.resolution())) {
      out.images.push_back(im);
      kept.insert(im.id);
    }
  }
  if (out.images.empty()) throw Error(ErrorKind::EmptyResult, "no image has an allowed resolution");
  for (const auto& a : ds.annotations) {
    if (kept.count(a.image_id)) out.annotations.push_back(a);
  }
  return out;
}

/// Restricts a dataset to the given image ids (annotations follow their images).
inline Dataset subset(const Dataset& ds, const std::vector<int>& image_ids) {
  const std::unordered_set<int> keep(image_ids.begin(), image_ids.end());
  Dataset out;
  out.root = ds.root;
  out.categories = ds.categories;
  for (const auto& im : ds.images) {
    if (keep.count(im.id)) out.images.push_back(im);
  }
  for (const auto& a : ds.annotations) {
    if (keep.count(a.image_id)) out.annotations.push_back(a);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Split

struct SplitManifest {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;
  std::uint64_t seed = 0;
  std::array<double, 3> ratios{};
};

inline nlohmann::json to_json(const SplitManifest& s) {
  return {{"train", s.train}, {"val", s.val}, {"test", s.test}, {"seed", s.seed}, {"ratios", s.ratios}};
}

inline SplitManifest split_from_json(const nlohmann::json& j) {
  SplitManifest s;
  s.train = j.at("train").get<std::vector<int>>();
  s.val = j.at("val").get<std::vector<int>>();
  s.test = j.at("test").get<std::vector<int>>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.ratios = j.at("ratios").get<std::array<double, 3>>();
  return s;
}

/// Image-level split, stratified over defective and defect-free images.
/// Per stratum: val = round(r_val * n), test = round(r_test * n), train takes
/// the remainder. Rounding is half away from zero.
inline SplitManifest split(const Dataset& ds, std::array<double, 3> ratios, std::uint64_t seed) {
  for (double r : ratios) {
    if (r < 0) throw Error(ErrorKind::InvalidArgument, "negative split ratio");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) {
    throw Error(ErrorKind::InvalidArgument, "split ratios must sum to 1");
  }
  const auto counts = ds.instances_per_image();
  std::array<std::vector<int>, 2> strata;  // 0 = defective, 1 = defect-free
  for (const auto& [id, n] : counts) strata[n > 0 ? 0 : 1].push_back(id);

  SplitManifest out;
  out.seed = seed;
  out.ratios = ratios;
  for (std::size_t s = 0; s < strata.size(); ++s) {
    auto ids = strata[s];
    if (ids.empty()) continue;
    if (ids.size() < 3) {
      throw Error(ErrorKind::InsufficientImages,
                  std::string(s == 0 ? "defective" : "defect-free") + " stratum has " + std::to_string(ids.size()) +
                      " images");
    }
    Rng rng(derive_seed(seed, {0x5e17, s}));
    rng.shuffle(ids);
    const long n = static_cast<long>(ids.size());
    const long n_val = std::min(n, std::lround(ratios[1] * static_cast<double>(n)));
    const long n_test = std::min(n - n_val, std::lround(ratios[2] * static_cast<double>(n)));
    const long n_train = n - n_val - n_test;
    out.train.insert(out.train.end(), ids.begin(), ids.begin() + n_train);
    out.val.insert(out.val.end(), ids.begin() + n_train, ids.begin() + n_train + n_val);
    out.test.insert(out.test.end(), ids.begin() + n_train + n_val, ids.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

// ---------------------------------------------------------------------------
// Statistics

struct DefectStats {
  std::map<int, int> histogram;  // instances per image -> image count (defective images only)
  int instance_count = 0;
  int defect_free = 0;
  int defective = 0;
  std::vector<double> areas;  // per instance, in annotation order
};

inline DefectStats defect_stats(const Dataset& ds) {
  DefectStats st;
  for (const auto& [id, n] : ds.instances_per_image()) {
    if (n == 0) {
      ++st.defect_free;
    } else {
      ++st.defective;
      ++st.histogram[n];
    }
  }
  for (const auto& a : ds.annotations) st.areas.push_back(a.area);
  st.instance_count = static_cast<int>(ds.annotations.size());
  return st;
}

inline nlohmann::json to_json(const DefectStats& st) {
  nlohmann::json hist = nlohmann::json::object();
  for (const auto& [k, v] : st.histogram) hist[std::to_string(k)] = v;
  return {{"images", st.defect_free + st.defective}, {"defect_free", st.defect_free}, {"defective", st.defective},
          {"instances", st.instance_count}, {"instances_per_image", hist}};
}

/// Accumulated defect locations for one resolution. `counts` holds raw
/// per-cell pixel counts; `grid` is counts / max(counts).
struct Heatmap {
  Resolution resolution{};
  int downscale = 1;
  int grid_width = 0;
  int grid_height = 0;
  std::vector<double> counts;
  std::vector<double> grid;
  int total_instances = 0;
  int images = 0;

  double cell(int gx, int gy) const { return grid[static_cast<std::size_t>(gy) * grid_width + gx]; }

  /// Fraction of accumulated mass in the upper-left quadrant of the image.
  double upper_left_fraction() const {
    double ul = 0, total = 0;
    for (int gy = 0; gy < grid_height; ++gy) {
      for (int gx = 0; gx < grid_width; ++gx) {
        const double v = counts[static_cast<std::size_t>(gy) * grid_width + gx];
        total += v;
        if ((gx + 0.5) * downscale < resolution.first / 2.0 && (gy + 0.5) * downscale < resolution.second / 2.0) ul += v;
      }
    }
    return total > 0 ? ul / total : 0.0;
  }
};

inline Heatmap spatial_heatmap(const Dataset& ds, Resolution res, int downscale = 1) {
  if (downscale < 1) throw Error(ErrorKind::InvalidArgument, "downscale must be >= 1");
  Heatmap hm;
  hm.resolution = res;
  hm.downscale = downscale;
  hm.grid_width = (res.first + downscale - 1) / downscale;
  hm.grid_height = (res.second + downscale - 1) / downscale;
  hm.counts.assign(static_cast<std::size_t>(hm.grid_width) * hm.grid_height, 0.0);
  std::unordered_set<int> ids;
  for (const auto& im : ds.images) {
    if (im.resolution() == res) ids.insert(im.id);
  }
  if (ids.empty()) throw Error(ErrorKind::NoImagesAtResolution, "no images at " + to_string(res), to_string(res));
  hm.images = static_cast<int>(ids.size());
  for (const auto& a : ds.annotations) {
    if (!ids.count(a.image_id)) continue;
    ++hm.total_instances;
    const auto& r = a.segmentation;
    long long pos = 0;
    for (std::size_t i = 0; i < r.counts.size(); ++i) {
      if (i & 1) {
        for (long long p = pos; p < pos + r.counts[i]; ++p) {
          const int x = static_cast<int>(p / r.height), y = static_cast<int>(p % r.height);
          hm.counts[static_cast<std::size_t>(y / downscale) * hm.grid_width + x / downscale] += 1.0;
        }
      }
      pos += r.counts[i];
    }
  }
  const double mx = hm.counts.empty() ? 0.0 : *std::max_element(hm.counts.begin(), hm.counts.end());
  hm.grid.resize(hm.counts.size());
  for (std::size_t i = 0; i < hm.counts.size(); ++i) hm.grid[i] = mx > 0 ? hm.counts[i] / mx : 0.0;
  return hm;
}

/// Heatmap rendered as an 8-bit grayscale PNG-ready mask-like buffer.
inline std::vector<std::uint8_t> heatmap_gray(const Heatmap& hm) {
  std::vector<std::uint8_t> out(hm.grid.size());
  for (std::size_t i = 0; i < hm.grid.size(); ++i) out[i] = static_cast<std::uint8_t>(std::lround(hm.grid[i] * 255.0));
  return out;
}

// ---------------------------------------------------------------------------
// Size buckets

enum class SizeBucket { Small, Medium, Large };

inline std::string_view to_string(SizeBucket b) {
  switch (b) {
    case SizeBucket::Small: return "small";
    case SizeBucket::Medium: return "medium";
    case SizeBucket::Large: return "large";
  }
  return "small";
}

struct BucketAssignment {
  std::map<int, SizeBucket> buckets;  // annotation id -> bucket
  double small_max = 0;   // areas <= small_max are small
  double medium_max = 0;  // areas in (small_max, medium_max] are medium

  std::array<int, 3> sizes() const {
    std::array<int, 3> n{};
    for (const auto& [id, b] : buckets) ++n[static_cast<std::size_t>(b)];
    return n;
  }
};

/// Tercile buckets over instance areas of the given images. Thresholds are
/// the order statistics at ceil(n/3) and ceil(2n/3); an area equal to a
/// threshold lands in the smaller bucket.
inline BucketAssignment size_buckets(const Dataset& ds, const std::vector<int>& image_ids) {
  const std::unordered_set<int> keep(image_ids.begin(), image_ids.end());
  std::vector<const AnnotationInstance*> anns;
  for (const auto& a : ds.annotations) {
    if (keep.count(a.image_id)) anns.push_back(&a);
  }
  if (anns.size() < 3) {
    throw Error(ErrorKind::TooFewInstances, std::to_string(anns.size()) + " instances, need 3");
  }
  std::vector<double> areas;
  for (const auto* a : anns) areas.push_back(a->area);
  std::sort(areas.begin(), areas.end());
  const std::size_t n = areas.size();
  BucketAssignment out;
  out.small_max = areas[(n + 2) / 3 - 1];
  out.medium_max = areas[(2 * n + 2) / 3 - 1];
  for (const auto* a : anns) {
    out.buckets[a->id] = a->area <= out.small_max    ? SizeBucket::Small
                         : a->area <= out.medium_max ? SizeBucket::Medium
                                                     : SizeBucket::Large;
  }
  return out;
}

inline nlohmann::json to_json(const BucketAssignment& b) {
  nlohmann::json m = nlohmann::json::object();
  for (const auto& [id, bucket] : b.buckets) m[std::to_string(id)] = std::string(to_string(bucket));
  const auto n = b.sizes();
  return {{"thresholds", {b.small_max, b.medium_max}},
          {"sizes", {{"small", n[0]}, {"medium", n[1]}, {"large", n[2]}}},
          {"buckets", m}};
}

}  // namespace defectforge

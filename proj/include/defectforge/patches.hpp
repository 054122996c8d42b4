// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "defectforge/dataset.hpp"
#include "defectforge/image.hpp"
#include "defectforge/png_io.hpp"
#include "defectforge/rle.hpp"

namespace defectforge {

inline constexpr int kPatchSize = 1024;

/// Square crop window inside an image.
struct CropRect {
  int x = 0;
  int y = 0;
  int side = 0;
  bool clamped = false;  // translated or shrunk to fit the image

  PixelBox box() const { return {x, y, side, side}; }
  friend bool operator==(const CropRect& a, const CropRect& b) {
    return a.x == b.x && a.y == b.y && a.side == b.side;
  }
};

inline nlohmann::json to_json(const CropRect& c) {
  return {{"x", c.x}, {"y", c.y}, {"side", c.side}, {"clamped", c.clamped}};
}

inline CropRect crop_from_json(const nlohmann::json& j) {
  return {j.at("x").get<int>(), j.at("y").get<int>(), j.at("side").get<int>(), j.value("clamped", false)};
}

/// Context window around a box: side ceil(sqrt(3 * w * h)) so that the padding
/// area is twice the box area, centered on the box, moved inside the image,
/// and shrunk only when the image itself is smaller.
inline CropRect crop_window(const BBox& bbox, Resolution image_dims) {
  const auto [iw, ih] = image_dims;
  int side = static_cast<int>(std::ceil(std::sqrt(3.0 * bbox.w * bbox.h)));
  side = std::max(1, side);
  CropRect c;
  if (side > iw || side > ih) {
    side = std::min(iw, ih);
    c.clamped = true;
  }
  const double cx = bbox.x + bbox.w / 2.0, cy = bbox.y + bbox.h / 2.0;
  const int x0 = static_cast<int>(std::floor(cx - side / 2.0));
  const int y0 = static_cast<int>(std::floor(cy - side / 2.0));
  c.side = side;
  c.x = std::clamp(x0, 0, iw - side);
  c.y = std::clamp(y0, 0, ih - side);
  if (c.x != x0 || c.y != y0) c.clamped = true;
  return c;
}

struct DefectPatch {
  std::string patch_id;
  int source_annotation_id = 0;
  int source_image_id = 0;
  Image image;  // kPatchSize x kPatchSize
  Mask mask;    // kPatchSize x kPatchSize
  CropRect crop;
  double scale_factor = 1.0;
};

inline std::string patch_id_for(int annotation_id) { return "p" + std::to_string(annotation_id); }

/// Crops `crop` out of the image and the annotation's mask and resizes both to
/// kPatchSize: bilinear for pixels, nearest-neighbour for the mask.
inline DefectPatch extract_patch(const Image& image, const AnnotationInstance& ann, const CropRect& crop) {
  const auto box = crop.box();
  if (box.x < 0 || box.y < 0 || box.x + box.w > image.width || box.y + box.h > image.height || box.empty()) {
    throw Error(ErrorKind::InvalidArgument, "crop outside image", std::to_string(ann.id));
  }
  DefectPatch p;
  p.patch_id = patch_id_for(ann.id);
  p.source_annotation_id = ann.id;
  p.source_image_id = ann.image_id;
  p.crop = crop;
  p.scale_factor = static_cast<double>(kPatchSize) / crop.side;
  p.image = resize_bilinear(defectforge::crop(image, box), kPatchSize, kPatchSize);
  p.mask = resize_nearest(defectforge::crop(rle_decode(ann.segmentation), box), kPatchSize, kPatchSize);
  const long long area = p.mask.area();
  if (area == 0) {
    throw Error(ErrorKind::EmptyMaskAfterResize, "annotation " + std::to_string(ann.id) + " vanished in resize",
                std::to_string(ann.id));
  }
  if (static_cast<double>(area) >= 0.9 * kPatchSize * kPatchSize) {
    throw Error(ErrorKind::InvalidArgument, "annotation " + std::to_string(ann.id) + " fills the patch",
                std::to_string(ann.id));
  }
  return p;
}

/// Maps a patch mask back to full-image coordinates (inverse of extract_patch).
inline Mask reproject_mask(const Mask& patch_mask, const CropRect& crop, Resolution image_dims) {
  const Mask local = resize_nearest(patch_mask, crop.side, crop.side);
  Mask out(image_dims.first, image_dims.second);
  for (int y = 0; y < crop.side; ++y) {
    for (int x = 0; x < crop.side; ++x) out.at(crop.x + x, crop.y + y) = local.at(x, y);
  }
  return out;
}

struct PatchEntry {
  std::string patch_id;
  int source_annotation_id = 0;
  int source_image_id = 0;
  CropRect crop;
  double scale_factor = 1.0;
  double area = 0.0;
};

struct SuppressedInstance {
  int annotation_id = 0;
  int kept_annotation_id = 0;
  double window_iou = 0.0;
};

/// Patch metadata without pixels; what gets persisted as the patch index.
struct PatchIndex {
  std::vector<PatchEntry> patches;
  std::vector<SuppressedInstance> suppressed;
};

inline constexpr double kOverlapIou = 0.5;

/// Chooses one crop per instance in the given images. Within an image,
/// instances are visited by decreasing area (then id); an instance whose
/// window overlaps an already kept window with IoU > 0.5 is dropped.
inline PatchIndex plan_patches(const Dataset& ds, const std::vector<int>& image_ids) {
  PatchIndex idx;
  std::vector<int> ids = image_ids;
  std::sort(ids.begin(), ids.end());
  for (int image_id : ids) {
    const auto& rec = ds.image(image_id);
    auto anns = ds.annotations_of(image_id);
    std::sort(anns.begin(), anns.end(), [](const auto* a, const auto* b) {
      return a->area != b->area ? a->area > b->area : a->id < b->id;
    });
    std::vector<std::pair<const AnnotationInstance*, CropRect>> kept;
    for (const auto* a : anns) {
      const CropRect w = crop_window(a->bbox, rec.resolution());
      bool keep = true;
      for (const auto& [ka, kw] : kept) {
        const double o = iou(w.box(), kw.box());
        if (o > kOverlapIou) {
          idx.suppressed.push_back({a->id, ka->id, o});
          keep = false;
          break;
        }
      }
      if (keep) kept.push_back({a, w});
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.first->id < b.first->id; });
    for (const auto& [a, w] : kept) {
      idx.patches.push_back({patch_id_for(a->id), a->id, image_id, w, static_cast<double>(kPatchSize) / w.side, a->area});
    }
  }
  return idx;
}

using PatchSink = std::function<void(DefectPatch&&)>;

/// Extracts every planned patch, decoding each source image once, and hands
/// patches to `sink` in index order.
inline PatchIndex extract_all(const Dataset& ds, const std::vector<int>& image_ids, const PatchSink& sink) {
  if (image_ids.empty()) throw Error(ErrorKind::InvalidArgument, "empty split");
  PatchIndex idx = plan_patches(ds, image_ids);
  int loaded_id = -1;
  Image image;
  std::unordered_map<int, const AnnotationInstance*> by_id;
  for (const auto& a : ds.annotations) by_id[a.id] = &a;
  for (const auto& e : idx.patches) {
    if (e.source_image_id != loaded_id) {
      image = read_png_image(ds.image_path(ds.image(e.source_image_id)));
      loaded_id = e.source_image_id;
    }
    sink(extract_patch(image, *by_id.at(e.source_annotation_id), e.crop));
  }
  return idx;
}

inline nlohmann::json to_json(const PatchIndex& idx) {
  nlohmann::json patches = nlohmann::json::array();
  for (const auto& p : idx.patches) {
    patches.push_back({{"patch_id", p.patch_id},
                       {"source_annotation_id", p.source_annotation_id},
                       {"source_image_id", p.source_image_id},
                       {"crop", to_json(p.crop)},
                       {"scale_factor", p.scale_factor},
                       {"area", p.area},
                       {"image", p.patch_id + ".png"},
                       {"mask", p.patch_id + ".mask.png"}});
  }
  nlohmann::json suppressed = nlohmann::json::array();
  for (const auto& s : idx.suppressed) {
    suppressed.push_back({{"annotation_id", s.annotation_id}, {"kept_annotation_id", s.kept_annotation_id},
                          {"window_iou", s.window_iou}});
  }
  return {{"patch_size", kPatchSize},
          {"rules", {{"window", "square side ceil(sqrt(3*bbox_w*bbox_h)), padding area = 2x bbox area"},
                     {"overlap", "crop-window IoU > 0.5 keeps the larger-area instance"},
                     {"resample", "bilinear image, nearest-neighbour mask"}}},
          {"patches", patches},
          {"suppressed", suppressed}};
}

inline PatchIndex patch_index_from_json(const nlohmann::json& j) {
  PatchIndex idx;
  for (const auto& p : j.at("patches")) {
    idx.patches.push_back({p.at("patch_id").get<std::string>(), p.at("source_annotation_id").get<int>(),
                           p.at("source_image_id").get<int>(), crop_from_json(p.at("crop")),
                           p.at("scale_factor").get<double>(), p.at("area").get<double>()});
  }
  for (const auto& s : j.at("suppressed")) {
    idx.suppressed.push_back({s.at("annotation_id").get<int>(), s.at("kept_annotation_id").get<int>(),
                              s.at("window_iou").get<double>()});
  }
  return idx;
}

inline void write_patch(const std::filesystem::path& dir, const DefectPatch& p) {
  write_png(dir / (p.patch_id + ".png"), p.image);
  write_png(dir / (p.patch_id + ".mask.png"), p.mask);
}

inline Image read_patch_image(const std::filesystem::path& dir, const std::string& patch_id) {
  return read_png_image(dir / (patch_id + ".png"));
}

}  // namespace defectforge

// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "defectforge/dataset.hpp"
#include "defectforge/error.hpp"
#include "defectforge/generation.hpp"
#include "defectforge/morphology.hpp"
#include "defectforge/png_io.hpp"
#include "defectforge/protocol.hpp"
#include "defectforge/rle.hpp"

namespace defectforge {

enum class RefineMode { SegmentBackend, InpaintMask };

inline std::string_view to_string(RefineMode m) {
  return m == RefineMode::SegmentBackend ? "segment-backend" : "inpaint-mask";
}

inline RefineMode parse_refine_mode(std::string_view s) {
  if (s == "segment-backend") return RefineMode::SegmentBackend;
  if (s == "inpaint-mask") return RefineMode::InpaintMask;
  throw Error(ErrorKind::ConfigError, "unknown refine mode '" + std::string(s) + "'");
}

inline constexpr int kRefineDilation = 3;

struct RefinedMask {
  Mask mask;  // patch coordinates
  std::string source;  // "segment-backend" or "inpaint-mask"
  bool fallback = false;  // segmentation came back empty
  long long area = 0;
};

/// segment-backend: segment with the inpaint mask's bbox and the text cue,
/// clip to the inpaint mask dilated by 3 px, keep the largest component.
/// inpaint-mask: the inpaint mask as is, without backend calls.
inline RefinedMask refine_mask(const Image& patch, const Mask& inpaint_mask, Backend& backend, RefineMode mode,
                               const std::string& text_cue) {
  if (inpaint_mask.area() == 0) throw Error(ErrorKind::InvalidArgument, "inpaint mask is empty");
  auto as_inpaint = [&](bool fallback) {
    return RefinedMask{inpaint_mask, std::string(to_string(RefineMode::InpaintMask)), fallback, inpaint_mask.area()};
  };
  if (mode == RefineMode::InpaintMask) return as_inpaint(false);
  const Mask seg = backend.segment(patch, inpaint_mask.bbox(), text_cue, &inpaint_mask);
  if (seg.width != inpaint_mask.width || seg.height != inpaint_mask.height) {
    throw Error(ErrorKind::ProtocolMismatch, "segment returned a mask of a different size");
  }
  // Everything kept lies within the dilated bbox, so the morphology runs on
  // that window only; labels keep their raster order there.
  const PixelBox b = inpaint_mask.bbox();
  const int x0 = std::max(0, b.x - kRefineDilation), y0 = std::max(0, b.y - kRefineDilation);
  const PixelBox win{x0, y0, std::min(inpaint_mask.width, b.x + b.w + kRefineDilation) - x0,
                     std::min(inpaint_mask.height, b.y + b.h + kRefineDilation) - y0};
  const Mask part = largest_component(intersect(crop(seg, win), dilate(crop(inpaint_mask, win), kRefineDilation)));
  const long long area = part.area();
  if (area == 0) return as_inpaint(true);
  Mask r(inpaint_mask.width, inpaint_mask.height);
  for (int y = 0; y < win.h; ++y) {
    std::copy_n(&part.data[static_cast<std::size_t>(y) * win.w], win.w,
                &r.data[static_cast<std::size_t>(y + win.y) * r.width + win.x]);
  }
  return {std::move(r), std::string(to_string(RefineMode::SegmentBackend)), false, area};
}

// ---------------------------------------------------------------------------
// Feathering

inline std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0)) throw Error(ErrorKind::InvalidArgument, "sigma must be > 0");
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double sum = 0;
  for (int i = -r; i <= r; ++i) {
    k[static_cast<std::size_t>(i + r)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += k[static_cast<std::size_t>(i + r)];
  }
  for (auto& v : k) v /= sum;
  return k;
}

/// Gaussian blur of the binary mask over `region` (kernel radius ceil(3σ)).
/// Samples beyond the image border replicate the edge. Values within 1e-9 of
/// 0 or 1 snap to it, so flat areas stay exactly 0 or 1. Outside `region`
/// the result is 0.
inline FloatMap feather_mask(const Mask& mask, double sigma, PixelBox region) {
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  region.x = std::max(0, region.x);
  region.y = std::max(0, region.y);
  region.w = std::min(mask.width, region.x + region.w) - region.x;
  region.h = std::min(mask.height, region.y + region.h) - region.y;
  FloatMap out(mask.width, mask.height, 0.0);
  if (region.w <= 0 || region.h <= 0) return out;
  auto clampx = [&](int x) { return std::clamp(x, 0, mask.width - 1); };
  auto clampy = [&](int y) { return std::clamp(y, 0, mask.height - 1); };
  // horizontal pass over the rows the vertical pass will read
  const int y0 = region.y - r, y1 = region.y + region.h + r;
  FloatMap tmp(region.w, y1 - y0, 0.0);
  for (int y = y0; y < y1; ++y) {
    const int sy = clampy(y);
    for (int x = 0; x < region.w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * mask.at(clampx(region.x + x + i), sy);
      tmp.at(x, y - y0) = acc;
    }
  }
  for (int y = 0; y < region.h; ++y) {
    for (int x = 0; x < region.w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * tmp.at(x, y + r + i);
      if (acc < 1e-9) acc = 0;
      if (acc > 1 - 1e-9) acc = 1;
      out.at(region.x + x, region.y + y) = acc;
    }
  }
  return out;
}

inline FloatMap feather_mask(const Mask& mask, double sigma = 2.0) {
  return feather_mask(mask, sigma, {0, 0, mask.width, mask.height});
}

// ---------------------------------------------------------------------------
// Blending

inline constexpr int kSyntheticIdOffset = 1000000;

struct ComposedEntry {
  ImageRecord record;
  std::vector<AnnotationInstance> annotations;
  int background_image_id = 0;
  std::string candidate_id;
};

struct ComposedImage {
  ComposedEntry entry;
  Image image;
  FloatMap soft;  // full-image soft mask used for blending
};

struct BlendOptions {
  double sigma = 2.0;
  std::string profile;
};

/// out = soft*patch + (1-soft)*background per channel, rounded half to even,
/// at full-image scale. The patch is resized back to the crop (bilinear),
/// the refined mask with nearest neighbour. Soft weights are 0 outside the crop.
inline ComposedImage blend(const Image& background, const ImageRecord& background_rec, const Candidate& c,
                           const Image& patch, const RefinedMask& rm, const BlendOptions& opt = {}) {
  const auto box = c.crop.box();
  if (box.x < 0 || box.y < 0 || box.x + box.w > background.width || box.y + box.h > background.height ||
      box.empty()) {
    throw Error(ErrorKind::CropOutOfBounds, c.candidate_id + ": crop outside background", c.candidate_id);
  }
  const Image local = resize_bilinear(patch, box.w, box.h);
  const Mask local_mask = resize_nearest(rm.mask, box.w, box.h);
  Mask full(background.width, background.height);
  for (int y = 0; y < box.h; ++y)
    for (int x = 0; x < box.w; ++x) full.at(box.x + x, box.y + y) = local_mask.at(x, y);

  ComposedImage out;
  out.soft = feather_mask(full, opt.sigma, box);
  out.image = background;
  const int old_round = std::fegetround();
  std::fesetround(FE_TONEAREST);
  for (int y = 0; y < box.h; ++y) {
    for (int x = 0; x < box.w; ++x) {
      const double a = out.soft.at(box.x + x, box.y + y);
      if (a == 0) continue;
      auto* dst = out.image.at(box.x + x, box.y + y);
      const auto* src = local.at(x, y);
      for (int ch = 0; ch < 3; ++ch) {
        dst[ch] = static_cast<std::uint8_t>(std::nearbyint(a * src[ch] + (1.0 - a) * dst[ch]));
      }
    }
  }
  std::fesetround(old_round);

  const int id = kSyntheticIdOffset + c.index;
  auto& e = out.entry;
  e.candidate_id = c.candidate_id;
  e.background_image_id = background_rec.id;
  e.record = {id, c.candidate_id + ".png", background.width, background.height};
  if (full.area() > 0) {
    AnnotationInstance ann;
    ann.id = id;
    ann.image_id = id;
    ann.category_id = 1;
    ann.segmentation = rle_encode(full);
    ann.bbox = to_bbox(rle_bbox(ann.segmentation));
    ann.area = static_cast<double>(rle_area(ann.segmentation));
    ann.provenance = {{"candidate_id", c.candidate_id},
                      {"seed", c.seed},
                      {"mask_id", c.synthetic_mask_id},
                      {"background_image_id", background_rec.id},
                      {"profile", opt.profile},
                      {"mask_source", rm.source},
                      {"segment_fallback", rm.fallback},
                      {"sigma", opt.sigma}};
    e.annotations.push_back(std::move(ann));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Export

/// Assembles the entries into a COCO dataset whose file names are relative
/// to the annotation file's directory.
inline Dataset composed_dataset(const std::vector<ComposedEntry>& entries,
                                const std::vector<Category>& categories = {{1, "defect"}}) {
  Dataset ds;
  ds.categories = categories;
  std::set<int> image_ids, ann_ids;
  for (const auto& e : entries) {
    if (!image_ids.insert(e.record.id).second) {
      throw Error(ErrorKind::DuplicateId, "image id " + std::to_string(e.record.id) + " repeats",
                  std::to_string(e.record.id));
    }
    ds.images.push_back(e.record);
    for (const auto& a : e.annotations) {
      if (!ann_ids.insert(a.id).second) {
        throw Error(ErrorKind::DuplicateId, "annotation id " + std::to_string(a.id) + " repeats", std::to_string(a.id));
      }
      ds.annotations.push_back(a);
    }
  }
  validate(ds, false);
  return ds;
}

/// Writes `annotations.json` (sorted keys, integral numbers as integers) into
/// out_dir and returns its path.
inline std::filesystem::path export_coco(const std::vector<ComposedEntry>& entries, const std::filesystem::path& out_dir,
                                         const std::string& file_name = "annotations.json",
                                         const std::vector<Category>& categories = {{1, "defect"}}) {
  const Dataset ds = composed_dataset(entries, categories);
  const auto path = out_dir / file_name;
  try {
    std::filesystem::create_directories(out_dir);
    save_coco(ds, path);
  } catch (const std::filesystem::filesystem_error& e) {
    throw Error(ErrorKind::WriteFailure, e.what(), path.string());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::IoError) throw Error(ErrorKind::WriteFailure, e.what(), path.string());
    throw;
  }
  return path;
}

inline nlohmann::json to_json(const ComposedEntry& e) {
  return {{"candidate_id", e.candidate_id},
          {"image_id", e.record.id},
          {"file_name", e.record.file_path},
          {"background_image_id", e.background_image_id},
          {"annotation_ids", [&] {
             std::vector<int> ids;
             for (const auto& a : e.annotations) ids.push_back(a.id);
             return ids;
           }()}};
}

}  // namespace defectforge

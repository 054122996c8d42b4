// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "defectforge/compositor.hpp"
#include "defectforge/mock_backend.hpp"
#include "defectforge/rng.hpp"
#include "test_util.hpp"

using namespace defectforge;
using namespace defectforge::testing;

namespace {

Image flat(int w, int h, std::uint8_t v) {
  Image img(w, h);
  for (auto& p : img.pixels) p = v;
  return img;
}

Image noise(int w, int h, std::uint64_t seed) {
  Image img(w, h);
  Rng rng(seed);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.next());
  return img;
}

Candidate candidate(int index, CropRect crop) {
  Candidate c;
  c.index = index;
  c.candidate_id = candidate_id_for(index);
  c.synthetic_mask_id = "m0";
  c.background_image_id = 3;
  c.crop = crop;
  c.seed = 99;
  return c;
}

RefinedMask as_refined(const Mask& m) { return {m, "inpaint-mask", false, m.area()}; }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class EmptySegment : public MockBackend {
 public:
  Mask segment(const Image& image, const PixelBox&, const std::string&, const Mask*) override {
    return Mask(image.width, image.height);
  }
};

}  // namespace

TEST(Refine, InpaintModeSkipsBackend) {
  MockBackend backend;
  const auto patch = noise(64, 64, 1);
  const auto m = ellipse_mask(64, 64, 30, 30, 10, 6);
  const auto r = refine_mask(patch, m, backend, RefineMode::InpaintMask, "scratch");
  EXPECT_EQ(r.mask.data, m.data);
  EXPECT_EQ(r.source, "inpaint-mask");
  EXPECT_FALSE(r.fallback);
  EXPECT_EQ(backend.segment_calls.load(), 0);
}

TEST(Refine, SegmentStaysNearInpaintMask) {
  MockBackend backend;
  const auto patch = noise(64, 64, 2);
  const auto m = ellipse_mask(64, 64, 30, 30, 12, 8);
  const auto r = refine_mask(patch, m, backend, RefineMode::SegmentBackend, "pitting");
  EXPECT_EQ(r.source, "segment-backend");
  EXPECT_GT(r.area, 0);
  EXPECT_EQ(r.area, r.mask.area());
  const auto allowed = dilate(m, kRefineDilation);
  for (std::size_t i = 0; i < r.mask.data.size(); ++i) {
    if (r.mask.data[i]) ASSERT_TRUE(allowed.data[i]);
  }
  EXPECT_EQ(largest_component(r.mask).area(), r.area);
}

TEST(Refine, EmptySegmentationFallsBack) {
  EmptySegment backend;
  const auto m = ellipse_mask(64, 64, 30, 30, 12, 8);
  const auto r = refine_mask(noise(64, 64, 3), m, backend, RefineMode::SegmentBackend, "pitting");
  EXPECT_TRUE(r.fallback);
  EXPECT_EQ(r.mask.data, m.data);
  EXPECT_EQ(parse_refine_mode("inpaint-mask"), RefineMode::InpaintMask);
  EXPECT_THROW(parse_refine_mode("sam"), Error);
}

namespace {

/// Backend whose segmentation is a fixed mask, for checking the clip step.
class FixedSegment : public MockBackend {
 public:
  explicit FixedSegment(Mask m) : seg_(std::move(m)) {}
  Mask segment(const Image&, const PixelBox&, const std::string&, const Mask*) override { return seg_; }

 private:
  Mask seg_;
};

}  // namespace

TEST(Refine, WindowedResultMatchesFullFrame) {
  Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const int w = 160, h = 120;
    Mask inpaint = ellipse_mask(w, h, rng.uniform(5, 155), rng.uniform(5, 115), rng.uniform(3, 30), rng.uniform(3, 30),
                                rng.uniform(0, 3));
    if (inpaint.area() == 0) continue;
    Mask seg(w, h);
    for (auto& v : seg.data) v = rng.uniform() < 0.3 ? 1 : 0;
    FixedSegment backend(seg);
    const auto got = refine_mask(Image(w, h), inpaint, backend, RefineMode::SegmentBackend, "cue");
    const Mask want = largest_component(intersect(seg, dilate(inpaint, kRefineDilation)));
    if (want.area() == 0) {
      EXPECT_TRUE(got.fallback);
    } else {
      EXPECT_EQ(got.mask.data, want.data) << trial;
      EXPECT_EQ(got.area, want.area());
    }
  }
}

TEST(Feather, FlatAreasStayExact) {
  const auto ones = feather_mask(Mask(40, 30, 1), 2.0);
  for (double v : ones.data) ASSERT_EQ(v, 1.0);
  const auto zeros = feather_mask(Mask(40, 30, 0), 2.0);
  for (double v : zeros.data) ASSERT_EQ(v, 0.0);
}

TEST(Feather, KernelMassAndEdges) {
  Mask dot(41, 41);
  dot.at(20, 20) = 1;
  const auto f = feather_mask(dot, 2.0);
  double sum = 0;
  for (double v : f.data) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-6);

  const auto disk = ellipse_mask(80, 80, 40, 40, 20, 20);
  const auto d = feather_mask(disk, 2.0);
  EXPECT_EQ(d.at(40, 40), 1.0);
  EXPECT_EQ(d.at(2, 2), 0.0);
  const double edge = d.at(60, 40);
  EXPECT_GT(edge, 0.0);
  EXPECT_LT(edge, 1.0);
  for (double v : d.data) {
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
  }
  EXPECT_THROW(feather_mask(disk, 0.0), Error);
}

TEST(Blend, ConservesBackgroundWhereSoftIsZero) {
  Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    const int w = 160, h = 120;
    const auto bg = noise(w, h, 100 + static_cast<std::uint64_t>(t));
    const int side = static_cast<int>(rng.uniform_int(30, 100));
    const CropRect crop{static_cast<int>(rng.uniform_int(0, w - side)), static_cast<int>(rng.uniform_int(0, h - side)),
                        side, false};
    const auto patch = noise(64, 64, 500 + static_cast<std::uint64_t>(t));
    const auto m = ellipse_mask(64, 64, 32, 32, rng.uniform(5, 20), rng.uniform(5, 20));
    const auto out = blend(bg, {3, "bg.png", w, h}, candidate(t, crop), patch, as_refined(m));
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double a = out.soft.at(x, y);
        if (a == 0) {
          for (int c = 0; c < 3; ++c) ASSERT_EQ(out.image.at(x, y)[c], bg.at(x, y)[c]);
        }
      }
    }
    // annotation bbox equals the bbox of the pasted mask
    Mask full(w, h);
    const auto local = resize_nearest(m, side, side);
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) full.at(crop.x + x, crop.y + y) = local.at(x, y);
    ASSERT_EQ(out.entry.annotations.size(), 1u);
    const auto& ann = out.entry.annotations[0];
    EXPECT_EQ(ann.bbox, to_bbox(full.bbox()));
    EXPECT_EQ(ann.area, static_cast<double>(full.area()));
    EXPECT_EQ(ann.image_id, kSyntheticIdOffset + t);
  }
}

TEST(Blend, FullWeightCopiesPatch) {
  const auto bg = flat(100, 100, 10);
  const auto patch = flat(50, 50, 200);
  const auto m = rect_mask(50, 50, {0, 0, 50, 50});
  const auto out = blend(bg, {3, "bg.png", 100, 100}, candidate(0, {25, 25, 50, false}), patch, as_refined(m));
  // deep inside the pasted region the weight is exactly 1
  EXPECT_EQ(out.soft.at(50, 50), 1.0);
  EXPECT_EQ(out.image.at(50, 50)[0], 200);
  EXPECT_EQ(out.image.at(10, 10)[0], 10);
  const int edge = out.image.at(25, 50)[0];
  EXPECT_GT(edge, 10);
  EXPECT_LT(edge, 200);
  const auto& prov = out.entry.annotations[0].provenance;
  EXPECT_EQ(prov.at("candidate_id"), "c0000");
  EXPECT_EQ(prov.at("mask_source"), "inpaint-mask");
}

TEST(Blend, CropOutsideBackground) {
  const auto bg = flat(50, 50, 0);
  try {
    blend(bg, {3, "bg.png", 50, 50}, candidate(0, {30, 30, 40, false}), flat(8, 8, 1), as_refined(Mask(8, 8, 1)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::CropOutOfBounds);
    EXPECT_EQ(e.subject(), "c0000");
  }
}

TEST(Export, RoundTripsThroughLoader) {
  TempDir tmp;
  std::vector<ComposedEntry> entries;
  for (int i = 0; i < 4; ++i) {
    const auto bg = noise(90, 70, static_cast<std::uint64_t>(i));
    const auto m = ellipse_mask(32, 32, 16, 16, 6 + i, 5);
    auto out = blend(bg, {3, "bg.png", 90, 70}, candidate(i, {10 + i, 5, 40, false}), noise(32, 32, 9), as_refined(m),
                     {2.0, "bsdata"});
    write_png(tmp.path() / out.entry.record.file_path, out.image);
    entries.push_back(std::move(out.entry));
  }
  const auto path = export_coco(entries, tmp.path());
  const auto ds = load_coco(tmp.path(), path);
  ASSERT_EQ(ds.images.size(), 4u);
  ASSERT_EQ(ds.annotations.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(ds.annotations[i].bbox, entries[i].annotations[0].bbox);
    EXPECT_EQ(ds.annotations[i].segmentation.counts, entries[i].annotations[0].segmentation.counts);
    EXPECT_EQ(ds.annotations[i].provenance, entries[i].annotations[0].provenance);
  }
  // re-export is byte-identical
  const auto again = export_coco(entries, tmp.path(), "again.json");
  EXPECT_EQ(slurp(path), slurp(again));
  entries.push_back(entries[0]);
  EXPECT_THROW(export_coco(entries, tmp.path(), "dup.json"), Error);
}

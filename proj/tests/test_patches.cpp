// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "defectforge/morphology.hpp"
#include "defectforge/patches.hpp"
#include "test_util.hpp"

namespace df = defectforge;
using df::testing::make_annotation;
using df::testing::make_dataset;
using df::testing::rect_mask;
using df::testing::TempDir;

TEST(CropWindow, ClosedFormSideCentered) {
  const auto c = df::crop_window({950, 950, 100, 100}, {2000, 2000});
  EXPECT_EQ(c.side, 174);  // ceil(sqrt(30000)) = ceil(173.205)
  EXPECT_EQ(c.x, 913);     // floor(1000 - 87)
  EXPECT_EQ(c.y, 913);
  EXPECT_FALSE(c.clamped);
}

TEST(CropWindow, WholeImageBoxShrinksToImage) {
  const auto c = df::crop_window({0, 0, 300, 300}, {300, 300});
  EXPECT_EQ(c.side, 300);
  EXPECT_EQ(c.x, 0);
  EXPECT_EQ(c.y, 0);
  EXPECT_TRUE(c.clamped);
}

TEST(CropWindow, TranslatesAwayFromLeftEdge) {
  const df::BBox box{0, 100, 10, 40};
  const auto c = df::crop_window(box, {500, 500});
  EXPECT_EQ(c.side, 35);  // ceil(sqrt(1200)) = ceil(34.64)
  EXPECT_EQ(c.x, 0);      // centered start would be floor(5 - 17.5) = -13
  EXPECT_EQ(c.y, 102);    // floor(120 - 17.5)
  EXPECT_TRUE(c.clamped);
  // aspect 4 > 3: the window is shorter than the box
  EXPECT_LT(c.side, 40);
}

TEST(CropWindow, WindowAreaIsAboutThreeTimesBox) {
  for (int w = 5; w < 200; w += 17) {
    for (int h = 3; h < 150; h += 13) {
      const auto c = df::crop_window({500, 500, double(w), double(h)}, {2000, 2000});
      const double ratio = static_cast<double>(c.side) * c.side / (w * h);
      EXPECT_GE(ratio, 3.0);
      EXPECT_LT(c.side - 1, std::sqrt(3.0 * w * h));
    }
  }
}

TEST(ExtractPatch, ScaleFactorAndOnePixelMaskSurvives) {
  df::Image img(1200, 1200, 50);
  const auto m = rect_mask(1200, 1200, {600, 600, 1, 1});
  const auto ann = make_annotation(1, 1, m);
  const df::CropRect half{100, 100, 512, false};
  auto big = make_annotation(2, 1, rect_mask(1200, 1200, {300, 300, 10, 10}));
  EXPECT_DOUBLE_EQ(df::extract_patch(img, big, half).scale_factor, 2.0);
  const auto p = df::extract_patch(img, ann, {88, 88, 1024, false});
  EXPECT_EQ(p.mask.area(), 1);
  EXPECT_EQ(p.image.width, df::kPatchSize);
}

TEST(ExtractPatch, MaskLostInDownscaleIsAnError) {
  df::Image img(3000, 3000, 50);
  const auto ann = make_annotation(1, 1, rect_mask(3000, 3000, {2, 2, 1, 1}));
  try {
    df::extract_patch(img, ann, {0, 0, 3000, false});
    FAIL();
  } catch (const df::Error& e) {
    EXPECT_EQ(e.kind(), df::ErrorKind::EmptyMaskAfterResize);
  }
}

TEST(ExtractPatch, ReprojectionRecoversInstanceMask) {
  df::Rng rng(4);
  df::Image img(600, 400, 120);
  for (int trial = 0; trial < 20; ++trial) {
    // the window covers the box only for aspect ratios up to 3
    const int w = 6 + static_cast<int>(rng.index(60));
    const int h = std::max(w / 3 + 1, std::min(3 * w, 6 + static_cast<int>(rng.index(60))));
    const int x = static_cast<int>(rng.index(static_cast<std::size_t>(600 - w)));
    const int y = static_cast<int>(rng.index(static_cast<std::size_t>(400 - h)));
    // ellipse inscribed in the box
    std::vector<double> poly;
    for (int k = 0; k < 24; ++k) {
      const double t = 2 * M_PI * k / 24;
      poly.push_back(x + w / 2.0 + w / 2.0 * std::cos(t));
      poly.push_back(y + h / 2.0 + h / 2.0 * std::sin(t));
    }
    const auto m = df::rasterize_polygons({poly}, 600, 400);
    if (m.area() == 0) continue;
    const auto ann = make_annotation(trial + 1, 1, m);
    const auto crop = df::crop_window(ann.bbox, {600, 400});
    const auto p = df::extract_patch(img, ann, crop);
    const auto back = df::reproject_mask(p.mask, crop, {600, 400});
    EXPECT_GE(df::mask_iou(back, m), 0.85) << trial;
    if (!crop.clamped) {
      const auto c = df::centroid(p.mask);
      EXPECT_GT(c.x, 0.2 * df::kPatchSize);
      EXPECT_LT(c.x, 0.8 * df::kPatchSize);
      EXPECT_GT(c.y, 0.2 * df::kPatchSize);
      EXPECT_LT(c.y, 0.8 * df::kPatchSize);
    }
    EXPECT_LT(static_cast<double>(p.mask.area()), 0.9 * df::kPatchSize * df::kPatchSize);
  }
}

TEST(ExtractPatch, DeterministicBytes) {
  df::Image img(300, 300);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 31 % 251);
  const auto ann = make_annotation(1, 1, rect_mask(300, 300, {100, 120, 30, 20}));
  const auto crop = df::crop_window(ann.bbox, {300, 300});
  EXPECT_EQ(df::encode_png(df::extract_patch(img, ann, crop).image),
            df::encode_png(df::extract_patch(img, ann, crop).image));
}

TEST(PlanPatches, DisjointInstancesYieldTwoPatches) {
  auto ds = make_dataset({{1, {800, 600}}});
  ds.annotations.push_back(make_annotation(1, 1, rect_mask(800, 600, {50, 50, 20, 20})));
  ds.annotations.push_back(make_annotation(2, 1, rect_mask(800, 600, {500, 400, 20, 20})));
  const auto idx = df::plan_patches(ds, {1});
  EXPECT_EQ(idx.patches.size(), 2u);
  EXPECT_TRUE(idx.suppressed.empty());
}

TEST(PlanPatches, OverlappingInstancesKeepTheLarger) {
  auto ds = make_dataset({{1, {800, 600}}});
  // areas 50 and 80 sharing a corner: windows 13x13 vs 16x16 overlap heavily
  ds.annotations.push_back(make_annotation(1, 1, rect_mask(800, 600, {100, 100, 10, 5})));
  ds.annotations.push_back(make_annotation(2, 1, rect_mask(800, 600, {100, 100, 10, 8})));
  const auto w1 = df::crop_window(ds.annotations[0].bbox, {800, 600});
  const auto w2 = df::crop_window(ds.annotations[1].bbox, {800, 600});
  ASSERT_GT(df::iou(w1.box(), w2.box()), 0.5);
  const auto idx = df::plan_patches(ds, {1});
  ASSERT_EQ(idx.patches.size(), 1u);
  EXPECT_EQ(idx.patches[0].source_annotation_id, 2);
  ASSERT_EQ(idx.suppressed.size(), 1u);
  EXPECT_EQ(idx.suppressed[0].annotation_id, 1);
}

TEST(ExtractAll, WritesPatchPairsAndIndex) {
  TempDir dir;
  auto ds = make_dataset({{1, {400, 300}}, {2, {400, 300}}});
  ds.root = dir.path();
  df::Image img(400, 300, 80);
  df::write_png(dir.path() / "img_1.png", img);
  df::write_png(dir.path() / "img_2.png", img);
  ds.annotations.push_back(make_annotation(5, 1, rect_mask(400, 300, {10, 10, 20, 30})));
  ds.annotations.push_back(make_annotation(6, 2, rect_mask(400, 300, {200, 100, 40, 10})));
  std::vector<std::string> ids;
  const auto idx = df::extract_all(ds, {1, 2}, [&](df::DefectPatch&& p) {
    ids.push_back(p.patch_id);
    df::write_patch(dir.path() / "patches", p);
  });
  EXPECT_EQ(ids, (std::vector<std::string>{"p5", "p6"}));
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "patches" / "p5.mask.png"));
  const auto back = df::patch_index_from_json(df::to_json(idx));
  EXPECT_EQ(back.patches.size(), 2u);
  EXPECT_EQ(back.patches[1].crop, idx.patches[1].crop);
  EXPECT_EQ(df::read_png_mask(dir.path() / "patches" / "p6.mask.png").width, df::kPatchSize);
}

// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "defectforge/image.hpp"
#include "defectforge/morphology.hpp"
#include "defectforge/png_io.hpp"
#include "defectforge/rle.hpp"
#include "defectforge/rng.hpp"
#include "test_util.hpp"

namespace df = defectforge;

namespace {

df::Mask random_mask(df::Rng& rng, int w, int h, double p) {
  df::Mask m(w, h);
  for (auto& v : m.data) v = rng.uniform() < p ? 1 : 0;
  return m;
}

// Ray casting against pixel centers, one polygon at a time.
bool inside_even_odd(const std::vector<double>& poly, double px, double py) {
  bool in = false;
  const std::size_t n = poly.size() / 2;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const double xi = poly[2 * i], yi = poly[2 * i + 1], xj = poly[2 * j], yj = poly[2 * j + 1];
    if ((yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi) in = !in;
  }
  return in;
}

}  // namespace

TEST(Rle, RoundTripAndMetricsOnRandomMasks) {
  df::Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int w = 1 + static_cast<int>(rng.index(40)), h = 1 + static_cast<int>(rng.index(40));
    const auto m = random_mask(rng, w, h, rng.uniform());
    const auto r = df::rle_encode(m);
    EXPECT_EQ(df::rle_decode(r), m);
    EXPECT_EQ(df::rle_area(r), m.area());
    EXPECT_EQ(df::rle_bbox(r), m.bbox());
    EXPECT_EQ(df::rle_from_string(df::rle_to_string(r), h, w), r);
  }
}

TEST(Rle, StartsWithZeroRun) {
  df::Mask m(2, 2, 1);
  const auto r = df::rle_encode(m);
  ASSERT_EQ(r.counts.size(), 2u);
  EXPECT_EQ(r.counts[0], 0u);
  EXPECT_EQ(r.counts[1], 4u);
}

TEST(Rle, RejectsRunsPastTheEnd) {
  df::Rle r{2, 2, {1, 5}};
  EXPECT_THROW(df::rle_decode(r), df::Error);
}

TEST(Polygon, MatchesPointInPolygonOracle) {
  df::Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> poly;
    const int n = 3 + static_cast<int>(rng.index(6));
    for (int i = 0; i < n; ++i) {
      poly.push_back(rng.uniform(-3, 33));
      poly.push_back(rng.uniform(-3, 23));
    }
    const auto m = df::rasterize_polygons({poly}, 30, 20);
    for (int y = 0; y < 20; ++y)
      for (int x = 0; x < 30; ++x)
        ASSERT_EQ(m.at(x, y) != 0, inside_even_odd(poly, x + 0.5, y + 0.5)) << "trial " << trial << " at " << x << "," << y;
  }
}

TEST(Polygon, AxisAlignedSquareCoversWholePixels) {
  const auto m = df::rasterize_polygons({{2, 3, 7, 3, 7, 9, 2, 9}}, 12, 12);
  EXPECT_EQ(m.area(), 5 * 6);
  EXPECT_EQ(m.bbox(), (df::PixelBox{2, 3, 5, 6}));
}

TEST(Polygon, RejectsDegenerate) {
  EXPECT_THROW(df::rasterize_polygons({{1, 1, 2, 2}}, 4, 4), df::Error);
}

TEST(Resize, NearestIdentityAndIntegerUpscale) {
  df::Rng rng(3);
  const auto m = random_mask(rng, 16, 8, 0.4);
  EXPECT_EQ(df::resize_nearest(m, 16, 8), m);
  const auto up = df::resize_nearest(m, 32, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 32; ++x) EXPECT_EQ(up.at(x, y), m.at(x / 2, y / 2));
  EXPECT_EQ(df::resize_nearest(up, 16, 8), m);
}

TEST(Resize, BilinearKeepsConstantImages) {
  df::Image img(7, 5, 93);
  const auto out = df::resize_bilinear(img, 19, 23);
  for (auto v : out.pixels) EXPECT_EQ(v, 93);
}

TEST(Resize, BilinearMidpointInterpolates) {
  df::Image img(2, 1);
  img.at(0, 0)[0] = 0;
  img.at(1, 0)[0] = 100;
  const auto out = df::resize_bilinear(img, 4, 1);
  // pixel centers map to -0.25, 0.25, 0.75, 1.25 -> clamped 0, 0.25, 0.75, 1
  EXPECT_EQ(out.at(0, 0)[0], 0);
  EXPECT_EQ(out.at(1, 0)[0], 25);
  EXPECT_EQ(out.at(2, 0)[0], 75);
  EXPECT_EQ(out.at(3, 0)[0], 100);
}

TEST(Morphology, ErodeDilateSquare) {
  const auto m = df::testing::rect_mask(20, 20, {5, 5, 6, 6});
  EXPECT_EQ(df::erode(m, 1), df::testing::rect_mask(20, 20, {6, 6, 4, 4}));
  EXPECT_EQ(df::dilate(m, 3), df::testing::rect_mask(20, 20, {2, 2, 12, 12}));
  EXPECT_TRUE(df::contained_in(df::erode(m, 1), m));
}

TEST(Morphology, ComponentsUseEightConnectivity) {
  df::Mask m(5, 5);
  m.at(0, 0) = m.at(1, 1) = m.at(2, 2) = 1;  // diagonal chain
  m.at(4, 0) = 1;
  EXPECT_EQ(df::count_components(m), 2);
  EXPECT_EQ(df::largest_component(m).area(), 3);
}

TEST(Morphology, CentroidOfSquare) {
  const auto c = df::centroid(df::testing::rect_mask(10, 10, {2, 4, 4, 2}));
  EXPECT_DOUBLE_EQ(c.x, 4.0);
  EXPECT_DOUBLE_EQ(c.y, 5.0);
}

TEST(Png, RoundTripRgbAndOneBit) {
  df::Rng rng(9);
  df::Image img(13, 7);
  for (auto& v : img.pixels) v = static_cast<std::uint8_t>(rng.index(256));
  EXPECT_EQ(df::decode_png_image(df::encode_png(img)), img);
  const auto m = random_mask(rng, 13, 7, 0.5);
  EXPECT_EQ(df::decode_png_mask(df::encode_png(m)), m);
}

TEST(Rng, UniformIntStaysInRange) {
  df::Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const auto v = rng.uniform_int(-50, 50);
    ASSERT_GE(v, -50);
    ASSERT_LE(v, 50);
  }
}

TEST(Geometry, BoxIou) {
  EXPECT_DOUBLE_EQ(df::iou({0, 0, 10, 10}, {0, 0, 10, 10}), 1.0);
  EXPECT_DOUBLE_EQ(df::iou({0, 0, 10, 10}, {10, 0, 10, 10}), 0.0);
  EXPECT_DOUBLE_EQ(df::iou({0, 0, 10, 10}, {5, 0, 10, 10}), 50.0 / 150.0);
}

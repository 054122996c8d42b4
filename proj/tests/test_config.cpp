// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>

#include "defectforge/config.hpp"
#include "test_util.hpp"

using namespace defectforge;
using namespace defectforge::testing;

namespace {

const std::filesystem::path kShipped = std::filesystem::path(DEFECTFORGE_SOURCE_DIR) / "config" / "defectforge.json";

std::filesystem::path write_config(const TempDir& tmp, const nlohmann::json& j) {
  const auto p = tmp.path() / "cfg.json";
  std::ofstream(p) << j.dump();
  return p;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::IoError;
}

}  // namespace

TEST(Config, BuiltInDefaults) {
  const auto cfg = load_config(std::nullopt);
  EXPECT_EQ(cfg.seed, 7u);
  EXPECT_EQ(cfg.profile.name, "bsdata");
  EXPECT_EQ(cfg.profile.resolutions.size(), 2u);
  EXPECT_EQ(cfg.profile.selection.target_count, 420);
  EXPECT_EQ(cfg.profile.masks.placement, PlacementMode::HeatmapWeighted);
  EXPECT_EQ(cfg.profile.compose.refine, RefineMode::SegmentBackend);
  EXPECT_EQ(cfg.profile.regimes.seeds, (std::vector<std::uint64_t>{7, 8, 9}));
}

TEST(Config, ShippedFileLoadsBothProfiles) {
  const auto bs = load_config(kShipped);
  EXPECT_TRUE(std::filesystem::exists(bs.profile.prompt.stoplist));
  EXPECT_TRUE(std::filesystem::exists(bs.profile.prompt.lexicon));
  const auto msd = load_config(kShipped, {.profile = "msd"});
  EXPECT_EQ(msd.profile.resolutions, (std::vector<Resolution>{{1920, 1080}}));
  EXPECT_EQ(msd.profile.masks.placement, PlacementMode::FullArea);
  EXPECT_EQ(msd.profile.selection.target_count, 520);
  EXPECT_EQ(msd.profile.compose.refine, RefineMode::InpaintMask);
}

TEST(Config, OverridesWin) {
  TempDir tmp;
  const auto p = write_config(tmp, {{"seed", 3}, {"backend", {{"url", "http://file:1"}}}});
  const auto cfg = load_config(p, {.seed = 11, .backend_url = "http://flag:2", .target = 50,
                                   .dataset = tmp.path() / "d" / "ann.json"});
  EXPECT_EQ(cfg.seed, 11u);
  EXPECT_EQ(cfg.backend.url, "http://flag:2");
  EXPECT_EQ(cfg.profile.selection.target_count, 50);
  EXPECT_EQ(cfg.dataset_root, tmp.path() / "d");
  EXPECT_EQ(cfg.resolved.at("settings").at("select").at("target"), 50);
  EXPECT_EQ(load_config(p).backend.url, "http://file:1");
}

TEST(Config, ProfileFragmentMergesOverDefaults) {
  TempDir tmp;
  const auto p = write_config(tmp, {{"profiles", {{"bsdata", {{"select", {{"w_dist", 0.5}}}}}}}});
  const auto cfg = load_config(p);
  EXPECT_DOUBLE_EQ(cfg.profile.selection.w_dist, 0.5);
  EXPECT_EQ(cfg.profile.selection.target_count, 420);
}

TEST(Config, InvalidDocumentsAreConfigErrors) {
  TempDir tmp;
  const std::vector<nlohmann::json> bad = {
      {{"sed", 1}},
      {{"profile", "unknown"}},
      {{"profiles", {{"bsdata", {{"masks", {{"placement", "anywhere"}}}}}}}},
      {{"profiles", {{"bsdata", {{"split", {0.5, 0.5, 0.5}}}}}}},
      {{"profiles", {{"bsdata", {{"regimes", {{"seeds", {1, 1, 2}}}}}}}}},
      {{"profiles", {{"bsdata", {{"prompt", {{"stoplist", "nope.txt"}}}}}}}},
      {{"profiles", {{"bsdata", {{"select", {{"target", "many"}}}}}}}},
      {{"backend", {{"timeout_s", 0}}}},
  };
  for (const auto& j : bad) {
    const auto p = write_config(tmp, j);
    EXPECT_EQ(kind_of([&] { load_config(p); }), ErrorKind::ConfigError) << j.dump();
  }
  EXPECT_EQ(kind_of([&] { load_config(tmp.path() / "absent.json"); }), ErrorKind::ConfigError);
  std::ofstream(tmp.path() / "broken.json") << "{";
  EXPECT_EQ(kind_of([&] { load_config(tmp.path() / "broken.json"); }), ErrorKind::ConfigError);
}

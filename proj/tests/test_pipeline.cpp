// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>

#include "defectforge/fixture.hpp"
#include "defectforge/mock_backend.hpp"
#include "defectforge/pipeline.hpp"
#include "test_util.hpp"

using namespace defectforge;
using namespace defectforge::testing;

namespace {

FixtureShape small_shape() {
  FixtureShape s;
  s.retained = {{{640, 480}, 40}};
  s.other = {{{320, 240}, 5}};
  s.defective = 20;
  s.per_image = {17, 3, 0};
  s.other_annotations = 2;
  s.train_doubles = 2;
  s.train_triples = 0;
  return s;
}

class PipelineTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto data = tmp_.path() / "data";
    write_fixture(make_fixture(small_shape(), 7), data, 7);
    const nlohmann::json doc = {
        {"profile", "custom"},
        {"dataset", {{"root", (data).string()}}},
        {"profiles",
         {{"custom",
           {{"resolutions", {{640, 480}}},
            {"masks", {{"per_resolution", 20}}},
            {"generate", {{"count", 40}, {"steps", 4}}},
            {"select", {{"target", 24}}},
            {"compose", {{"reserve", 10}}}}}}}};
    std::ofstream(tmp_.path() / "cfg.json") << doc.dump();
  }

  RunContext context(const std::filesystem::path& ws) {
    RunContext ctx;
    ctx.cfg = load_config(tmp_.path() / "cfg.json");
    ctx.workspace = ws;
    ctx.backend = [this]() -> Backend& { return backend_; };
    ctx.log = &log_;
    return ctx;
  }

  void run_all(const RunContext& ctx) {
    for (auto s : stage_order()) run_stage(ctx, s);
  }

  TempDir tmp_;
  MockBackend backend_;
  std::ostringstream log_;
};

std::string file_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_F(PipelineTest, FullRunProducesAllArtifacts) {
  const auto ctx = context(tmp_.path() / "ws");
  run_all(ctx);
  const auto stats = read_json(ctx.dir("analyze") / "stats.json");
  EXPECT_EQ(stats.at("retained").at("images"), 40);
  EXPECT_EQ(stats.at("retained").at("defective"), 20);
  const auto idx = load_patch_index(ctx);
  EXPECT_EQ(stats.at("train_patches").get<std::size_t>(), idx.patches.size());
  EXPECT_FALSE(load_prompt(ctx).text.empty());
  EXPECT_EQ(load_selection(ctx).ids.size(), 24u);
  const auto composed = load_coco(ctx.dir("compose-images"), ctx.dir("compose-images") / "annotations.json");
  EXPECT_EQ(composed.images.size(), 24u);
  EXPECT_EQ(composed.annotations.size(), 24u);
  const auto lock = read_json(ctx.dir("regimes") / "regimes.lock");
  ASSERT_EQ(lock.at("manifests").size(), 21u);
  const int r = lock.at("r_full").get<int>();
  const auto m = manifest_from_json(read_json(ctx.dir("regimes") / "r75_s25_seed8" / "manifest.json"));
  EXPECT_EQ(m.real_ids.size(), static_cast<std::size_t>(regime_count(75, r)));
  EXPECT_EQ(m.synthetic_ids.size(), static_cast<std::size_t>(regime_count(25, r)));
  const auto coco = load_coco(ctx.dir("regimes") / "r100_s200_seed9",
                              ctx.dir("regimes") / "r100_s200_seed9" / "annotations.json");
  EXPECT_GE(coco.images.size(), static_cast<std::size_t>(regime_count(200, r)));
  EXPECT_NE(file_text(ctx.dir("report") / "report.md").find("| medium"), std::string::npos);
}

TEST_F(PipelineTest, RerunIsByteIdentical) {
  const auto ctx = context(tmp_.path() / "ws");
  run_all(ctx);
  std::map<std::string, std::string> before;
  for (auto s : stage_order()) before[std::string(s)] = stage_manifest_hash(ctx, s);
  run_stage(ctx, "gen-masks");
  run_stage(ctx, "select");
  for (auto s : stage_order()) EXPECT_EQ(stage_manifest_hash(ctx, s), before[std::string(s)]) << s;
  // downstream stages remain valid because the rerun reproduced the manifests
  EXPECT_NO_THROW(run_stage(ctx, "report"));
}

TEST_F(PipelineTest, MissingAndStaleInputs) {
  const auto ctx = context(tmp_.path() / "ws");
  try {
    run_stage(ctx, "extract-patches");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::StageInputMissing);
    EXPECT_EQ(exit_code(e.kind()), 3);
  }
  run_stage(ctx, "analyze");
  run_stage(ctx, "gen-masks");

  // a changed seed changes the analyze manifest, so gen-masks is stale
  auto other = context(tmp_.path() / "ws");
  other.cfg.seed = 8;
  other.cfg.resolved["seed"] = 8;
  run_stage(other, "analyze");
  run_stage(ctx, "extract-patches");
  run_stage(ctx, "build-prompt");
  try {
    run_stage(ctx, "generate");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::StaleInput);
    EXPECT_EQ(e.subject(), "gen-masks");
  }
  auto forced = context(tmp_.path() / "ws");
  forced.force = true;
  EXPECT_NO_THROW(run_stage(forced, "generate"));
  EXPECT_NE(log_.str().find("stale"), std::string::npos);
}

TEST_F(PipelineTest, DatasetEditMakesAnalyzeStale) {
  const auto ctx = context(tmp_.path() / "ws");
  run_stage(ctx, "analyze");
  std::ofstream(ctx.cfg.annotations, std::ios::app) << "\n";
  EXPECT_THROW(run_stage(ctx, "gen-masks"), Error);
}

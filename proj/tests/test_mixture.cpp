// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "defectforge/mixture.hpp"
#include "test_util.hpp"

using namespace defectforge;
using namespace defectforge::testing;

namespace {

std::vector<std::string> ids(const std::string& prefix, int n) {
  std::vector<std::string> v;
  for (int i = 0; i < n; ++i) v.push_back(prefix + std::to_string(i));
  return v;
}

bool is_subset(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::set<std::string> sb(b.begin(), b.end());
  return std::all_of(a.begin(), a.end(), [&](const auto& x) { return sb.count(x) > 0; });
}

}  // namespace

TEST(Regime, CountsFollowRounding) {
  EXPECT_EQ(regime_count(75, 221), 166);
  EXPECT_EQ(regime_count(25, 221), 55);
  EXPECT_EQ(regime_count(50, 221), 111);  // 110.5 rounds away from zero
  EXPECT_EQ(regime_count(200, 221), 442);
  EXPECT_EQ(regime_count(75, 200), 150);
  EXPECT_EQ(regime_count(0, 221), 0);
  EXPECT_THROW((RegimeSpec{101, 0, 1, ""}.validate()), Error);
}

TEST(Regime, ComposeExamples) {
  const auto real = ids("p", 200);
  const SyntheticSupply supply{ids("c", 300), {}};
  const auto m = compose(real, supply, {75, 25, 7, ""});
  EXPECT_EQ(m.real_ids.size(), 150u);
  EXPECT_EQ(m.synthetic_ids.size(), 50u);
  EXPECT_EQ(m.regime.label, "75/25");
  // ranked order first
  EXPECT_TRUE(std::equal(m.synthetic_ids.begin(), m.synthetic_ids.end(), supply.ranked.begin()));
  const auto only_real = compose(real, supply, {100, 0, 7, ""});
  EXPECT_EQ(std::set<std::string>(only_real.real_ids.begin(), only_real.real_ids.end()),
            std::set<std::string>(real.begin(), real.end()));
  EXPECT_TRUE(only_real.synthetic_ids.empty());
  EXPECT_TRUE(compose(real, supply, {0, 100, 7, ""}).real_ids.empty());
  try {
    compose(real, supply, {100, 200, 7, ""});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InsufficientSyntheticPool);
  }
}

TEST(Regime, ReserveFillsOverflowDeterministically) {
  const auto real = ids("p", 221);
  const SyntheticSupply supply{ids("s", 420), ids("r", 100)};
  const auto a = compose(real, supply, {100, 200, 7, ""});
  ASSERT_EQ(a.synthetic_ids.size(), 442u);
  EXPECT_TRUE(std::equal(supply.ranked.begin(), supply.ranked.end(), a.synthetic_ids.begin()));
  EXPECT_TRUE(is_subset({a.synthetic_ids.begin() + 420, a.synthetic_ids.end()}, supply.reserve));
  EXPECT_EQ(to_json(compose(real, supply, {100, 200, 7, ""})), to_json(a));
  const auto b = compose(real, supply, {100, 200, 8, ""});
  EXPECT_NE(std::vector<std::string>(b.synthetic_ids.begin() + 420, b.synthetic_ids.end()),
            std::vector<std::string>(a.synthetic_ids.begin() + 420, a.synthetic_ids.end()));
}

TEST(Regime, SuiteNestingAndExactCounts) {
  const auto real = ids("p", 221);
  const SyntheticSupply supply{ids("s", 420), ids("r", 80)};
  const auto suite = emit_regime_suite(real, supply, {7, 8, 9});
  ASSERT_EQ(suite.size(), 21u);
  std::map<std::pair<std::uint64_t, int>, std::vector<std::string>> real_by;
  for (const auto& m : suite) {
    EXPECT_EQ(m.real_ids.size(), static_cast<std::size_t>(regime_count(m.regime.real_pct, 221)));
    EXPECT_EQ(m.synthetic_ids.size(), static_cast<std::size_t>(regime_count(m.regime.synth_pct, 221)));
    EXPECT_EQ(std::set<std::string>(m.real_ids.begin(), m.real_ids.end()).size(), m.real_ids.size());
    EXPECT_EQ(std::set<std::string>(m.synthetic_ids.begin(), m.synthetic_ids.end()).size(), m.synthetic_ids.size());
    if (m.regime.label == "75/25") {
      EXPECT_EQ(m.real_ids.size(), 166u);
      EXPECT_EQ(m.synthetic_ids.size(), 55u);
    }
    auto& prev = real_by[{m.regime.seed, m.regime.real_pct}];
    if (!prev.empty()) EXPECT_EQ(prev, m.real_ids);  // same seed and pct: identical
    prev = m.real_ids;
  }
  for (std::uint64_t seed : {7, 8, 9}) {
    EXPECT_TRUE(is_subset((real_by[{seed, 25}]), (real_by[{seed, 50}])));
    EXPECT_TRUE(is_subset((real_by[{seed, 50}]), (real_by[{seed, 75}])));
    EXPECT_TRUE(is_subset((real_by[{seed, 75}]), (real_by[{seed, 100}])));
  }
  EXPECT_NE((real_by[{7, 50}]), (real_by[{8, 50}]));
  EXPECT_THROW(emit_regime_suite(real, supply, {7, 8}), Error);
}

TEST(Regime, InputOrderIrrelevant) {
  auto real = ids("p", 50);
  const SyntheticSupply supply{ids("s", 60), {}};
  const auto a = compose(real, supply, {50, 50, 3, ""});
  std::reverse(real.begin(), real.end());
  EXPECT_EQ(compose(real, supply, {50, 50, 3, ""}).real_ids, a.real_ids);
  real.push_back(real.front());
  EXPECT_THROW(compose(real, supply, {50, 50, 3, ""}), Error);
}

TEST(Regime, ManifestJsonRoundTrip) {
  const auto m = compose(ids("p", 30), {ids("s", 40), {}}, {25, 75, 11, ""});
  EXPECT_EQ(to_json(manifest_from_json(to_json(m))), to_json(m));
  auto j = to_json(m);
  j["counts"]["real"] = 0;
  EXPECT_THROW(manifest_from_json(j), Error);
}

TEST(Regime, ExportWritesCocoSubset) {
  TempDir tmp;
  const Resolution res{60, 40};
  Dataset ds = make_dataset({{1, res}, {2, res}, {3, res}});
  ds.root = tmp.path() / "data";
  for (const auto& im : ds.images) write_png(ds.image_path(im), Image(res.first, res.second));
  ds.annotations.push_back(make_annotation(10, 1, rect_mask(60, 40, {5, 5, 10, 10})));
  ds.annotations.push_back(make_annotation(11, 1, rect_mask(60, 40, {30, 20, 8, 8})));
  ds.annotations.push_back(make_annotation(12, 2, rect_mask(60, 40, {10, 10, 6, 6})));
  RealCatalog real{&ds, {{"p10", 1}, {"p11", 1}, {"p12", 2}}};

  SyntheticCatalog synth;
  synth.image_dir = tmp.path() / "ws" / "compose" / "images";
  for (int i = 0; i < 3; ++i) {
    ComposedEntry e;
    e.candidate_id = candidate_id_for(i);
    e.record = {kSyntheticIdOffset + i, e.candidate_id + ".png", res.first, res.second};
    auto ann = make_annotation(kSyntheticIdOffset + i, kSyntheticIdOffset + i, rect_mask(60, 40, {1, 1, 4, 4}));
    e.annotations.push_back(ann);
    write_png(synth.image_dir / e.record.file_path, Image(res.first, res.second));
    synth.entries[e.candidate_id] = e;
  }
  TrainingManifest m;
  m.regime = {100, 100, 7, "100/100"};
  m.r_full = 2;
  m.real_ids = {"p10", "p12"};
  m.synthetic_ids = {"c0001", "c0000"};
  const auto out = tmp.path() / "ws" / "regimes" / regime_dir_name(m.regime);
  export_regime(m, real, synth, out);
  const auto back = load_coco(out, out / "annotations.json");
  EXPECT_EQ(back.images.size(), 4u);
  EXPECT_EQ(back.annotations.size(), 5u);  // image 1 keeps both of its instances
  EXPECT_EQ(back.images[0].file_path, "../../../data/img_1.png");
  EXPECT_EQ(manifest_from_json(nlohmann::json::parse(std::ifstream(out / "manifest.json"))).real_ids, m.real_ids);
  m.real_ids.push_back("p99");
  EXPECT_THROW(export_regime(m, real, synth, out), Error);

  const auto lock = regimes_lock({m}, {"p10", "p11", "p12"}, {{"c0000"}, {"c0001"}});
  EXPECT_EQ(lock.at("r_full"), 3);
  EXPECT_EQ(lock.at("manifests").size(), 1u);
  EXPECT_EQ(lock.at("manifests")[0].at("name"), "r100_s100_seed7");
}

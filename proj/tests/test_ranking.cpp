// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "defectforge/mock_backend.hpp"
#include "defectforge/ranking.hpp"
#include "defectforge/rng.hpp"

using namespace defectforge;

namespace {

std::vector<float> unit(Rng& rng, int dim) {
  std::vector<double> v(static_cast<std::size_t>(dim));
  double n = 0;
  for (auto& x : v) {
    x = rng.normal();
    n += x * x;
  }
  n = std::sqrt(n);
  std::vector<float> out;
  for (double x : v) out.push_back(static_cast<float>(x / n));
  return out;
}

// Exhaustive oracle: every distance, full sort, first k.
KnnResult brute_force(const std::vector<float>& c, const std::vector<std::vector<float>>& refs, int k) {
  std::vector<double> all;
  for (const auto& r : refs) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
      dot += static_cast<double>(c[i]) * r[i];
      na += static_cast<double>(c[i]) * c[i];
      nb += static_cast<double>(r[i]) * r[i];
    }
    all.push_back(std::clamp(1.0 - dot / std::sqrt(na * nb), 0.0, 2.0));
  }
  std::sort(all.begin(), all.end());
  double s = 0;
  for (int i = 0; i < k; ++i) s += all[static_cast<std::size_t>(i)];
  return {all[0], s / k};
}

std::vector<ScoredCandidate> random_pool(Rng& rng, int n) {
  std::vector<ScoredCandidate> p;
  for (int i = 0; i < n; ++i) {
    const double mn = rng.uniform(0.05, 0.4);
    char id[16];
    std::snprintf(id, sizeof id, "c%04d", i);
    p.push_back({id, {rng.uniform(15, 35), mn, mn + rng.uniform(0, 0.1), 3}});
  }
  return p;
}

Image noise(int seed) {
  Image img(8, 8);
  Rng rng(static_cast<std::uint64_t>(seed));
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.next());
  return img;
}

}  // namespace

TEST(Knn, IdentityAndOrthogonal) {
  const std::vector<std::vector<float>> refs = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  const auto same = knn_distances(std::vector<float>{0, 1, 0}, refs, 1);
  EXPECT_EQ(same.min_dist, 0.0);
  const std::vector<std::vector<float>> orth = {{0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}};
  const auto o = knn_distances(std::vector<float>{1, 0, 0, 0}, orth, 3);
  EXPECT_EQ(o.min_dist, 1.0);
  EXPECT_EQ(o.mean_k_dist, 1.0);
}

TEST(Knn, MatchesBruteForceExactly) {
  Rng rng(2024);
  int checked = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const int dim = static_cast<int>(rng.uniform_int(2, 64));
    const int nref = static_cast<int>(rng.uniform_int(5, 100));
    std::vector<std::vector<float>> refs;
    for (int r = 0; r < nref; ++r) refs.push_back(unit(rng, dim));
    const auto c = unit(rng, dim);
    for (int k : {1, 3, 5}) {
      const auto got = knn_distances(c, refs, k);
      const auto want = brute_force(c, refs, k);
      ASSERT_EQ(got.min_dist, want.min_dist);
      ASSERT_EQ(got.mean_k_dist, want.mean_k_dist);
      ASSERT_LE(got.min_dist, got.mean_k_dist);
      ++checked;
    }
  }
  EXPECT_EQ(checked, 600);
}

TEST(Knn, ReferenceOrderIrrelevantAndTooFew) {
  Rng rng(5);
  std::vector<std::vector<float>> refs;
  for (int i = 0; i < 30; ++i) refs.push_back(unit(rng, 16));
  const auto c = unit(rng, 16);
  const auto a = knn_distances(c, refs, 3);
  rng.shuffle(refs);
  const auto b = knn_distances(c, refs, 3);
  EXPECT_EQ(a.min_dist, b.min_dist);
  EXPECT_EQ(a.mean_k_dist, b.mean_k_dist);
  refs.resize(2);
  try {
    knn_distances(c, refs, 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TooFewReferences);
  }
}

TEST(Align, Formula) {
  const std::vector<float> v = {0.6f, 0.8f};
  EXPECT_DOUBLE_EQ(align_score(v, v), 100.0);
  EXPECT_EQ(align_score(v, std::vector<float>{-0.6f, -0.8f}), 0.0);
  const double c = 0.279;
  const std::vector<float> a = {1.0f, 0.0f};
  const std::vector<float> b = {static_cast<float>(c), static_cast<float>(std::sqrt(1 - c * c))};
  EXPECT_NEAR(align_score(a, b), 27.9, 1e-5);
}

TEST(ScorePool, CachesReferencesAndIsDeterministic) {
  MockBackend backend;
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("c" + std::to_string(i));
  auto cand = [](std::size_t i) { return noise(static_cast<int>(i)); };
  auto ref = [](std::size_t i) { return noise(1000 + static_cast<int>(i)); };
  const auto s1 = score_pool(ids, cand, 7, ref, "dark pits", backend);
  EXPECT_EQ(backend.embed_calls.load(), 17);
  EXPECT_EQ(backend.align_calls.load(), 10);
  const auto s2 = score_pool(ids, cand, 7, ref, "dark pits", backend, {3, 1});
  for (std::size_t i = 0; i < s1.size(); ++i) {
    EXPECT_EQ(s1[i].candidate_id, ids[i]);
    EXPECT_EQ(s1[i].scores.align_score, s2[i].scores.align_score);
    EXPECT_EQ(s1[i].scores.mean_k_dist, s2[i].scores.mean_k_dist);
    EXPECT_LE(s1[i].scores.min_dist, s1[i].scores.mean_k_dist);
    EXPECT_GE(s1[i].scores.min_dist, 0.0);
    EXPECT_LE(s1[i].scores.mean_k_dist, 2.0);
    EXPECT_EQ(s1[i].scores.align_score, align_score(MockBackend::image_embedding(cand(i)), MockBackend::text_embedding("dark pits")));
  }
  // reversed reference order
  const auto s3 = score_pool(ids, cand, 7, [&](std::size_t i) { return ref(6 - i); }, "dark pits", backend);
  for (std::size_t i = 0; i < s1.size(); ++i) EXPECT_EQ(s1[i].scores.mean_k_dist, s3[i].scores.mean_k_dist);
  EXPECT_THROW(score_pool(ids, cand, 0, ref, "x", backend), Error);
}

TEST(Select, IdentityTargetAndErrors) {
  Rng rng(1);
  const auto pool = random_pool(rng, 20);
  const auto all = select(pool, {20, 1, 1});
  EXPECT_EQ(all.ids.size(), 20u);
  EXPECT_TRUE(all.reserve.empty());
  std::set<std::string> s(all.ids.begin(), all.ids.end());
  EXPECT_EQ(s.size(), 20u);
  try {
    select(pool, {21, 1, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TargetExceedsPool);
  }
}

TEST(Select, TieBreaks) {
  std::vector<ScoredCandidate> pool = {{"b", {30, 0.2, 0.3, 3}}, {"a", {30, 0.1, 0.3, 3}}, {"c", {30, 0.1, 0.3, 3}}};
  const auto s = select(pool, {3, 1, 1});
  EXPECT_EQ(s.ids, (std::vector<std::string>{"a", "c", "b"}));
  const auto one = select(pool, {1, 1, 1});
  EXPECT_EQ(one.ids, std::vector<std::string>{"a"});
  EXPECT_EQ(one.reserve, (std::vector<std::string>{"c", "b"}));
}

TEST(Select, AffineInvariance) {
  Rng rng(77);
  for (int t = 0; t < 50; ++t) {
    auto pool = random_pool(rng, 200);
    const auto base = select(pool, {60, 1, 1});
    const double a1 = rng.uniform(0.1, 10), b1 = rng.uniform(-50, 50);
    const double a2 = rng.uniform(0.1, 10), b2 = rng.uniform(-5, 5);
    for (auto& c : pool) {
      c.scores.align_score = a1 * c.scores.align_score + b1;
      c.scores.mean_k_dist = a2 * c.scores.mean_k_dist + b2;
    }
    EXPECT_EQ(select(pool, {60, 1, 1}).ids, base.ids) << "pool " << t;
  }
}

TEST(Select, MonotoneSubsets) {
  Rng rng(3);
  const auto pool = random_pool(rng, 1000);
  const auto s100 = select(pool, {100, 1, 1}), s420 = select(pool, {420, 1, 1}), s1000 = select(pool, {1000, 1, 1});
  EXPECT_TRUE(std::equal(s100.ids.begin(), s100.ids.end(), s420.ids.begin()));
  EXPECT_TRUE(std::equal(s420.ids.begin(), s420.ids.end(), s1000.ids.begin()));
}

TEST(Select, ConstantColumn) {
  std::vector<ScoredCandidate> pool = {{"x", {20, 0.3, 0.3, 3}}, {"y", {25, 0.3, 0.3, 3}}};
  EXPECT_EQ(select(pool, {1, 1, 1}).ids, std::vector<std::string>{"y"});
  EXPECT_EQ(z_scores({4, 4, 4}), (std::vector<double>{0, 0, 0}));
}

TEST(Select, JsonRoundTrip) {
  Rng rng(9);
  const auto s = select(random_pool(rng, 30), {10, 1, 1});
  EXPECT_EQ(to_json(selected_from_json(to_json(s))), to_json(s));
}

TEST(ScoresCsv, RoundTripExact) {
  Rng rng(4);
  const auto pool = random_pool(rng, 25);
  const auto back = parse_scores_csv(scores_csv(pool));
  ASSERT_EQ(back.size(), pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    EXPECT_EQ(back[i].candidate_id, pool[i].candidate_id);
    EXPECT_EQ(back[i].scores.align_score, pool[i].scores.align_score);
    EXPECT_EQ(back[i].scores.mean_k_dist, pool[i].scores.mean_k_dist);
  }
}

TEST(Report, StatsRules) {
  const auto s = summarize({1, 2, 3, 4});
  EXPECT_EQ(s.median, 2.5);
  EXPECT_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.std, std::sqrt(5.0 / 3.0), 1e-12);
  const auto same = summarize({7, 7, 7});
  EXPECT_EQ(same.std, 0.0);
  EXPECT_EQ(same.median, 7.0);
  EXPECT_EQ(summarize({3}).std, 0.0);
}

TEST(Report, MarkdownLayout) {
  const auto r = variant_report({{"small", {{26.0, 0.21, 0.22, 3}, {27.0, 0.23, 0.24, 3}}}}, "Bucket");
  const auto md = to_markdown(r);
  EXPECT_EQ(md.substr(0, md.find('\n')),
            "| Bucket | n | CLIPScore mean ± std | CLIPScore median | min_dist mean | mean_k_dist mean | mean_k_dist med. |");
  EXPECT_NE(md.find("| small | 2 | 26.5000 ± 0.7071 | 26.5000 | 0.2200 | 0.2300 | 0.2300 |"), std::string::npos);
  EXPECT_THROW(variant_report({{"empty", {}}}), Error);
}

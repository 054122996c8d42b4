// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <future>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "defectforge/error.hpp"
#include "defectforge/image.hpp"
#include "defectforge/protocol.hpp"

namespace defectforge {

/// Cosine similarity, accumulated in double in index order.
inline double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::InvalidArgument, "embedding dimensions differ");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na <= 0 || nb <= 0) throw Error(ErrorKind::InvalidArgument, "zero embedding");
  return dot / std::sqrt(na * nb);
}

/// 1 - cosine, clamped to [0, 2].
inline double embedding_distance(std::span<const float> a, std::span<const float> b) {
  return std::clamp(1.0 - cosine_similarity(a, b), 0.0, 2.0);
}

/// 100 * max(0, cosine).
inline double align_score(std::span<const float> image_emb, std::span<const float> text_emb) {
  return 100.0 * std::max(0.0, cosine_similarity(image_emb, text_emb));
}

struct KnnResult {
  double min_dist = 0;
  double mean_k_dist = 0;
};

/// Minimum distance and mean of the k smallest distances to the references.
/// The k smallest are summed in ascending order, so the result does not
/// depend on reference order.
inline KnnResult knn_distances(std::span<const float> candidate, const std::vector<std::vector<float>>& references,
                               int k = 3) {
  if (k < 1) throw Error(ErrorKind::InvalidArgument, "k must be >= 1");
  if (references.size() < static_cast<std::size_t>(k)) {
    throw Error(ErrorKind::TooFewReferences,
                std::to_string(references.size()) + " references for k=" + std::to_string(k));
  }
  std::vector<double> d;
  d.reserve(references.size());
  for (const auto& r : references) d.push_back(embedding_distance(candidate, r));
  std::partial_sort(d.begin(), d.begin() + k, d.end());
  double sum = 0;
  for (int i = 0; i < k; ++i) sum += d[static_cast<std::size_t>(i)];
  return {d[0], sum / k};
}

struct MetricScores {
  double align_score = 0;
  double min_dist = 0;
  double mean_k_dist = 0;
  int k = 3;
};

struct ScoredCandidate {
  std::string candidate_id;
  MetricScores scores;
};

using IndexedImageLoader = std::function<Image(std::size_t)>;

struct ScoringConfig {
  int k = 3;
  int concurrency = 4;
};

namespace detail {

template <typename Fn>
void run_windowed(std::size_t n, int concurrency, Fn fn) {
  const std::size_t window = static_cast<std::size_t>(std::max(1, concurrency));
  for (std::size_t start = 0; start < n; start += window) {
    std::vector<std::future<void>> inflight;
    for (std::size_t i = start; i < std::min(n, start + window); ++i) {
      inflight.push_back(std::async(window == 1 ? std::launch::deferred : std::launch::async, fn, i));
    }
    for (auto& f : inflight) f.get();
  }
}

}  // namespace detail

/// Embeds the references once, then embeds and aligns every candidate.
/// Backend calls: |refs| + |candidates| embeds, |candidates| aligns.
inline std::vector<ScoredCandidate> score_pool(const std::vector<std::string>& candidate_ids,
                                               const IndexedImageLoader& load_candidate, std::size_t reference_count,
                                               const IndexedImageLoader& load_reference, const std::string& prompt,
                                               Backend& backend, const ScoringConfig& cfg = {}) {
  if (reference_count == 0) throw Error(ErrorKind::TooFewReferences, "no reference patches");
  if (reference_count < static_cast<std::size_t>(cfg.k)) {
    throw Error(ErrorKind::TooFewReferences,
                std::to_string(reference_count) + " references for k=" + std::to_string(cfg.k));
  }
  std::vector<std::vector<float>> refs(reference_count);
  detail::run_windowed(reference_count, cfg.concurrency, [&](std::size_t i) { refs[i] = backend.embed(load_reference(i)); });
  std::vector<ScoredCandidate> out(candidate_ids.size());
  detail::run_windowed(candidate_ids.size(), cfg.concurrency, [&](std::size_t i) {
    const Image img = load_candidate(i);
    const auto emb = backend.embed(img);
    const double a = backend.align(img, prompt);
    const auto knn = knn_distances(emb, refs, cfg.k);
    out[i] = {candidate_ids[i], {a, knn.min_dist, knn.mean_k_dist, cfg.k}};
  });
  return out;
}

// ---------------------------------------------------------------------------
// Selection

struct SelectionPolicy {
  int target_count = 420;
  double w_align = 1.0;
  double w_dist = 1.0;
};

struct SelectedSet {
  std::vector<std::string> ids;        // rank order, best first
  std::vector<double> composite;       // parallel to ids
  std::vector<std::string> reserve;    // unselected, rank order
  SelectionPolicy policy;
};

/// Population z-scores; a constant column maps to 0.
inline std::vector<double> z_scores(const std::vector<double>& v) {
  std::vector<double> z(v.size(), 0.0);
  if (v.empty()) return z;
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(v.size()));
  if (sd == 0) return z;
  for (std::size_t i = 0; i < v.size(); ++i) z[i] = (v[i] - mean) / sd;
  return z;
}

/// Full ranking by composite = w_align*z(align) - w_dist*z(mean_k_dist),
/// descending; ties by lower min_dist, then candidate id.
inline std::vector<std::size_t> rank_candidates(const std::vector<ScoredCandidate>& pool, const SelectionPolicy& p,
                                                std::vector<double>* composite_out = nullptr) {
  std::vector<double> align, dist;
  for (const auto& c : pool) {
    align.push_back(c.scores.align_score);
    dist.push_back(c.scores.mean_k_dist);
  }
  const auto za = z_scores(align), zd = z_scores(dist);
  std::vector<double> comp(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) comp[i] = p.w_align * za[i] - p.w_dist * zd[i];
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (comp[a] != comp[b]) return comp[a] > comp[b];
    if (pool[a].scores.min_dist != pool[b].scores.min_dist) return pool[a].scores.min_dist < pool[b].scores.min_dist;
    return pool[a].candidate_id < pool[b].candidate_id;
  });
  if (composite_out) *composite_out = std::move(comp);
  return order;
}

inline SelectedSet select(const std::vector<ScoredCandidate>& pool, const SelectionPolicy& policy) {
  if (policy.target_count < 0 || static_cast<std::size_t>(policy.target_count) > pool.size()) {
    throw Error(ErrorKind::TargetExceedsPool, "target " + std::to_string(policy.target_count) + " exceeds pool of " +
                                                  std::to_string(pool.size()));
  }
  std::vector<double> comp;
  const auto order = rank_candidates(pool, policy, &comp);
  SelectedSet s;
  s.policy = policy;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (r < static_cast<std::size_t>(policy.target_count)) {
      s.ids.push_back(pool[order[r]].candidate_id);
      s.composite.push_back(comp[order[r]]);
    } else {
      s.reserve.push_back(pool[order[r]].candidate_id);
    }
  }
  return s;
}

inline nlohmann::json to_json(const SelectedSet& s) {
  return {{"target_count", s.policy.target_count},
          {"weights", {{"align", s.policy.w_align}, {"dist", s.policy.w_dist}}},
          {"normalization", "z-score"},
          {"selected", s.ids},
          {"composite", s.composite},
          {"reserve", s.reserve}};
}

inline SelectedSet selected_from_json(const nlohmann::json& j) {
  SelectedSet s;
  s.policy.target_count = j.at("target_count").get<int>();
  s.policy.w_align = j.at("weights").at("align").get<double>();
  s.policy.w_dist = j.at("weights").at("dist").get<double>();
  s.ids = j.at("selected").get<std::vector<std::string>>();
  s.composite = j.at("composite").get<std::vector<double>>();
  s.reserve = j.at("reserve").get<std::vector<std::string>>();
  return s;
}

// ---------------------------------------------------------------------------
// Score tables

namespace detail {

inline std::string fmt_double(double v, const char* spec = "%.17g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace detail

inline std::string scores_csv(const std::vector<ScoredCandidate>& scored) {
  std::string out = "candidate_id,align_score,min_dist,mean_k_dist\n";
  for (const auto& s : scored) {
    out += s.candidate_id + "," + detail::fmt_double(s.scores.align_score) + "," +
           detail::fmt_double(s.scores.min_dist) + "," + detail::fmt_double(s.scores.mean_k_dist) + "\n";
  }
  return out;
}

inline std::vector<ScoredCandidate> parse_scores_csv(const std::string& text, int k = 3) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line.rfind("candidate_id,align_score,min_dist,mean_k_dist", 0) != 0) {
    throw Error(ErrorKind::InvalidArgument, "scores CSV header mismatch");
  }
  std::vector<ScoredCandidate> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 4) throw Error(ErrorKind::InvalidArgument, "bad scores row: " + line);
    out.push_back({f[0], {std::stod(f[1]), std::stod(f[2]), std::stod(f[3]), k}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Variant reports

struct SummaryStats {
  double mean = 0;
  double std = 0;  // sample (n-1); 0 for n = 1
  double median = 0;
};

inline SummaryStats summarize(std::vector<double> v) {
  if (v.empty()) throw Error(ErrorKind::InvalidArgument, "empty group");
  SummaryStats s;
  const double n = static_cast<double>(v.size());
  for (double x : v) s.mean += x;
  s.mean /= n;
  if (v.size() > 1) {
    double ss = 0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / (n - 1));
  }
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  s.median = v.size() % 2 ? v[m] : (v[m - 1] + v[m]) / 2.0;
  return s;
}

struct VariantRow {
  std::string group;
  int n = 0;
  SummaryStats align;
  SummaryStats min_dist;
  SummaryStats mean_k_dist;
};

struct VariantReport {
  std::string group_label = "Group";
  std::vector<VariantRow> rows;
};

/// Groups are reported in the given order.
inline VariantReport variant_report(const std::vector<std::pair<std::string, std::vector<MetricScores>>>& groups,
                                    std::string group_label = "Group") {
  VariantReport r;
  r.group_label = std::move(group_label);
  for (const auto& [name, scores] : groups) {
    if (scores.empty()) throw Error(ErrorKind::InvalidArgument, "group '" + name + "' is empty", name);
    std::vector<double> a, mn, mk;
    for (const auto& s : scores) {
      a.push_back(s.align_score);
      mn.push_back(s.min_dist);
      mk.push_back(s.mean_k_dist);
    }
    r.rows.push_back({name, static_cast<int>(scores.size()), summarize(a), summarize(mn), summarize(mk)});
  }
  return r;
}

inline constexpr std::array<std::string_view, 6> kReportColumns = {
    "n", "CLIPScore mean ± std", "CLIPScore median", "min_dist mean", "mean_k_dist mean", "mean_k_dist med."};

inline std::string to_markdown(const VariantReport& r) {
  std::string out = "| " + r.group_label + " |";
  for (auto c : kReportColumns) out += " " + std::string(c) + " |";
  out += "\n|---|";
  for (std::size_t i = 0; i < kReportColumns.size(); ++i) out += "---|";
  out += "\n";
  const auto f = [](double v) { return detail::fmt_double(v, "%.4f"); };
  for (const auto& row : r.rows) {
    out += "| " + row.group + " | " + std::to_string(row.n) + " | " + f(row.align.mean) + " ± " + f(row.align.std) +
           " | " + f(row.align.median) + " | " + f(row.min_dist.mean) + " | " + f(row.mean_k_dist.mean) + " | " +
           f(row.mean_k_dist.median) + " |\n";
  }
  return out;
}

/// Full-precision companion to the Markdown table.
inline std::string to_csv(const VariantReport& r) {
  std::string out = "group,n,align_mean,align_std,align_median,min_dist_mean,mean_k_dist_mean,mean_k_dist_median\n";
  for (const auto& row : r.rows) {
    out += row.group + "," + std::to_string(row.n) + "," + detail::fmt_double(row.align.mean) + "," +
           detail::fmt_double(row.align.std) + "," + detail::fmt_double(row.align.median) + "," +
           detail::fmt_double(row.min_dist.mean) + "," + detail::fmt_double(row.mean_k_dist.mean) + "," +
           detail::fmt_double(row.mean_k_dist.median) + "\n";
  }
  return out;
}

}  // namespace defectforge

// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "defectforge/compositor.hpp"
#include "defectforge/dataset.hpp"
#include "defectforge/error.hpp"
#include "defectforge/hash.hpp"
#include "defectforge/png_io.hpp"
#include "defectforge/rng.hpp"

namespace defectforge {

struct RegimeSpec {
  int real_pct = 100;
  int synth_pct = 0;
  std::uint64_t seed = 0;
  std::string label;  // "75/25"

  void validate() const {
    if (real_pct < 0 || real_pct > 100) throw Error(ErrorKind::InvalidArgument, "real_pct must be in [0, 100]");
    if (synth_pct < 0) throw Error(ErrorKind::InvalidArgument, "synth_pct must be >= 0");
  }
};

/// The seven real/synthetic mixtures: real-only, synthetic-only, three mixed
/// and two unions.
inline std::vector<std::pair<int, int>> standard_regimes() {
  return {{100, 0}, {0, 100}, {75, 25}, {50, 50}, {25, 75}, {100, 100}, {100, 200}};
}

inline std::string regime_label(int real_pct, int synth_pct) {
  return std::to_string(real_pct) + "/" + std::to_string(synth_pct);
}

/// Directory name for one manifest, e.g. "r75_s25_seed7".
inline std::string regime_dir_name(const RegimeSpec& s) {
  return "r" + std::to_string(s.real_pct) + "_s" + std::to_string(s.synth_pct) + "_seed" + std::to_string(s.seed);
}

/// round(pct/100 * r_full), halves away from zero, in exact integer arithmetic.
inline int regime_count(int pct, int r_full) {
  if (pct < 0 || r_full < 0) throw Error(ErrorKind::InvalidArgument, "negative regime count input");
  return static_cast<int>((static_cast<long long>(pct) * r_full + 50) / 100);
}

/// Synthetic candidates available to the mixtures: the selected set in rank
/// order, then the unselected candidates that were composed as a reserve.
struct SyntheticSupply {
  std::vector<std::string> ranked;
  std::vector<std::string> reserve;

  std::size_t size() const { return ranked.size() + reserve.size(); }
};

struct TrainingManifest {
  RegimeSpec regime;
  int r_full = 0;
  std::vector<std::string> real_ids;
  std::vector<std::string> synthetic_ids;
};

namespace detail {

inline constexpr std::uint64_t kRealStream = 0x7ea1;
inline constexpr std::uint64_t kReserveStream = 0x5e7e;

inline std::vector<std::string> seeded_order(std::vector<std::string> ids, std::uint64_t seed, std::uint64_t stream) {
  std::sort(ids.begin(), ids.end());
  Rng rng(derive_seed(seed, {stream}));
  rng.shuffle(ids);
  return ids;
}

inline void require_unique(const std::vector<std::string>& ids, const char* what) {
  std::set<std::string> s(ids.begin(), ids.end());
  if (s.size() != ids.size()) throw Error(ErrorKind::DuplicateId, std::string(what) + " contains duplicate ids");
}

}  // namespace detail

/// Real items are a prefix of one seeded permutation of the real split, so
/// for a fixed seed smaller real budgets are subsets of larger ones.
/// Synthetic items come from the ranked list first, then from a seeded
/// permutation of the reserve.
inline TrainingManifest compose(const std::vector<std::string>& real_split, const SyntheticSupply& supply,
                                const RegimeSpec& spec) {
  spec.validate();
  detail::require_unique(real_split, "real split");
  std::vector<std::string> all_synth = supply.ranked;
  all_synth.insert(all_synth.end(), supply.reserve.begin(), supply.reserve.end());
  detail::require_unique(all_synth, "synthetic supply");

  TrainingManifest m;
  m.regime = spec;
  if (m.regime.label.empty()) m.regime.label = regime_label(spec.real_pct, spec.synth_pct);
  m.r_full = static_cast<int>(real_split.size());
  const int n_real = regime_count(spec.real_pct, m.r_full);
  const int n_synth = regime_count(spec.synth_pct, m.r_full);
  if (static_cast<std::size_t>(n_synth) > supply.size()) {
    throw Error(ErrorKind::InsufficientSyntheticPool,
                "regime " + m.regime.label + " needs " + std::to_string(n_synth) + " synthetic images, pool has " +
                    std::to_string(supply.size()),
                m.regime.label);
  }
  const auto order = detail::seeded_order(real_split, spec.seed, detail::kRealStream);
  m.real_ids.assign(order.begin(), order.begin() + n_real);
  const std::size_t from_ranked = std::min<std::size_t>(static_cast<std::size_t>(n_synth), supply.ranked.size());
  m.synthetic_ids.assign(supply.ranked.begin(), supply.ranked.begin() + static_cast<std::ptrdiff_t>(from_ranked));
  if (static_cast<std::size_t>(n_synth) > from_ranked) {
    const auto reserve = detail::seeded_order(supply.reserve, spec.seed, detail::kReserveStream);
    m.synthetic_ids.insert(m.synthetic_ids.end(), reserve.begin(),
                           reserve.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(n_synth) - from_ranked));
  }
  return m;
}

/// All standard regimes for each of exactly three seeds, seed-major.
inline std::vector<TrainingManifest> emit_regime_suite(const std::vector<std::string>& real_split,
                                                       const SyntheticSupply& supply,
                                                       const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() != 3) throw Error(ErrorKind::InvalidArgument, "the regime suite takes exactly 3 seeds");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != 3) {
    throw Error(ErrorKind::InvalidArgument, "regime suite seeds must differ");
  }
  std::vector<TrainingManifest> out;
  for (auto seed : seeds) {
    for (const auto& [r, s] : standard_regimes()) out.push_back(compose(real_split, supply, {r, s, seed, regime_label(r, s)}));
  }
  return out;
}

inline nlohmann::json to_json(const TrainingManifest& m) {
  return {{"label", m.regime.label},
          {"real_pct", m.regime.real_pct},
          {"synth_pct", m.regime.synth_pct},
          {"seed", m.regime.seed},
          {"r_full", m.r_full},
          {"counts", {{"real", m.real_ids.size()}, {"synthetic", m.synthetic_ids.size()}}},
          {"real_ids", m.real_ids},
          {"synthetic_ids", m.synthetic_ids}};
}

inline TrainingManifest manifest_from_json(const nlohmann::json& j) {
  TrainingManifest m;
  m.regime = {j.at("real_pct").get<int>(), j.at("synth_pct").get<int>(), j.at("seed").get<std::uint64_t>(),
              j.at("label").get<std::string>()};
  m.r_full = j.at("r_full").get<int>();
  m.real_ids = j.at("real_ids").get<std::vector<std::string>>();
  m.synthetic_ids = j.at("synthetic_ids").get<std::vector<std::string>>();
  if (j.at("counts").at("real").get<std::size_t>() != m.real_ids.size() ||
      j.at("counts").at("synthetic").get<std::size_t>() != m.synthetic_ids.size()) {
    throw Error(ErrorKind::InvalidArgument, "manifest counts do not match its id lists");
  }
  return m;
}

inline std::string ids_hash(const std::vector<std::string>& ids) {
  Sha256 h;
  for (const auto& id : ids) h.update(id).update("\n");
  return to_hex(h.finish());
}

// ---------------------------------------------------------------------------
// Export

/// Where each real item comes from. The COCO subset of a regime holds every
/// source image of its real items with all of that image's annotations, so
/// no defect in an exported image is left unlabeled.
struct RealCatalog {
  const Dataset* dataset = nullptr;
  std::map<std::string, int> image_of;  // real item id -> image id
};

/// Composed images by candidate id; file paths are relative to image_dir.
struct SyntheticCatalog {
  std::filesystem::path image_dir;
  std::map<std::string, ComposedEntry> entries;
};

namespace detail {

inline std::string relative_path(const std::filesystem::path& target, const std::filesystem::path& from_dir) {
  const auto t = std::filesystem::absolute(target).lexically_normal();
  const auto f = std::filesystem::absolute(from_dir).lexically_normal();
  return t.lexically_relative(f).generic_string();
}

}  // namespace detail

/// Writes <out_dir>/manifest.json and <out_dir>/annotations.json. Image paths
/// in the COCO file are relative to out_dir.
inline void export_regime(const TrainingManifest& m, const RealCatalog& real, const SyntheticCatalog& synth,
                          const std::filesystem::path& out_dir) {
  if (!real.dataset) throw Error(ErrorKind::InvalidArgument, "real catalog has no dataset");
  const Dataset& ds = *real.dataset;
  std::set<int> image_ids;
  for (const auto& id : m.real_ids) {
    const auto it = real.image_of.find(id);
    if (it == real.image_of.end()) throw Error(ErrorKind::DanglingReference, "unknown real item " + id, id);
    image_ids.insert(it->second);
  }
  std::vector<ComposedEntry> entries;
  for (int image_id : image_ids) {
    ComposedEntry e;
    e.record = ds.image(image_id);
    e.record.file_path = detail::relative_path(ds.image_path(e.record), out_dir);
    for (const auto* a : ds.annotations_of(image_id)) e.annotations.push_back(*a);
    std::sort(e.annotations.begin(), e.annotations.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    entries.push_back(std::move(e));
  }
  for (const auto& id : m.synthetic_ids) {
    const auto it = synth.entries.find(id);
    if (it == synth.entries.end()) throw Error(ErrorKind::DanglingReference, "unknown synthetic item " + id, id);
    ComposedEntry e = it->second;
    e.record.file_path = detail::relative_path(synth.image_dir / e.record.file_path, out_dir);
    entries.push_back(std::move(e));
  }
  export_coco(entries, out_dir, "annotations.json", ds.categories);
  write_file_atomic(out_dir / "manifest.json", to_json(m).dump(1) + "\n");
}

/// regimes.lock: seeds, R_full and hashes of the inputs and every manifest.
inline nlohmann::json regimes_lock(const std::vector<TrainingManifest>& suite, const std::vector<std::string>& real_split,
                                   const SyntheticSupply& supply) {
  nlohmann::json manifests = nlohmann::json::array();
  std::set<std::uint64_t> seeds;
  for (const auto& m : suite) {
    seeds.insert(m.regime.seed);
    manifests.push_back({{"name", regime_dir_name(m.regime)}, {"sha256", sha256_hex(to_json(m).dump(1) + "\n")}});
  }
  std::vector<std::string> sorted_real = real_split;
  std::sort(sorted_real.begin(), sorted_real.end());
  return {{"seeds", seeds},
          {"r_full", real_split.size()},
          {"real_split_sha256", ids_hash(sorted_real)},
          {"ranked_sha256", ids_hash(supply.ranked)},
          {"reserve_sha256", ids_hash(supply.reserve)},
          {"manifests", manifests}};
}

}  // namespace defectforge

// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "defectforge/compositor.hpp"
#include "defectforge/dataset.hpp"
#include "defectforge/error.hpp"
#include "defectforge/generation.hpp"
#include "defectforge/http_backend.hpp"
#include "defectforge/masks.hpp"
#include "defectforge/ranking.hpp"

namespace defectforge {

struct PromptConfig {
  int batch_size = 4;
  int max_tags = 15;
  double min_fraction = 0.2;
  std::filesystem::path stoplist;  // empty: built-in list
  std::filesystem::path lexicon;
  std::filesystem::path overrides;
};

struct MaskConfig {
  int per_resolution = 500;
  PlacementMode placement = PlacementMode::HeatmapWeighted;
  TransformConfig transform;
  int max_attempts = 100;
  int heatmap_downscale = 8;
};

struct ComposeConfig {
  RefineMode refine = RefineMode::SegmentBackend;
  std::string text_cue = "pitting defect";
  double sigma = 2.0;
  int reserve = 100;  // unselected candidates composed for large synthetic budgets
};

enum class RealSet { Patches, Images };

struct RegimeConfig {
  std::vector<std::uint64_t> seeds = {7, 8, 9};
  RealSet real_set = RealSet::Patches;
};

struct Profile {
  std::string name = "bsdata";
  std::vector<Resolution> resolutions;  // empty: keep all
  std::array<double, 3> split = {0.65, 0.15, 0.20};
  PromptConfig prompt;
  MaskConfig masks;
  int generate_count = 1000;
  int steps = kDefaultSteps;
  int k = 3;
  SelectionPolicy selection;
  ComposeConfig compose;
  RegimeConfig regimes;
};

struct BackendConfig {
  std::string url;
  int timeout_s = 120;
  RetryPolicy retry{3, std::chrono::milliseconds(500), 2.0};
  int concurrency = 4;
};

struct Config {
  std::uint64_t seed = 7;
  std::filesystem::path dataset_root;
  std::filesystem::path annotations;  // absolute once loaded
  BackendConfig backend;
  Profile profile;
  nlohmann::json resolved;  // effective settings, recorded in stage manifests
};

namespace detail {

/// Built-in settings of the named profile, as a config fragment.
inline nlohmann::json profile_defaults(const std::string& name) {
  nlohmann::json p = {
      {"resolutions", {{1130, 460}, {1540, 645}}},
      {"split", {0.65, 0.15, 0.20}},
      {"prompt",
       {{"batch_size", 4}, {"max_tags", 15}, {"min_fraction", 0.2}, {"stoplist", ""}, {"lexicon", ""}, {"overrides", ""}}},
      {"masks",
       {{"per_resolution", 500},
        {"placement", "heatmap-weighted"},
        {"scale_min", 0.8},
        {"scale_max", 1.2},
        {"max_shift", 50},
        {"max_attempts", 100},
        {"heatmap_downscale", 8}}},
      {"generate", {{"count", 1000}, {"steps", kDefaultSteps}}},
      {"score", {{"k", 3}}},
      {"select", {{"target", 420}, {"w_align", 1.0}, {"w_dist", 1.0}}},
      {"compose", {{"refine", "segment-backend"}, {"text_cue", "pitting defect"}, {"sigma", 2.0}, {"reserve", 100}}},
      {"regimes", {{"seeds", {7, 8, 9}}, {"real_set", "patches"}}},
  };
  if (name == "msd") {
    p["resolutions"] = {{1920, 1080}};
    p["masks"]["placement"] = "full-area";
    p["select"]["target"] = 520;
    p["compose"]["refine"] = "inpaint-mask";
    p["compose"]["text_cue"] = "scratch defect";
  } else if (name != "bsdata" && name != "custom") {
    throw Error(ErrorKind::ConfigError, "unknown profile '" + name + "' (bsdata, msd or custom)", name);
  }
  return p;
}

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorKind::ConfigError, where + " must be an object", where);
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw Error(ErrorKind::ConfigError, "unknown key '" + k + "' in " + where, where + "." + k);
  }
}

template <class T>
T get(const nlohmann::json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ConfigError, where + "." + key + ": " + e.what(), where + "." + key);
  }
}

inline std::filesystem::path resolve_path(const std::string& s, const std::filesystem::path& base) {
  if (s.empty()) return {};
  const std::filesystem::path p(s);
  return (p.is_absolute() ? p : base / p).lexically_normal();
}

inline void require(bool ok, const std::string& what, const std::string& subject) {
  if (!ok) throw Error(ErrorKind::ConfigError, what, subject);
}

inline Profile parse_profile(const std::string& name, const nlohmann::json& j, const std::filesystem::path& base) {
  const std::string w = "profiles." + name;
  check_keys(j, {"resolutions", "split", "prompt", "masks", "generate", "score", "select", "compose", "regimes"}, w);
  Profile p;
  p.name = name;
  for (const auto& r : get<std::vector<std::array<int, 2>>>(j, "resolutions", w)) {
    require(r[0] > 0 && r[1] > 0, w + ".resolutions: sizes must be positive", w + ".resolutions");
    p.resolutions.push_back({r[0], r[1]});
  }
  p.split = get<std::array<double, 3>>(j, "split", w);
  require(p.split[0] >= 0 && p.split[1] >= 0 && p.split[2] >= 0 &&
              std::abs(p.split[0] + p.split[1] + p.split[2] - 1.0) <= 1e-9,
          w + ".split must be three non-negative fractions summing to 1", w + ".split");

  const auto& pr = j.at("prompt");
  check_keys(pr, {"batch_size", "max_tags", "min_fraction", "stoplist", "lexicon", "overrides"}, w + ".prompt");
  p.prompt.batch_size = get<int>(pr, "batch_size", w + ".prompt");
  p.prompt.max_tags = get<int>(pr, "max_tags", w + ".prompt");
  p.prompt.min_fraction = get<double>(pr, "min_fraction", w + ".prompt");
  require(p.prompt.batch_size >= 1 && p.prompt.max_tags >= 1, w + ".prompt: batch_size and max_tags must be >= 1",
          w + ".prompt");
  require(p.prompt.min_fraction >= 0 && p.prompt.min_fraction <= 1, w + ".prompt.min_fraction outside [0,1]",
          w + ".prompt.min_fraction");
  p.prompt.stoplist = resolve_path(get<std::string>(pr, "stoplist", w + ".prompt"), base);
  p.prompt.lexicon = resolve_path(get<std::string>(pr, "lexicon", w + ".prompt"), base);
  p.prompt.overrides = resolve_path(get<std::string>(pr, "overrides", w + ".prompt"), base);
  for (const auto* path : {&p.prompt.stoplist, &p.prompt.lexicon, &p.prompt.overrides}) {
    require(path->empty() || std::filesystem::exists(*path), "missing file " + path->string(), path->string());
  }

  const auto& m = j.at("masks");
  const std::string wm = w + ".masks";
  check_keys(m, {"per_resolution", "placement", "scale_min", "scale_max", "max_shift", "max_attempts", "heatmap_downscale"},
             wm);
  p.masks.per_resolution = get<int>(m, "per_resolution", wm);
  try {
    p.masks.placement = parse_placement(get<std::string>(m, "placement", wm));
  } catch (const Error& e) {
    throw Error(ErrorKind::ConfigError, e.what(), wm + ".placement");
  }
  p.masks.transform = {get<double>(m, "scale_min", wm), get<double>(m, "scale_max", wm), get<int>(m, "max_shift", wm)};
  p.masks.max_attempts = get<int>(m, "max_attempts", wm);
  p.masks.heatmap_downscale = get<int>(m, "heatmap_downscale", wm);
  require(p.masks.per_resolution >= 1 && p.masks.max_attempts >= 1 && p.masks.heatmap_downscale >= 1,
          wm + ": counts must be >= 1", wm);
  try {
    p.masks.transform.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::ConfigError, e.what(), wm);
  }

  const auto& g = j.at("generate");
  check_keys(g, {"count", "steps"}, w + ".generate");
  p.generate_count = get<int>(g, "count", w + ".generate");
  p.steps = get<int>(g, "steps", w + ".generate");
  require(p.generate_count >= 1 && p.steps >= 1, w + ".generate: count and steps must be >= 1", w + ".generate");

  check_keys(j.at("score"), {"k"}, w + ".score");
  p.k = get<int>(j.at("score"), "k", w + ".score");
  require(p.k >= 1, w + ".score.k must be >= 1", w + ".score.k");

  const auto& s = j.at("select");
  check_keys(s, {"target", "w_align", "w_dist"}, w + ".select");
  p.selection = {get<int>(s, "target", w + ".select"), get<double>(s, "w_align", w + ".select"),
                 get<double>(s, "w_dist", w + ".select")};
  require(p.selection.target_count >= 1, w + ".select.target must be >= 1", w + ".select.target");

  const auto& c = j.at("compose");
  check_keys(c, {"refine", "text_cue", "sigma", "reserve"}, w + ".compose");
  try {
    p.compose.refine = parse_refine_mode(get<std::string>(c, "refine", w + ".compose"));
  } catch (const Error& e) {
    throw Error(ErrorKind::ConfigError, e.what(), w + ".compose.refine");
  }
  p.compose.text_cue = get<std::string>(c, "text_cue", w + ".compose");
  p.compose.sigma = get<double>(c, "sigma", w + ".compose");
  p.compose.reserve = get<int>(c, "reserve", w + ".compose");
  require(p.compose.sigma > 0 && p.compose.reserve >= 0, w + ".compose: sigma > 0 and reserve >= 0 required",
          w + ".compose");

  const auto& r = j.at("regimes");
  check_keys(r, {"seeds", "real_set"}, w + ".regimes");
  p.regimes.seeds = get<std::vector<std::uint64_t>>(r, "seeds", w + ".regimes");
  require(p.regimes.seeds.size() == 3 &&
              std::set<std::uint64_t>(p.regimes.seeds.begin(), p.regimes.seeds.end()).size() == 3,
          w + ".regimes.seeds must hold 3 distinct seeds", w + ".regimes.seeds");
  const auto rs = get<std::string>(r, "real_set", w + ".regimes");
  require(rs == "patches" || rs == "images", w + ".regimes.real_set must be 'patches' or 'images'",
          w + ".regimes.real_set");
  p.regimes.real_set = rs == "patches" ? RealSet::Patches : RealSet::Images;
  return p;
}

}  // namespace detail

/// Command-line values that override the config document.
struct ConfigOverrides {
  std::optional<std::string> profile;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> backend_url;
  std::optional<int> target;
  std::optional<std::filesystem::path> dataset;  // COCO annotation file; its directory is the root
};

/// Reads the config document (or none: built-in defaults), merges the chosen
/// profile over its built-in settings and applies overrides. Relative paths
/// resolve against the config file's directory.
inline Config load_config(const std::optional<std::filesystem::path>& path, const ConfigOverrides& ov = {}) {
  nlohmann::json doc = nlohmann::json::object();
  std::filesystem::path base = std::filesystem::current_path();
  if (path) {
    std::ifstream in(*path);
    if (!in) throw Error(ErrorKind::ConfigError, "cannot read config " + path->string(), path->string());
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::ConfigError, "config is not valid JSON: " + std::string(e.what()), path->string());
    }
    base = std::filesystem::absolute(*path).parent_path();
  }
  detail::check_keys(doc, {"$schema", "seed", "profile", "dataset", "backend", "profiles"}, "config");

  Config cfg;
  cfg.seed = doc.contains("seed") ? detail::get<std::uint64_t>(doc, "seed", "config") : 7;
  if (ov.seed) cfg.seed = *ov.seed;

  if (doc.contains("dataset")) {
    const auto& d = doc.at("dataset");
    detail::check_keys(d, {"root", "annotations"}, "dataset");
    cfg.dataset_root = detail::resolve_path(detail::get<std::string>(d, "root", "dataset"), base);
    cfg.annotations = detail::resolve_path(d.value("annotations", std::string("annotations.json")), cfg.dataset_root);
  }
  if (ov.dataset) {
    cfg.annotations = std::filesystem::absolute(*ov.dataset).lexically_normal();
    cfg.dataset_root = cfg.annotations.parent_path();
  }

  if (doc.contains("backend")) {
    const auto& b = doc.at("backend");
    detail::check_keys(b, {"url", "timeout_s", "max_attempts", "backoff_ms", "concurrency"}, "backend");
    cfg.backend.url = b.value("url", std::string{});
    cfg.backend.timeout_s = b.value("timeout_s", 120);
    cfg.backend.retry.max_attempts = b.value("max_attempts", 3);
    cfg.backend.retry.initial_backoff = std::chrono::milliseconds(b.value("backoff_ms", 500));
    cfg.backend.concurrency = b.value("concurrency", 4);
    detail::require(cfg.backend.timeout_s >= 1 && cfg.backend.retry.max_attempts >= 1 && cfg.backend.concurrency >= 1,
                    "backend: timeout_s, max_attempts and concurrency must be >= 1", "backend");
  }
  if (cfg.backend.url.empty()) {
    if (const char* env = std::getenv("DEFECTFORGE_BACKEND_URL")) cfg.backend.url = env;
  }
  if (ov.backend_url) cfg.backend.url = *ov.backend_url;

  std::string name = doc.value("profile", std::string("bsdata"));
  if (ov.profile) name = *ov.profile;
  nlohmann::json prof = detail::profile_defaults(name);
  if (doc.contains("profiles")) {
    const auto& ps = doc.at("profiles");
    detail::check_keys(ps, {"bsdata", "msd", "custom"}, "profiles");
    if (ps.contains(name)) prof.merge_patch(ps.at(name));
  }
  cfg.profile = detail::parse_profile(name, prof, base);
  if (ov.target) {
    detail::require(*ov.target >= 1, "--target must be >= 1", "target");
    cfg.profile.selection.target_count = *ov.target;
  }
  prof["select"]["target"] = cfg.profile.selection.target_count;
  cfg.resolved = {{"seed", cfg.seed}, {"profile", name}, {"settings", prof}};
  return cfg;
}

}  // namespace defectforge

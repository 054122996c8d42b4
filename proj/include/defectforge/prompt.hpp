// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "defectforge/error.hpp"
#include "defectforge/hash.hpp"
#include "defectforge/protocol.hpp"

namespace defectforge {

/// Lowercase, trim, and collapse inner whitespace.
inline std::string normalize_tag(std::string_view raw) {
  std::string out;
  bool space = false;
  for (char c : raw) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

struct TagFrequency {
  std::map<std::string, int> counts;
  int total_batches = 0;
};

inline nlohmann::json to_json(const TagFrequency& tf) {
  return {{"counts", tf.counts}, {"total_batches", tf.total_batches}};
}

inline TagFrequency tag_frequency_from_json(const nlohmann::json& j) {
  return {j.at("counts").get<std::map<std::string, int>>(), j.at("total_batches").get<int>()};
}

struct TagCollection {
  TagFrequency frequency;
  int backend_calls = 0;
  std::vector<std::string> warnings;  // TagLimitViolation notes
};

/// Folds one batch's raw tag lists into the frequency table: truncate to
/// `max_tags`, normalize, drop duplicates within the batch, count.
inline void accumulate_batch(TagFrequency& tf, const std::vector<std::vector<std::string>>& raw, int max_tags,
                             std::vector<std::string>* warnings = nullptr, int batch_index = 0) {
  std::vector<std::string> flat;
  for (const auto& list : raw) flat.insert(flat.end(), list.begin(), list.end());
  if (static_cast<int>(flat.size()) > max_tags) {
    if (warnings) {
      warnings->push_back("TagLimitViolation: batch " + std::to_string(batch_index) + " returned " +
                          std::to_string(flat.size()) + " tags, truncated to " + std::to_string(max_tags));
    }
    flat.resize(static_cast<std::size_t>(max_tags));
  }
  std::set<std::string> seen;
  for (const auto& t : flat) {
    auto n = normalize_tag(t);
    if (!n.empty() && seen.insert(n).second) ++tf.counts[n];
  }
  ++tf.total_batches;
}

using ImageLoader = std::function<Image(std::size_t)>;

/// Sends the patches to the tagging endpoint in batches of `batch_size`,
/// at most `concurrency` requests in flight.
inline TagCollection collect_tags(std::size_t patch_count, const ImageLoader& load, Backend& backend,
                                  int batch_size = 4, int max_tags = 15, int concurrency = 4) {
  if (batch_size < 1) throw Error(ErrorKind::InvalidArgument, "batch_size must be >= 1");
  const std::size_t batches = (patch_count + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size);
  std::vector<std::vector<std::vector<std::string>>> results(batches);
  auto run_batch = [&](std::size_t b) {
    std::vector<Image> images;
    const std::size_t begin = b * static_cast<std::size_t>(batch_size);
    const std::size_t end = std::min(patch_count, begin + static_cast<std::size_t>(batch_size));
    for (std::size_t i = begin; i < end; ++i) images.push_back(load(i));
    results[b] = backend.tags(images, max_tags);
  };
  const std::size_t window = static_cast<std::size_t>(std::max(1, concurrency));
  for (std::size_t start = 0; start < batches; start += window) {
    std::vector<std::future<void>> inflight;
    for (std::size_t b = start; b < std::min(batches, start + window); ++b) {
      inflight.push_back(std::async(window == 1 ? std::launch::deferred : std::launch::async, run_batch, b));
    }
    for (auto& f : inflight) f.get();
  }
  TagCollection out;
  out.backend_calls = static_cast<int>(batches);
  for (std::size_t b = 0; b < batches; ++b) {
    accumulate_batch(out.frequency, results[b], max_tags, &out.warnings, static_cast<int>(b));
  }
  return out;
}

/// Tags with count / total_batches >= min_fraction that are not stoplisted,
/// by count descending then alphabetically.
inline std::vector<std::string> prune_tags(const TagFrequency& tf, const std::set<std::string>& stoplist,
                                           double min_fraction) {
  if (min_fraction < 0 || min_fraction > 1) throw Error(ErrorKind::InvalidArgument, "min_fraction outside [0,1]");
  std::set<std::string> stop;
  for (const auto& s : stoplist) stop.insert(normalize_tag(s));
  std::vector<std::pair<std::string, int>> kept;
  for (const auto& [tag, count] : tf.counts) {
    if (stop.count(tag)) continue;
    if (tf.total_batches == 0 || static_cast<double>(count) / tf.total_batches < min_fraction) continue;
    kept.emplace_back(tag, count);
  }
  if (kept.empty()) throw Error(ErrorKind::EmptyPromptCandidates, "no tag survives pruning");
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  for (auto& [t, c] : kept) out.push_back(std::move(t));
  return out;
}

enum class TagCategory { Scene, Defect, Texture, Conditions };

inline std::string_view to_string(TagCategory c) {
  switch (c) {
    case TagCategory::Scene: return "scene";
    case TagCategory::Defect: return "defect";
    case TagCategory::Texture: return "texture";
    case TagCategory::Conditions: return "conditions";
  }
  return "conditions";
}

inline TagCategory parse_category(std::string_view s) {
  const auto n = normalize_tag(s);
  if (n == "scene") return TagCategory::Scene;
  if (n == "defect") return TagCategory::Defect;
  if (n == "texture") return TagCategory::Texture;
  if (n == "conditions") return TagCategory::Conditions;
  throw Error(ErrorKind::ConfigError, "unknown tag category '" + std::string(s) + "'");
}

/// Keyword lexicon plus exact-tag overrides. A tag takes the first category,
/// in prompt order, with a keyword occurring in it; uncategorized tags are
/// recording conditions.
struct CategoryLexicon {
  std::map<TagCategory, std::vector<std::string>> keywords;
  std::map<std::string, TagCategory> overrides;

  TagCategory categorize(const std::string& tag) const {
    const auto n = normalize_tag(tag);
    if (auto it = overrides.find(n); it != overrides.end()) return it->second;
    for (auto cat : {TagCategory::Scene, TagCategory::Defect, TagCategory::Texture, TagCategory::Conditions}) {
      auto it = keywords.find(cat);
      if (it == keywords.end()) continue;
      for (const auto& k : it->second) {
        if (n.find(k) != std::string::npos) return cat;
      }
    }
    return TagCategory::Conditions;
  }
};

inline CategoryLexicon default_lexicon() {
  CategoryLexicon lex;
  lex.keywords[TagCategory::Scene] = {" on ", "spindle", "ball screw", "display panel"};
  lex.keywords[TagCategory::Defect] = {"defect", "pit", "scratch", "crack", "dent", "stain", "corrosion", "rust",
                                       "chip", "scuff", "spot"};
  lex.keywords[TagCategory::Texture] = {"texture", "grain", "sheen", "striation", "edges", "glossy", "smooth",
                                        "rough", "reflective", "surface", "orientation", "linear", "metallic"};
  lex.keywords[TagCategory::Conditions] = {"lighting", "photo", "depth of field", "contrast", "noise",
                                           "background", "glow", "shadow", "close-up"};
  lex.overrides["fine texture on smooth surface"] = TagCategory::Texture;
  return lex;
}

/// Generic descriptors that carry no defect information.
inline std::set<std::string> default_stoplist() {
  return {"image", "photo", "photo of", "picture", "close-up", "metal", "metal surface", "surface",
          "texture", "object", "background", "industrial", "defect", "no people", "high quality", "detailed",
          "grayscale", "monochrome", "blurry", "sharp", "macro", "camera", "lighting", "indoor", "outdoor",
          "still life", "nobody", "simple background", "realistic", "glass"};
}

namespace detail {

inline std::vector<std::string> config_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ConfigError, "cannot read " + path.string(), path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(line);
  }
  return out;
}

}  // namespace detail

/// One tag per line; `#` starts a comment.
inline std::set<std::string> load_stoplist(const std::filesystem::path& path) {
  std::set<std::string> out;
  for (const auto& l : detail::config_lines(path)) out.insert(normalize_tag(l));
  return out;
}

/// Lines of `<category><TAB><keyword>`. Keywords keep surrounding spaces
/// after the tab so that " on " style infixes can be expressed.
inline CategoryLexicon load_lexicon(const std::filesystem::path& path) {
  CategoryLexicon lex;
  for (const auto& l : detail::config_lines(path)) {
    const auto tab = l.find('\t');
    if (tab == std::string::npos) throw Error(ErrorKind::ConfigError, "lexicon line without tab: " + l, path.string());
    std::string kw = l.substr(tab + 1);
    std::transform(kw.begin(), kw.end(), kw.begin(), [](unsigned char c) { return std::tolower(c); });
    lex.keywords[parse_category(l.substr(0, tab))].push_back(kw);
  }
  return lex;
}

/// Lines of `<tag><TAB><category>`, applied on top of a lexicon.
inline void load_overrides(const std::filesystem::path& path, CategoryLexicon& lex) {
  for (const auto& l : detail::config_lines(path)) {
    const auto tab = l.find('\t');
    if (tab == std::string::npos) throw Error(ErrorKind::ConfigError, "override line without tab: " + l, path.string());
    lex.overrides[normalize_tag(l.substr(0, tab))] = parse_category(l.substr(tab + 1));
  }
}

struct Prompt {
  std::string text;
  std::vector<std::string> ordered_tags;
  std::string profile;

  std::string hash() const { return sha256_hex(text).substr(0, 16); }
};

inline nlohmann::json to_json(const Prompt& p) {
  return {{"text", p.text}, {"tags", p.ordered_tags}, {"profile", p.profile}, {"hash", p.hash()}};
}

inline Prompt prompt_from_json(const nlohmann::json& j) {
  return {j.at("text").get<std::string>(), j.at("tags").get<std::vector<std::string>>(),
          j.value("profile", std::string{})};
}

/// Orders tags scene, defect, texture, conditions, keeping the incoming
/// (frequency) order within each category, and joins them with ", ".
inline Prompt assemble_prompt(const std::vector<std::string>& tags, const CategoryLexicon& lexicon,
                              std::string profile = {}) {
  if (tags.empty()) throw Error(ErrorKind::EmptyPromptCandidates, "no tags to assemble");
  std::vector<std::pair<int, std::string>> keyed;
  std::set<std::string> seen;
  for (const auto& t : tags) {
    auto n = normalize_tag(t);
    if (n.empty() || !seen.insert(n).second) continue;
    keyed.emplace_back(static_cast<int>(lexicon.categorize(n)), std::move(n));
  }
  std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  Prompt p;
  p.profile = std::move(profile);
  for (auto& [cat, t] : keyed) {
    if (!p.text.empty()) p.text += ", ";
    p.text += t;
    p.ordered_tags.push_back(std::move(t));
  }
  return p;
}

}  // namespace defectforge

// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "defectforge/compositor.hpp"
#include "defectforge/config.hpp"
#include "defectforge/dataset.hpp"
#include "defectforge/generation.hpp"
#include "defectforge/hash.hpp"
#include "defectforge/masks.hpp"
#include "defectforge/mixture.hpp"
#include "defectforge/patches.hpp"
#include "defectforge/png_io.hpp"
#include "defectforge/prompt.hpp"
#include "defectforge/ranking.hpp"

namespace defectforge {

// ---------------------------------------------------------------------------
// Stage graph

struct StageDef {
  std::string_view name;  // subcommand
  std::string_view dir;   // workspace subdirectory
  std::vector<std::string_view> deps;
};

inline const std::vector<StageDef>& stage_graph() {
  static const std::vector<StageDef> g = {
      {"analyze", "analyze", {}},
      {"extract-patches", "patches", {"analyze"}},
      {"build-prompt", "prompt", {"extract-patches"}},
      {"gen-masks", "masks", {"analyze"}},
      {"generate", "generate", {"analyze", "build-prompt", "gen-masks"}},
      {"score", "score", {"build-prompt", "extract-patches", "generate"}},
      {"select", "select", {"score"}},
      {"compose-images", "compose", {"analyze", "generate", "select"}},
      {"regimes", "regimes", {"analyze", "compose-images", "extract-patches"}},
      {"report", "report", {"analyze", "gen-masks", "generate", "score", "select"}},
  };
  return g;
}

inline const StageDef& stage_def(std::string_view name) {
  for (const auto& s : stage_graph()) {
    if (s.name == name) return s;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown stage '" + std::string(name) + "'", std::string(name));
}

inline std::vector<std::string_view> stage_order() {
  std::vector<std::string_view> out;
  for (const auto& s : stage_graph()) out.push_back(s.name);
  return out;
}

// ---------------------------------------------------------------------------
// Context

using BackendProvider = std::function<Backend&()>;

struct RunContext {
  Config cfg;
  std::filesystem::path workspace;
  bool force = false;
  BackendProvider backend;
  std::ostream* log = &std::cerr;

  std::filesystem::path dir(std::string_view stage) const { return workspace / std::string(stage_def(stage).dir); }
  std::ostream& out() const { return *log; }
};

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  write_file_atomic(path, j.dump(1) + "\n");
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::StageInputMissing, "missing " + path.string(), path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::StageInputMissing, "unreadable " + path.string() + ": " + e.what(), path.string());
  }
}

/// SHA-256 over every file below dir except stage.json, keyed by relative
/// path in sorted order.
inline nlohmann::json hash_outputs(const std::filesystem::path& dir) {
  std::vector<std::string> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = e.path().lexically_relative(dir).generic_string();
    if (rel != "stage.json") files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  Sha256 all;
  for (const auto& f : files) all.update(f).update("\n").update(sha256_file(dir / f)).update("\n");
  return {{"files", files.size()}, {"sha256", to_hex(all.finish())}};
}

// ---------------------------------------------------------------------------
// Stage manifests and staleness

inline std::filesystem::path stage_manifest_path(const RunContext& ctx, std::string_view stage) {
  return ctx.dir(stage) / "stage.json";
}

inline std::string stage_manifest_hash(const RunContext& ctx, std::string_view stage) {
  const auto p = stage_manifest_path(ctx, stage);
  if (!std::filesystem::exists(p)) {
    throw Error(ErrorKind::StageInputMissing,
                "stage '" + std::string(stage) + "' has not been run in " + ctx.workspace.string(), std::string(stage));
  }
  return sha256_file(p);
}

inline std::string dataset_hash(const Config& cfg) {
  if (cfg.annotations.empty()) {
    throw Error(ErrorKind::ConfigError, "no dataset configured (config 'dataset.root' or --dataset)", "dataset");
  }
  if (!std::filesystem::exists(cfg.annotations)) {
    throw Error(ErrorKind::StageInputMissing, "dataset annotations not found: " + cfg.annotations.string(),
                cfg.annotations.string());
  }
  return sha256_file(cfg.annotations);
}

/// Verifies that every dependency has run and that its own recorded inputs
/// still match the current upstream manifests. Returns the dependency
/// manifest hashes to record.
inline nlohmann::json check_inputs(const RunContext& ctx, std::string_view stage) {
  nlohmann::json inputs = nlohmann::json::object();
  const auto& def = stage_def(stage);
  if (def.deps.empty()) {
    inputs["dataset"] = dataset_hash(ctx.cfg);
    return inputs;
  }
  for (auto dep : def.deps) {
    inputs[std::string(dep)] = stage_manifest_hash(ctx, dep);
    const auto m = read_json(stage_manifest_path(ctx, dep));
    for (const auto& [up, recorded] : m.at("inputs").items()) {
      const std::string now = up == "dataset" ? dataset_hash(ctx.cfg) : stage_manifest_hash(ctx, up);
      if (now == recorded.get<std::string>()) continue;
      const std::string msg = "stage '" + std::string(dep) + "' is stale: '" + up + "' changed since it ran";
      if (!ctx.force) throw Error(ErrorKind::StaleInput, msg + " (rerun it or pass --force)", std::string(dep));
      ctx.out() << "warning: " << msg << "\n";
    }
  }
  return inputs;
}

/// Clears the stage directory before a run so no stale file survives.
inline std::filesystem::path fresh_stage_dir(const RunContext& ctx, std::string_view stage) {
  const auto d = ctx.dir(stage);
  std::error_code ec;
  std::filesystem::remove_all(d, ec);
  std::filesystem::create_directories(d);
  return d;
}

inline void finish_stage(const RunContext& ctx, std::string_view stage, const nlohmann::json& inputs,
                         const nlohmann::json& params, const nlohmann::json& summary) {
  const auto d = ctx.dir(stage);
  write_json(d / "stage.json", {{"stage", stage},
                                {"inputs", inputs},
                                {"params", params},
                                {"seed", ctx.cfg.seed},
                                {"outputs", hash_outputs(d)},
                                {"summary", summary}});
}

// ---------------------------------------------------------------------------
// Shared loaders

struct RetainedData {
  Dataset all;
  Dataset kept;
};

inline RetainedData load_retained(const Config& cfg) {
  dataset_hash(cfg);
  RetainedData r;
  r.all = load_coco(cfg.dataset_root, cfg.annotations);
  if (cfg.profile.resolutions.empty()) {
    r.kept = r.all;
  } else {
    r.kept = filter_resolutions(r.all, std::set<Resolution>(cfg.profile.resolutions.begin(), cfg.profile.resolutions.end()));
  }
  return r;
}

inline SplitManifest load_split(const RunContext& ctx) {
  return split_from_json(read_json(ctx.dir("analyze") / "split.json"));
}

inline PatchIndex load_patch_index(const RunContext& ctx) {
  return patch_index_from_json(read_json(ctx.dir("extract-patches") / "index.json"));
}

inline Prompt load_prompt(const RunContext& ctx) { return prompt_from_json(read_json(ctx.dir("build-prompt") / "prompt.json")); }

inline CandidatePool load_candidates(const RunContext& ctx) {
  return candidate_pool_from_json(read_json(ctx.dir("generate") / "candidates.json"));
}

inline std::vector<ScoredCandidate> load_scores(const RunContext& ctx) {
  const auto p = ctx.dir("score") / "scores.csv";
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::StageInputMissing, "missing " + p.string(), "score");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scores_csv(ss.str(), ctx.cfg.profile.k);
}

inline SelectedSet load_selection(const RunContext& ctx) {
  return selected_from_json(read_json(ctx.dir("select") / "selected.json"));
}

/// Defect-free train images of the retained set: the inpainting canvases.
inline std::vector<int> background_ids(const Dataset& kept, const SplitManifest& sp) {
  std::vector<int> out;
  for (int id : sp.train) {
    if (kept.annotations_of(id).empty()) out.push_back(id);
  }
  return out;
}

inline std::string resolution_key(Resolution r) { return std::to_string(r.first) + "x" + std::to_string(r.second); }

// ---------------------------------------------------------------------------
// Stages

inline nlohmann::json run_analyze(const RunContext& ctx) {
  const auto inputs = check_inputs(ctx, "analyze");
  const auto& p = ctx.cfg.profile;
  const auto data = load_retained(ctx.cfg);
  const auto stats = defect_stats(data.kept);
  const auto sp = split(data.kept, p.split, ctx.cfg.seed);
  const auto plan = plan_patches(data.kept, sp.train);
  const auto buckets = size_buckets(data.kept, sp.train);

  const auto d = fresh_stage_dir(ctx, "analyze");
  std::map<Resolution, int> per_res;
  for (const auto& im : data.kept.images) ++per_res[im.resolution()];
  nlohmann::json resolutions = nlohmann::json::object(), heatmaps = nlohmann::json::object();
  for (const auto& [res, n] : per_res) {
    resolutions[resolution_key(res)] = n;
    const auto hm = spatial_heatmap(data.kept, res, p.masks.heatmap_downscale);
    Image img(hm.grid_width, hm.grid_height);
    const auto gray = heatmap_gray(hm);
    for (std::size_t i = 0; i < gray.size(); ++i)
      for (int c = 0; c < 3; ++c) img.pixels[i * 3 + static_cast<std::size_t>(c)] = gray[i];
    write_png(d / ("heatmap_" + resolution_key(res) + ".png"), img);
    heatmaps[resolution_key(res)] = {{"instances", hm.total_instances},
                                     {"images", hm.images},
                                     {"upper_left_fraction", hm.upper_left_fraction()}};
  }
  int train_defective = 0;
  for (int id : sp.train) train_defective += data.kept.annotations_of(id).empty() ? 0 : 1;
  const nlohmann::json summary = {
      {"dataset", {{"images", data.all.images.size()}, {"annotations", data.all.annotations.size()}}},
      {"retained", to_json(stats)},
      {"resolutions", resolutions},
      {"split",
       {{"train", sp.train.size()}, {"val", sp.val.size()}, {"test", sp.test.size()}, {"train_defective", train_defective}}},
      {"train_patches", plan.patches.size()},
      {"suppressed_instances", plan.suppressed.size()},
      {"heatmaps", heatmaps}};
  write_json(d / "stats.json", summary);
  write_json(d / "split.json", to_json(sp));
  write_json(d / "buckets.json", to_json(buckets));
  finish_stage(ctx, "analyze", inputs, ctx.cfg.resolved, summary);
  return summary;
}

inline nlohmann::json run_extract_patches(const RunContext& ctx) {
  const auto inputs = check_inputs(ctx, "extract-patches");
  const auto data = load_retained(ctx.cfg);
  const auto sp = load_split(ctx);
  const auto d = fresh_stage_dir(ctx, "extract-patches");
  const auto images = d / "images";
  const auto idx = extract_all(data.kept, sp.train, [&](DefectPatch&& p) { write_patch(images, p); });
  write_json(d / "index.json", to_json(idx));
  const nlohmann::json summary = {{"patches", idx.patches.size()}, {"suppressed", idx.suppressed.size()}};
  finish_stage(ctx, "extract-patches", inputs, {{"patch_size", kPatchSize}, {"overlap_iou", kOverlapIou}}, summary);
  return summary;
}

inline nlohmann::json run_build_prompt(const RunContext& ctx) {
  const auto inputs = check_inputs(ctx, "build-prompt");
  const auto& pc = ctx.cfg.profile.prompt;
  const auto idx = load_patch_index(ctx);
  const auto images = ctx.dir("extract-patches") / "images";
  auto& backend = ctx.backend();
  const auto tc = collect_tags(
      idx.patches.size(), [&](std::size_t i) { return read_patch_image(images, idx.patches[i].patch_id); }, backend,
      pc.batch_size, pc.max_tags, ctx.cfg.backend.concurrency);
  const auto stop = pc.stoplist.empty() ? default_stoplist() : load_stoplist(pc.stoplist);
  auto lex = pc.lexicon.empty() ? default_lexicon() : load_lexicon(pc.lexicon);
  if (!pc.overrides.empty()) load_overrides(pc.overrides, lex);
  const auto kept = prune_tags(tc.frequency, stop, pc.min_fraction);
  const auto prompt = assemble_prompt(kept, lex, ctx.cfg.profile.name);

  const auto d = fresh_stage_dir(ctx, "build-prompt");
  write_json(d / "tags.json", {{"frequency", to_json(tc.frequency)},
                               {"backend_calls", tc.backend_calls},
                               {"warnings", tc.warnings},
                               {"kept", kept}});
  write_json(d / "prompt.json", to_json(prompt));
  for (const auto& w : tc.warnings) ctx.out() << "warning: " << w << "\n";
  const nlohmann::json summary = {{"prompt", prompt.text}, {"hash", prompt.hash()}, {"backend_calls", tc.backend_calls}};
  finish_stage(ctx, "build-prompt", inputs,
               {{"batch_size", pc.batch_size},
                {"max_tags", pc.max_tags},
                {"min_fraction", pc.min_fraction},
                {"stoplist", std::vector<std::string>(stop.begin(), stop.end())}},
               summary);
  return summary;
}

inline nlohmann::json run_gen_masks(const RunContext& ctx) {
  const auto inputs = check_inputs(ctx, "gen-masks");
  const auto& mc = ctx.cfg.profile.masks;
  const auto data = load_retained(ctx.cfg);
  const auto sp = load_split(ctx);
  PoolConfig pc;
  pc.per_resolution = mc.per_resolution;
  pc.mode = mc.placement;
  pc.transform = mc.transform;
  pc.heatmap_downscale = mc.heatmap_downscale;
  pc.max_attempts = mc.max_attempts;
  const auto pool = generate_pool(data.kept, sp, pc, ctx.cfg.seed);
  const auto d = fresh_stage_dir(ctx, "gen-masks");
  write_pool(pool, d);
  const nlohmann::json summary = {{"masks", pool.masks.size()}, {"failures", pool.failures.size()},
                                  {"placement", to_string(pool.mode)}};
  finish_stage(ctx, "gen-masks", inputs,
               {{"per_resolution", mc.per_resolution},
                {"placement", to_string(mc.placement)},
                {"scale", {mc.transform.scale_min, mc.transform.scale_max}},
                {"max_shift", mc.transform.max_shift},
                {"max_attempts", mc.max_attempts},
                {"heatmap_downscale", mc.heatmap_downscale}},
               summary);
  return summary;
}

inline nlohmann::json run_generate(const RunContext& ctx) {
  const auto inputs = check_inputs(ctx, "generate");
  const auto& p = ctx.cfg.profile;
  const auto data = load_retained(ctx.cfg);
  const auto sp = load_split(ctx);
  const auto pool = read_pool(ctx.dir("gen-masks"));
  const auto prompt = load_prompt(ctx);
  const auto backgrounds = background_ids(data.kept, sp);
  auto& backend = ctx.backend();
  const auto d = fresh_stage_dir(ctx, "generate");
  const auto images = d / "images";
  std::filesystem::create_directories(images);
  GenerationConfig gc;
  gc.steps = p.steps;
  gc.concurrency = ctx.cfg.backend.concurrency;
  int done = 0;
  const auto cp = generate_candidates(
      pool, data.kept, backgrounds, [&](int id) { return read_png_image(data.kept.image_path(data.kept.image(id))); },
      prompt, p.generate_count, ctx.cfg.seed, backend,
      [&](GeneratedCandidate&& g) {
        write_candidate(images, g);
        if (++done % 100 == 0) ctx.out() << "generate: " << done << "/" << p.generate_count << "\n";
      },
      gc);
  write_json(d / "candidates.json", to_json(cp));
  for (const auto& g : cp.gaps) ctx.out() << "warning: gap at " << g.candidate_id << ": " << g.error << "\n";
  const nlohmann::json summary = {{"attempted", cp.attempted}, {"succeeded", cp.succeeded}, {"gaps", cp.gaps.size()},
                                  {"backgrounds", backgrounds.size()}};
  finish_stage(ctx, "generate", inputs, {{"count", p.generate_count}, {"steps", p.steps}}, summary);
  return summary;
}

inline nlohmann::json run_score(const RunContext& ctx) {
  const auto inputs = check_inputs(ctx, "score");
  const auto cp = load_candidates(ctx);
  const auto idx = load_patch_index(ctx);
  const auto prompt = load_prompt(ctx);
  std::vector<std::string> ids;
  for (const auto& c : cp.candidates) ids.push_back(c.candidate_id);
  const auto cand_dir = ctx.dir("generate") / "images";
  const auto ref_dir = ctx.dir("extract-patches") / "images";
  auto& backend = ctx.backend();
  const auto scored = score_pool(
      ids, [&](std::size_t i) { return read_candidate_image(cand_dir, ids[i]); }, idx.patches.size(),
      [&](std::size_t i) { return read_patch_image(ref_dir, idx.patches[i].patch_id); }, prompt.text, backend,
      {ctx.cfg.profile.k, ctx.cfg.backend.concurrency});
  const auto d = fresh_stage_dir(ctx, "score");
  write_file_atomic(d / "scores.csv", scores_csv(scored));
  const nlohmann::json summary = {{"scored", scored.size()}, {"references", idx.patches.size()}};
  finish_stage(ctx, "score", inputs, {{"k", ctx.cfg.profile.k}}, summary);
  return summary;
}

inline nlohmann::json run_select(const RunContext& ctx) {
  const auto inputs = check_inputs(ctx, "select");
  const auto scored = load_scores(ctx);
  const auto s = select(scored, ctx.cfg.profile.selection);
  const auto d = fresh_stage_dir(ctx, "select");
  write_json(d / "selected.json", to_json(s));
  const nlohmann::json summary = {{"selected", s.ids.size()}, {"reserve", s.reserve.size()}};
  const auto& pol = ctx.cfg.profile.selection;
  finish_stage(ctx, "select", inputs,
               {{"target", pol.target_count}, {"w_align", pol.w_align}, {"w_dist", pol.w_dist}}, summary);
  return summary;
}

inline nlohmann::json run_compose(const RunContext& ctx) {
  const auto inputs = check_inputs(ctx, "compose-images");
  const auto& cc = ctx.cfg.profile.compose;
  const auto data = load_retained(ctx.cfg);
  const auto cp = load_candidates(ctx);
  const auto sel = load_selection(ctx);
  std::map<std::string, const Candidate*> by_id;
  for (const auto& c : cp.candidates) by_id[c.candidate_id] = &c;
  const auto reserve_n = std::min<std::size_t>(static_cast<std::size_t>(cc.reserve), sel.reserve.size());
  std::vector<std::string> reserve(sel.reserve.begin(), sel.reserve.begin() + static_cast<std::ptrdiff_t>(reserve_n));

  auto& backend = ctx.backend();
  const auto cand_dir = ctx.dir("generate") / "images";
  const auto d = fresh_stage_dir(ctx, "compose-images");
  int fallbacks = 0;
  auto compose_list = [&](const std::vector<std::string>& ids) {
    std::vector<ComposedEntry> entries;
    for (const auto& id : ids) {
      const auto it = by_id.find(id);
      if (it == by_id.end()) throw Error(ErrorKind::StageInputMissing, "candidate " + id + " not in generate output", id);
      const Candidate& c = *it->second;
      const auto& bg_rec = data.kept.image(c.background_image_id);
      const Image patch = read_candidate_image(cand_dir, id);
      const RefinedMask rm =
          refine_mask(patch, read_candidate_mask(cand_dir, id), backend, cc.refine, cc.text_cue);
      fallbacks += rm.fallback ? 1 : 0;
      auto out = blend(read_png_image(data.kept.image_path(bg_rec)), bg_rec, c, patch, rm,
                       {cc.sigma, ctx.cfg.profile.name});
      out.entry.record.file_path = "images/" + out.entry.record.file_path;
      write_png(d / out.entry.record.file_path, out.image);
      entries.push_back(std::move(out.entry));
      if ((entries.size() % 100) == 0) ctx.out() << "compose: " << entries.size() << "/" << ids.size() << "\n";
    }
    return entries;
  };
  const auto selected = compose_list(sel.ids);
  const auto extra = compose_list(reserve);
  export_coco(selected, d, "annotations.json", data.kept.categories);
  export_coco(extra, d, "reserve.json", data.kept.categories);
  const nlohmann::json summary = {{"selected", selected.size()}, {"reserve", extra.size()}, {"segment_fallbacks", fallbacks}};
  finish_stage(ctx, "compose-images", inputs,
               {{"refine", to_string(cc.refine)}, {"text_cue", cc.text_cue}, {"sigma", cc.sigma}, {"reserve", cc.reserve}},
               summary);
  return summary;
}

inline std::map<std::string, ComposedEntry> read_composed(const std::filesystem::path& file, Dataset& keep_alive) {
  keep_alive = parse_coco(read_json(file), file.parent_path(), true);
  std::map<std::string, ComposedEntry> out;
  for (const auto& im : keep_alive.images) {
    ComposedEntry e;
    e.record = im;
    for (const auto* a : keep_alive.annotations_of(im.id)) e.annotations.push_back(*a);
    e.candidate_id = std::filesystem::path(im.file_path).stem().string();
    out[e.candidate_id] = std::move(e);
  }
  return out;
}

inline nlohmann::json run_regimes(const RunContext& ctx) {
  const auto inputs = check_inputs(ctx, "regimes");
  const auto data = load_retained(ctx.cfg);
  const auto compose_dir = ctx.dir("compose-images");
  Dataset sel_ds, res_ds;
  auto selected = read_composed(compose_dir / "annotations.json", sel_ds);
  auto reserve = read_composed(compose_dir / "reserve.json", res_ds);
  const auto sel = load_selection(ctx);

  SyntheticSupply supply;
  SyntheticCatalog synth;
  synth.image_dir = compose_dir;
  for (const auto& id : sel.ids) {
    if (!selected.count(id)) throw Error(ErrorKind::StageInputMissing, "selected candidate " + id + " was not composed", id);
    supply.ranked.push_back(id);
  }
  for (const auto& id : sel.reserve) {
    if (reserve.count(id)) supply.reserve.push_back(id);
  }
  for (auto& [id, e] : selected) synth.entries[id] = std::move(e);
  for (auto& [id, e] : reserve) synth.entries[id] = std::move(e);

  RealCatalog real;
  real.dataset = &data.kept;
  std::vector<std::string> real_split;
  if (ctx.cfg.profile.regimes.real_set == RealSet::Patches) {
    for (const auto& p : load_patch_index(ctx).patches) {
      real_split.push_back(p.patch_id);
      real.image_of[p.patch_id] = p.source_image_id;
    }
  } else {
    for (int id : load_split(ctx).train) {
      if (data.kept.annotations_of(id).empty()) continue;
      const auto key = "i" + std::to_string(id);
      real_split.push_back(key);
      real.image_of[key] = id;
    }
  }
  const auto suite = emit_regime_suite(real_split, supply, ctx.cfg.profile.regimes.seeds);
  const auto d = fresh_stage_dir(ctx, "regimes");
  nlohmann::json listing = nlohmann::json::array();
  for (const auto& m : suite) {
    const auto name = regime_dir_name(m.regime);
    export_regime(m, real, synth, d / name);
    listing.push_back({{"name", name},
                       {"label", m.regime.label},
                       {"seed", m.regime.seed},
                       {"real", m.real_ids.size()},
                       {"synthetic", m.synthetic_ids.size()}});
  }
  write_json(d / "regimes.lock", regimes_lock(suite, real_split, supply));
  write_json(d / "suite.json", listing);
  const nlohmann::json summary = {{"manifests", suite.size()}, {"r_full", real_split.size()},
                                  {"synthetic_supply", supply.size()}};
  finish_stage(ctx, "regimes", inputs,
               {{"seeds", ctx.cfg.profile.regimes.seeds},
                {"real_set", ctx.cfg.profile.regimes.real_set == RealSet::Patches ? "patches" : "images"}},
               summary);
  return summary;
}

/// Extra score tables to compare, e.g. from other generator variants.
using ReportVariants = std::vector<std::pair<std::string, std::filesystem::path>>;

inline nlohmann::json run_report(const RunContext& ctx, const ReportVariants& variants = {}) {
  const auto inputs = check_inputs(ctx, "report");
  const auto scored = load_scores(ctx);
  const auto sel = load_selection(ctx);
  const auto cp = load_candidates(ctx);
  const auto pool = read_pool(ctx.dir("gen-masks"));
  const auto buckets = read_json(ctx.dir("analyze") / "buckets.json");
  const double small_max = buckets.at("thresholds")[0].get<double>();
  const double medium_max = buckets.at("thresholds")[1].get<double>();

  std::map<std::string, long long> mask_area;
  for (const auto& m : pool.masks) mask_area[m.mask_id] = m.area();
  std::map<std::string, std::string> bucket_of;
  for (const auto& c : cp.candidates) {
    const double a = static_cast<double>(mask_area.at(c.synthetic_mask_id));
    bucket_of[c.candidate_id] = a <= small_max ? "small" : a <= medium_max ? "medium" : "large";
  }
  const std::set<std::string> chosen(sel.ids.begin(), sel.ids.end());
  std::map<std::string, std::vector<MetricScores>> by_bucket;
  std::vector<MetricScores> all, kept, dropped;
  for (const auto& s : scored) {
    by_bucket[bucket_of.at(s.candidate_id)].push_back(s.scores);
    all.push_back(s.scores);
    (chosen.count(s.candidate_id) ? kept : dropped).push_back(s.scores);
  }
  std::vector<std::pair<std::string, std::vector<MetricScores>>> bucket_groups, subset_groups;
  for (const char* b : {"small", "medium", "large"}) {
    if (!by_bucket[b].empty()) bucket_groups.emplace_back(b, by_bucket[b]);
  }
  subset_groups.emplace_back("all", all);
  if (!kept.empty()) subset_groups.emplace_back("selected", kept);
  if (!dropped.empty()) subset_groups.emplace_back("rejected", dropped);

  const auto bucket_report = variant_report(bucket_groups, "Bucket");
  const auto subset_report = variant_report(subset_groups, "Subset");
  std::string md = "## Candidates by mask size\n\n" + to_markdown(bucket_report) + "\n## Selection\n\n" +
                   to_markdown(subset_report);
  const auto d = fresh_stage_dir(ctx, "report");
  if (!variants.empty()) {
    std::vector<std::pair<std::string, std::vector<MetricScores>>> vg;
    for (const auto& [label, path] : variants) {
      std::ifstream in(path, std::ios::binary);
      if (!in) throw Error(ErrorKind::StageInputMissing, "missing scores file " + path.string(), path.string());
      std::stringstream ss;
      ss << in.rdbuf();
      std::vector<MetricScores> v;
      for (const auto& s : parse_scores_csv(ss.str(), ctx.cfg.profile.k)) v.push_back(s.scores);
      vg.emplace_back(label, std::move(v));
    }
    const auto vr = variant_report(vg, "Variant");
    md += "\n## Variants\n\n" + to_markdown(vr);
    write_file_atomic(d / "report_variants.csv", to_csv(vr));
  }
  write_file_atomic(d / "report.md", md);
  write_file_atomic(d / "report_buckets.csv", to_csv(bucket_report));
  write_file_atomic(d / "report_selection.csv", to_csv(subset_report));
  const nlohmann::json summary = {{"scored", scored.size()}, {"selected", kept.size()}};
  finish_stage(ctx, "report", inputs, {{"variants", variants.size()}}, summary);
  return summary;
}

inline nlohmann::json run_stage(const RunContext& ctx, std::string_view stage, const ReportVariants& variants = {}) {
  if (stage == "analyze") return run_analyze(ctx);
  if (stage == "extract-patches") return run_extract_patches(ctx);
  if (stage == "build-prompt") return run_build_prompt(ctx);
  if (stage == "gen-masks") return run_gen_masks(ctx);
  if (stage == "generate") return run_generate(ctx);
  if (stage == "score") return run_score(ctx);
  if (stage == "select") return run_select(ctx);
  if (stage == "compose-images") return run_compose(ctx);
  if (stage == "regimes") return run_regimes(ctx);
  if (stage == "report") return run_report(ctx, variants);
  throw Error(ErrorKind::InvalidArgument, "unknown stage '" + std::string(stage) + "'", std::string(stage));
}

/// Process exit code per error class.
inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::ConfigError: return 2;
    case ErrorKind::StageInputMissing:
    case ErrorKind::StaleInput: return 3;
    case ErrorKind::BackendUnavailable:
    case ErrorKind::ProtocolMismatch: return 4;
    default: return 1;
  }
}

}  // namespace defectforge

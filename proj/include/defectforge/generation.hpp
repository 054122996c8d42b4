// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "defectforge/dataset.hpp"
#include "defectforge/error.hpp"
#include "defectforge/masks.hpp"
#include "defectforge/patches.hpp"
#include "defectforge/prompt.hpp"
#include "defectforge/protocol.hpp"
#include "defectforge/rng.hpp"

namespace defectforge {

inline constexpr int kDefaultSteps = 30;

struct InpaintRequest {
  Image background_patch;  // kPatchSize x kPatchSize
  Mask mask_patch;         // kPatchSize x kPatchSize
  std::string prompt;
  std::uint64_t seed = 0;
  int steps = kDefaultSteps;
};

struct PreparedInput {
  InpaintRequest request;
  CropRect crop;
};

/// Crops the background around the mask with the patch crop_window rule and
/// resizes image (bilinear) and mask (nearest) to kPatchSize.
inline PreparedInput prepare_inpaint_input(const Dataset& ds, int background_id, const Image& background,
                                           const SyntheticMask& sm) {
  const auto& rec = ds.image(background_id);
  const auto sid = std::to_string(background_id);
  if (rec.resolution() != sm.resolution || background.width != rec.width || background.height != rec.height) {
    throw Error(ErrorKind::ResolutionMismatch,
                "background " + sid + " is " + to_string(rec.resolution()) + ", mask " + sm.mask_id + " is " +
                    to_string(sm.resolution),
                sid);
  }
  if (!ds.annotations_of(background_id).empty()) {
    throw Error(ErrorKind::DefectiveBackground, "background " + sid + " has annotations", sid);
  }
  const Mask full = sm.mask();
  const PixelBox mb = full.bbox();
  if (mb.empty()) throw Error(ErrorKind::InvalidArgument, "mask " + sm.mask_id + " is empty", sm.mask_id);
  PreparedInput in;
  in.crop = crop_window(to_bbox(mb), rec.resolution());
  const auto box = in.crop.box();
  in.request.background_patch = resize_bilinear(crop(background, box), kPatchSize, kPatchSize);
  in.request.mask_patch = resize_nearest(crop(full, box), kPatchSize, kPatchSize);
  if (in.request.mask_patch.area() == 0) {
    throw Error(ErrorKind::EmptyMaskAfterResize, "mask " + sm.mask_id + " vanished in resize", sm.mask_id);
  }
  return in;
}

struct Candidate {
  std::string candidate_id;
  int index = 0;
  std::string synthetic_mask_id;
  int background_image_id = 0;
  CropRect crop;
  std::uint64_t seed = 0;
  std::string prompt_hash;
  int steps = kDefaultSteps;
  nlohmann::json backend = nlohmann::json::object();  // opaque sampler details
};

/// A candidate with its pixels: the inpainted patch and the inpainting mask,
/// both in patch coordinates.
struct GeneratedCandidate {
  Candidate meta;
  Image patch;
  Mask mask;
};

struct GenerationGap {
  int index = 0;
  std::string candidate_id;
  std::string error;
};

struct CandidatePool {
  std::vector<Candidate> candidates;  // by index
  std::vector<GenerationGap> gaps;
  int attempted = 0;
  int succeeded = 0;
  std::uint64_t seed = 0;
  std::string prompt;
};

inline std::string candidate_id_for(int index) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "c%04d", index);
  return buf;
}

struct GenerationConfig {
  int steps = kDefaultSteps;
  int concurrency = 4;
  // Give up early once this many calls in a row failed without any success.
  int abort_after_consecutive = 16;
};

/// One planned (mask, background, seed) triple.
struct CandidatePlan {
  int index = 0;
  std::size_t mask = 0;  // position in pool.masks
  int background_image_id = 0;
  std::uint64_t seed = 0;
};

/// Deterministic assignment: masks are consumed through seeded permutations
/// of the pool (a fresh permutation per pass), backgrounds are drawn
/// uniformly among those matching the mask's resolution, and each candidate
/// gets its own inpainting seed. Seeds stay below 2^53 so JSON consumers read
/// them exactly.
inline std::vector<CandidatePlan> plan_candidates(const MaskPool& pool, const Dataset& ds,
                                                  const std::vector<int>& backgrounds, int count, std::uint64_t seed) {
  if (pool.masks.empty()) throw Error(ErrorKind::InvalidArgument, "mask pool is empty");
  if (backgrounds.empty()) throw Error(ErrorKind::InvalidArgument, "no defect-free backgrounds");
  if (count < 0) throw Error(ErrorKind::InvalidArgument, "negative candidate count");
  std::map<Resolution, std::vector<int>> by_res;
  std::vector<int> sorted = backgrounds;
  std::sort(sorted.begin(), sorted.end());
  for (int id : sorted) by_res[ds.image(id).resolution()].push_back(id);

  std::vector<CandidatePlan> plan;
  std::vector<std::size_t> perm;
  for (int i = 0; i < count; ++i) {
    const std::size_t pass = static_cast<std::size_t>(i) / pool.masks.size();
    const std::size_t pos = static_cast<std::size_t>(i) % pool.masks.size();
    if (pos == 0) {
      perm.resize(pool.masks.size());
      for (std::size_t k = 0; k < perm.size(); ++k) perm[k] = k;
      Rng prng(derive_seed(seed, {0x9e4a, pass}));
      prng.shuffle(perm);
    }
    CandidatePlan p;
    p.index = i;
    p.mask = perm[pos];
    const auto& sm = pool.masks[p.mask];
    auto it = by_res.find(sm.resolution);
    if (it == by_res.end()) {
      throw Error(ErrorKind::ResolutionMismatch, "no background at " + to_string(sm.resolution), sm.mask_id);
    }
    Rng rng(derive_seed(seed, {0xb9, static_cast<std::uint64_t>(i)}));
    p.background_image_id = it->second[rng.index(it->second.size())];
    p.seed = rng.next() >> 11;
    plan.push_back(p);
  }
  return plan;
}

using BackgroundLoader = std::function<Image(int image_id)>;
using CandidateSink = std::function<void(GeneratedCandidate&&)>;

/// Runs the plan against the backend with up to `concurrency` requests in
/// flight. Results reach `sink` in index order. Calls that still fail after
/// the client's retries leave a gap; fewer than half succeeding is fatal.
inline CandidatePool generate_candidates(const MaskPool& pool, const Dataset& ds, const std::vector<int>& backgrounds,
                                         const BackgroundLoader& load, const Prompt& prompt, int count,
                                         std::uint64_t seed, Backend& backend, const CandidateSink& sink,
                                         const GenerationConfig& cfg = {}) {
  if (cfg.steps < 1) throw Error(ErrorKind::InvalidArgument, "steps must be >= 1");
  for (int id : backgrounds) {
    if (!ds.annotations_of(id).empty()) {
      throw Error(ErrorKind::DefectiveBackground, "background " + std::to_string(id) + " has annotations",
                  std::to_string(id));
    }
  }
  const auto plan = plan_candidates(pool, ds, backgrounds, count, seed);
  CandidatePool out;
  out.seed = seed;
  out.prompt = prompt.text;
  const auto hash = prompt.hash();

  struct Outcome {
    std::optional<GeneratedCandidate> candidate;
    std::string error;
  };
  auto run = [&](const CandidatePlan& p) -> Outcome {
    const auto& sm = pool.masks[p.mask];
    auto in = prepare_inpaint_input(ds, p.background_image_id, load(p.background_image_id), sm);
    try {
      auto r = backend.inpaint(in.request.background_patch, in.request.mask_patch, prompt.text, p.seed, cfg.steps);
      if (r.image.width != kPatchSize || r.image.height != kPatchSize) {
        throw Error(ErrorKind::ProtocolMismatch, "inpaint returned " + std::to_string(r.image.width) + "x" +
                                                     std::to_string(r.image.height));
      }
      GeneratedCandidate g;
      g.meta = {candidate_id_for(p.index), p.index, sm.mask_id, p.background_image_id, in.crop, p.seed, hash,
                cfg.steps, std::move(r.metadata)};
      g.patch = std::move(r.image);
      g.mask = std::move(in.request.mask_patch);
      return {std::move(g), {}};
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::BackendUnavailable) throw;
      return {std::nullopt, e.what()};
    }
  };

  const std::size_t window = static_cast<std::size_t>(std::max(1, cfg.concurrency));
  int consecutive = 0;
  for (std::size_t start = 0; start < plan.size(); start += window) {
    std::vector<std::future<Outcome>> inflight;
    const std::size_t end = std::min(plan.size(), start + window);
    for (std::size_t i = start; i < end; ++i) {
      inflight.push_back(std::async(window == 1 ? std::launch::deferred : std::launch::async, run, std::cref(plan[i])));
    }
    for (std::size_t i = start; i < end; ++i) {
      auto o = inflight[i - start].get();
      ++out.attempted;
      if (o.candidate) {
        ++out.succeeded;
        consecutive = 0;
        out.candidates.push_back(o.candidate->meta);
        sink(std::move(*o.candidate));
      } else {
        ++consecutive;
        out.gaps.push_back({plan[i].index, candidate_id_for(plan[i].index), o.error});
      }
    }
    if (out.succeeded == 0 && consecutive >= cfg.abort_after_consecutive) break;
  }
  if (count > 0 && 2 * out.succeeded < count) {
    throw Error(ErrorKind::BackendUnavailable, "only " + std::to_string(out.succeeded) + " of " +
                                                   std::to_string(count) + " inpainting calls succeeded");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::json to_json(const Candidate& c) {
  return {{"candidate_id", c.candidate_id},
          {"index", c.index},
          {"synthetic_mask_id", c.synthetic_mask_id},
          {"background_image_id", c.background_image_id},
          {"crop", to_json(c.crop)},
          {"seed", c.seed},
          {"prompt_hash", c.prompt_hash},
          {"steps", c.steps},
          {"backend", c.backend},
          {"image", c.candidate_id + ".png"},
          {"mask", c.candidate_id + ".mask.png"}};
}

inline Candidate candidate_from_json(const nlohmann::json& j) {
  return {j.at("candidate_id").get<std::string>(), j.at("index").get<int>(),
          j.at("synthetic_mask_id").get<std::string>(), j.at("background_image_id").get<int>(),
          crop_from_json(j.at("crop")), j.at("seed").get<std::uint64_t>(),
          j.at("prompt_hash").get<std::string>(), j.at("steps").get<int>(),
          j.value("backend", nlohmann::json::object())};
}

inline nlohmann::json to_json(const CandidatePool& pool) {
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : pool.candidates) cands.push_back(to_json(c));
  nlohmann::json gaps = nlohmann::json::array();
  for (const auto& g : pool.gaps) gaps.push_back({{"index", g.index}, {"candidate_id", g.candidate_id}, {"error", g.error}});
  return {{"seed", pool.seed},        {"prompt", pool.prompt}, {"attempted", pool.attempted},
          {"succeeded", pool.succeeded}, {"candidates", cands},  {"gaps", gaps}};
}

inline CandidatePool candidate_pool_from_json(const nlohmann::json& j) {
  CandidatePool p;
  p.seed = j.at("seed").get<std::uint64_t>();
  p.prompt = j.at("prompt").get<std::string>();
  p.attempted = j.at("attempted").get<int>();
  p.succeeded = j.at("succeeded").get<int>();
  for (const auto& c : j.at("candidates")) p.candidates.push_back(candidate_from_json(c));
  for (const auto& g : j.at("gaps")) {
    p.gaps.push_back({g.at("index").get<int>(), g.at("candidate_id").get<std::string>(), g.at("error").get<std::string>()});
  }
  return p;
}

inline void write_candidate(const std::filesystem::path& dir, const GeneratedCandidate& g) {
  write_png(dir / (g.meta.candidate_id + ".png"), g.patch);
  write_png(dir / (g.meta.candidate_id + ".mask.png"), g.mask);
}

inline Image read_candidate_image(const std::filesystem::path& dir, const std::string& id) {
  return read_png_image(dir / (id + ".png"));
}

inline Mask read_candidate_mask(const std::filesystem::path& dir, const std::string& id) {
  return read_png_mask(dir / (id + ".mask.png"));
}

}  // namespace defectforge

// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cmath>
#include <string>
#include <vector>

#include "defectforge/hash.hpp"
#include "defectforge/morphology.hpp"
#include "defectforge/protocol.hpp"
#include "defectforge/rng.hpp"

namespace defectforge {

inline constexpr int kMockEmbedDim = 64;

/// Tag list the mock returns for every batch. The first entries reproduce the
/// published prompts; the tail exercises normalization and pruning.
inline std::vector<std::string> mock_profile_tags(const std::string& profile) {
  if (profile == "msd") {
    return {"high contrast scratch defect on dark glass display",
            "thin linear scratch",
            "occasional diagonal orientation",
            "sharp edges",
            "isolated single defect",
            "reflective glossy surface with subtle metallic sheen",
            "fine texture on smooth surface",
            "close-up industrial inspection photo",
            "uniform lighting with faint glow",
            "minimal dark background",
            "minimal noise shallow depth of field",
            "Image",
            "  glass ",
            "High contrast scratch defect on dark glass display"};
  }
  return {"pitting defect on galvanized steel",
          "irregular pitted surface",
          "rough grainy texture",
          "dark pits",
          "subtle metallic sheen",
          "close-up industrial inspection photo",
          "shallow depth of field",
          "low contrast",
          "dim diffuse lighting",
          "shadowed edges",
          "horizontal striations",
          "Image",
          " metal surface ",
          "photo",
          "Pitting defect on galvanized steel"};
}

namespace detail {

inline std::vector<float> keyed_unit_vector(const Digest& d) {
  std::uint64_t seed = 0;
  for (int i = 0; i < 8; ++i) seed |= static_cast<std::uint64_t>(d[static_cast<std::size_t>(i)]) << (8 * i);
  Rng rng(seed);
  std::vector<double> v(kMockEmbedDim);
  double norm = 0;
  for (auto& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  std::vector<float> out(kMockEmbedDim);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / norm);
  return out;
}

inline double cosine(std::span<const float> a, std::span<const float> b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  return (na > 0 && nb > 0) ? dot / std::sqrt(na * nb) : 0.0;
}

}  // namespace detail

/// Deterministic offline stand-in for the model sidecar. Every output is a
/// pure function of the request, so runs with the same seed are
/// byte-reproducible.
class MockBackend : public Backend {
 public:
  explicit MockBackend(std::string profile = "bsdata") : profile_(std::move(profile)) {}

  BackendHealth health() override {
    BackendHealth h{std::string(kProtocolVersion), {}};
    for (auto ep : kEndpoints) h.endpoints[std::string(ep)] = true;
    return h;
  }

  std::vector<std::vector<std::string>> tags(std::span<const Image>, int) override {
    ++tag_calls;
    return {mock_profile_tags(profile_)};
  }

  /// Dark, noise-textured ellipse inscribed in the mask's bounding box,
  /// painted only where the mask is set.
  InpaintResult inpaint(const Image& image, const Mask& mask, const std::string& prompt, std::uint64_t seed,
                        int steps) override {
    ++inpaint_calls;
    if (mask.width != image.width || mask.height != image.height) {
      throw Error(ErrorKind::ProtocolMismatch, "inpaint mask and image differ in size");
    }
    InpaintResult r{image, {{"backend", "mock"}, {"steps", steps}}};
    const PixelBox box = mask.bbox();
    if (box.empty()) return r;
    const double cx = box.x + box.w / 2.0, cy = box.y + box.h / 2.0;
    const double rx = box.w / 2.0, ry = box.h / 2.0;
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(steps), fnv1a64(prompt)}));
    for (int y = box.y; y < box.y + box.h; ++y) {
      for (int x = box.x; x < box.x + box.w; ++x) {
        if (!mask.at(x, y)) continue;
        const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
        if (dx * dx + dy * dy > 1.0) continue;
        const int noise = static_cast<int>(rng.next() % 24);
        auto* px = r.image.at(x, y);
        for (int c = 0; c < 3; ++c) px[c] = static_cast<std::uint8_t>(px[c] * 35 / 100 + noise);
      }
    }
    return r;
  }

  /// 64-dim unit vector from a keyed hash of the decoded pixels.
  std::vector<float> embed(const Image& image) override {
    ++embed_calls;
    return image_embedding(image);
  }

  double align(const Image& image, const std::string& text) override {
    ++align_calls;
    return 100.0 * std::max(0.0, detail::cosine(image_embedding(image), text_embedding(text)));
  }

  /// The hint mask eroded by one pixel; without a hint, dark pixels inside
  /// the box (eroded likewise).
  Mask segment(const Image& image, const PixelBox& bbox, const std::string&, const Mask* hint) override {
    ++segment_calls;
    if (hint) return erode(*hint, 1);
    Mask m(image.width, image.height);
    for (int y = std::max(0, bbox.y); y < std::min(image.height, bbox.y + bbox.h); ++y) {
      for (int x = std::max(0, bbox.x); x < std::min(image.width, bbox.x + bbox.w); ++x) {
        const auto* p = image.at(x, y);
        if ((p[0] + p[1] + p[2]) / 3 < 64) m.at(x, y) = 1;
      }
    }
    return erode(m, 1);
  }

  static std::vector<float> image_embedding(const Image& image) {
    Sha256 h;
    h.update("defectforge-mock-embed-v1").update_u64(static_cast<std::uint64_t>(image.width));
    h.update_u64(static_cast<std::uint64_t>(image.height)).update(image.pixels);
    return detail::keyed_unit_vector(h.finish());
  }

  static std::vector<float> text_embedding(const std::string& text) {
    return detail::keyed_unit_vector(Sha256().update("defectforge-mock-text-v1").update(text).finish());
  }

  std::atomic<int> tag_calls{0};
  std::atomic<int> inpaint_calls{0};
  std::atomic<int> embed_calls{0};
  std::atomic<int> align_calls{0};
  std::atomic<int> segment_calls{0};

 private:
  std::string profile_;
};

}  // namespace defectforge

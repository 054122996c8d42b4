// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

// Inference backend protocol v1.
//
//   GET  /v1/health  -> {protocol: "1", endpoints: {tags: bool, ...}}
//   POST /v1/tags    {images[], max_tags}                 -> {tags[][]}
//   POST /v1/inpaint {image, mask, prompt, seed, steps}   -> {image, seed, steps, metadata?}
//   POST /v1/embed   {image}                              -> {vector}
//   POST /v1/align   {image, text}                        -> {score}
//   POST /v1/segment {image, bbox, text_cue, mask?}       -> {mask}
//
// Images and masks travel as base64 PNG. Vectors travel as base64 of a
// little-endian uint32 element count followed by IEEE-754 binary32 values.

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "defectforge/error.hpp"
#include "defectforge/image.hpp"
#include "defectforge/png_io.hpp"

namespace defectforge {

inline constexpr std::string_view kProtocolVersion = "1";
inline constexpr std::array<std::string_view, 5> kEndpoints = {"tags", "inpaint", "embed", "align", "segment"};

// ---------------------------------------------------------------------------
// Codecs

inline std::string base64_encode(std::span<const std::uint8_t> in) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    const std::uint32_t v = (in[i] << 16) | (in[i + 1] << 8) | in[i + 2];
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(kAlphabet[(v >> 6) & 63]);
    out.push_back(kAlphabet[v & 63]);
  }
  if (i < in.size()) {
    std::uint32_t v = in[i] << 16;
    if (i + 1 < in.size()) v |= in[i + 1] << 8;
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(i + 1 < in.size() ? kAlphabet[(v >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view in) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::vector<std::uint8_t> out;
  out.reserve(in.size() / 4 * 3);
  std::uint32_t acc = 0;
  int bits = 0;
  for (char c : in) {
    if (c == '=' || c == '\n' || c == '\r') continue;
    const int v = value(c);
    if (v < 0) throw Error(ErrorKind::ProtocolMismatch, "invalid base64");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xff));
    }
  }
  return out;
}

inline std::string encode_image(const Image& img) { return base64_encode(encode_png(img)); }
inline std::string encode_mask(const Mask& m) { return base64_encode(encode_png(m)); }
inline Image decode_image(std::string_view b64) { return decode_png_image(base64_decode(b64)); }
inline Mask decode_mask(std::string_view b64) { return decode_png_mask(base64_decode(b64)); }

inline std::string encode_vector(std::span<const float> v) {
  std::vector<std::uint8_t> bytes(4 + 4 * v.size());
  auto put32 = [&](std::size_t at, std::uint32_t x) {
    for (int i = 0; i < 4; ++i) bytes[at + i] = static_cast<std::uint8_t>(x >> (8 * i));
  };
  put32(0, static_cast<std::uint32_t>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) put32(4 + 4 * i, std::bit_cast<std::uint32_t>(v[i]));
  return base64_encode(bytes);
}

inline std::vector<float> decode_vector(std::string_view b64) {
  const auto bytes = base64_decode(b64);
  auto get32 = [&](std::size_t at) {
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
    return x;
  };
  if (bytes.size() < 4) throw Error(ErrorKind::ProtocolMismatch, "vector payload too short");
  const std::uint32_t n = get32(0);
  if (bytes.size() != 4 + 4ULL * n) throw Error(ErrorKind::ProtocolMismatch, "vector length prefix mismatch");
  std::vector<float> v(n);
  for (std::uint32_t i = 0; i < n; ++i) v[i] = std::bit_cast<float>(get32(4 + 4 * i));
  return v;
}

// ---------------------------------------------------------------------------
// Backend interface

struct BackendHealth {
  std::string protocol;
  std::map<std::string, bool> endpoints;
};

struct InpaintResult {
  Image image;
  nlohmann::json metadata;  // opaque backend details (sampler, guidance, ...)
};

/// The five model endpoints. Implementations must be safe to call from
/// several threads at once.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual BackendHealth health() = 0;
  /// One tag list per request; the batch is described jointly.
  virtual std::vector<std::vector<std::string>> tags(std::span<const Image> images, int max_tags) = 0;
  virtual InpaintResult inpaint(const Image& image, const Mask& mask, const std::string& prompt,
                                std::uint64_t seed, int steps) = 0;
  virtual std::vector<float> embed(const Image& image) = 0;
  virtual double align(const Image& image, const std::string& text) = 0;
  /// `hint` is the inpainting mask when the caller has one; backends may ignore it.
  virtual Mask segment(const Image& image, const PixelBox& bbox, const std::string& text_cue,
                       const Mask* hint) = 0;
};

/// Throws ProtocolMismatch unless the backend speaks v1 with every endpoint live.
inline void check_protocol(Backend& backend, std::span<const std::string_view> required = kEndpoints) {
  const auto h = backend.health();
  if (h.protocol != kProtocolVersion) {
    throw Error(ErrorKind::ProtocolMismatch, "backend speaks protocol '" + h.protocol + "', need 1");
  }
  for (auto ep : required) {
    auto it = h.endpoints.find(std::string(ep));
    if (it != h.endpoints.end() && !it->second) {
      throw Error(ErrorKind::ProtocolMismatch, "endpoint " + std::string(ep) + " is disabled", std::string(ep));
    }
  }
}

// ---------------------------------------------------------------------------
// Message bodies, shared by the HTTP client and the in-process mock server.

namespace wire {

inline nlohmann::json health_response(const BackendHealth& h) {
  nlohmann::json eps = nlohmann::json::object();
  for (const auto& [k, v] : h.endpoints) eps[k] = v;
  return {{"protocol", h.protocol}, {"endpoints", eps}};
}

inline BackendHealth parse_health(const nlohmann::json& j) {
  BackendHealth h;
  h.protocol = j.at("protocol").get<std::string>();
  if (j.contains("endpoints")) {
    for (const auto& [k, v] : j.at("endpoints").items()) h.endpoints[k] = v.get<bool>();
  }
  return h;
}

inline nlohmann::json tags_request(std::span<const Image> images, int max_tags) {
  nlohmann::json imgs = nlohmann::json::array();
  for (const auto& im : images) imgs.push_back(encode_image(im));
  return {{"images", imgs}, {"max_tags", max_tags}};
}

inline nlohmann::json inpaint_request(const Image& image, const Mask& mask, const std::string& prompt,
                                      std::uint64_t seed, int steps) {
  return {{"image", encode_image(image)}, {"mask", encode_mask(mask)}, {"prompt", prompt}, {"seed", seed},
          {"steps", steps}};
}

inline nlohmann::json embed_request(const Image& image) { return {{"image", encode_image(image)}}; }

inline nlohmann::json align_request(const Image& image, const std::string& text) {
  return {{"image", encode_image(image)}, {"text", text}};
}

inline nlohmann::json segment_request(const Image& image, const PixelBox& bbox, const std::string& text_cue,
                                      const Mask* hint) {
  nlohmann::json j = {{"image", encode_image(image)}, {"bbox", {bbox.x, bbox.y, bbox.w, bbox.h}}, {"text_cue", text_cue}};
  if (hint) j["mask"] = encode_mask(*hint);
  return j;
}

inline PixelBox parse_bbox(const nlohmann::json& j) {
  const auto v = j.get<std::vector<int>>();
  if (v.size() != 4) throw Error(ErrorKind::ProtocolMismatch, "bbox needs 4 numbers");
  return {v[0], v[1], v[2], v[3]};
}

}  // namespace wire

}  // namespace defectforge

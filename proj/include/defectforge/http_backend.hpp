// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <string>
#include <thread>

#include <httplib.h>

#include "defectforge/protocol.hpp"

namespace defectforge {

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
  double multiplier = 2.0;
};

/// Protocol v1 client over HTTP+JSON. A fresh connection per request keeps
/// the client safe to share between worker threads.
class HttpBackend : public Backend {
 public:
  HttpBackend(std::string base_url, std::chrono::seconds timeout = std::chrono::seconds(120), RetryPolicy retry = {})
      : base_url_(std::move(base_url)), timeout_(timeout), retry_(retry) {
    while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
  }

  const std::string& base_url() const { return base_url_; }

  BackendHealth health() override { return wire::parse_health(call("GET", "/v1/health", nullptr)); }

  std::vector<std::vector<std::string>> tags(std::span<const Image> images, int max_tags) override {
    const auto body = wire::tags_request(images, max_tags);
    return call("POST", "/v1/tags", &body).at("tags").get<std::vector<std::vector<std::string>>>();
  }

  InpaintResult inpaint(const Image& image, const Mask& mask, const std::string& prompt, std::uint64_t seed,
                        int steps) override {
    const auto body = wire::inpaint_request(image, mask, prompt, seed, steps);
    const auto j = call("POST", "/v1/inpaint", &body);
    InpaintResult r{decode_image(j.at("image").get<std::string>()), j.value("metadata", nlohmann::json::object())};
    if (j.contains("seed")) r.metadata["seed"] = j.at("seed");
    if (j.contains("steps")) r.metadata["steps"] = j.at("steps");
    return r;
  }

  std::vector<float> embed(const Image& image) override {
    const auto body = wire::embed_request(image);
    return decode_vector(call("POST", "/v1/embed", &body).at("vector").get<std::string>());
  }

  double align(const Image& image, const std::string& text) override {
    const auto body = wire::align_request(image, text);
    return call("POST", "/v1/align", &body).at("score").get<double>();
  }

  Mask segment(const Image& image, const PixelBox& bbox, const std::string& text_cue, const Mask* hint) override {
    const auto body = wire::segment_request(image, bbox, text_cue, hint);
    return decode_mask(call("POST", "/v1/segment", &body).at("mask").get<std::string>());
  }

 private:
  // Retries connection failures and 5xx with exponential backoff; 4xx fails
  // immediately. Exhausted retries surface as BackendUnavailable.
  nlohmann::json call(const char* method, const std::string& path, const nlohmann::json* body) {
    auto backoff = retry_.initial_backoff;
    std::string last_error;
    for (int attempt = 1; attempt <= std::max(1, retry_.max_attempts); ++attempt) {
      httplib::Client client(base_url_);
      client.set_connection_timeout(timeout_);
      client.set_read_timeout(timeout_);
      client.set_write_timeout(timeout_);
      httplib::Result res = body ? client.Post(path, body->dump(), "application/json") : client.Get(path);
      if (res) {
        if (res->status == 200) {
          try {
            return nlohmann::json::parse(res->body);
          } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::ProtocolMismatch, path + ": response is not JSON", path);
          }
        }
        last_error = "HTTP " + std::to_string(res->status);
        if (res->status >= 400 && res->status < 500) {
          throw Error(ErrorKind::ProtocolMismatch, std::string(method) + " " + path + " rejected: " + last_error + " " + res->body, path);
        }
      } else {
        last_error = httplib::to_string(res.error());
      }
      if (attempt < retry_.max_attempts) {
        std::this_thread::sleep_for(backoff);
        backoff = std::chrono::milliseconds(static_cast<long long>(backoff.count() * retry_.multiplier));
      }
    }
    throw Error(ErrorKind::BackendUnavailable, std::string(method) + " " + base_url_ + path + " failed: " + last_error, path);
  }

  std::string base_url_;
  std::chrono::seconds timeout_;
  RetryPolicy retry_;
};

}  // namespace defectforge

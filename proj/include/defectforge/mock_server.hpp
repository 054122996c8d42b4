// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <set>
#include <string>
#include <thread>

#include <httplib.h>

#include "defectforge/mock_backend.hpp"
#include "defectforge/protocol.hpp"

namespace defectforge {

/// Serves MockBackend over protocol v1 on 127.0.0.1. Used to exercise the
/// HTTP client and the wire format without a model sidecar.
class MockServer {
 public:
  explicit MockServer(std::string profile = "bsdata", std::set<std::string> disabled = {})
      : backend_(std::move(profile)), disabled_(std::move(disabled)) {
    server_.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
      auto h = backend_.health();
      for (const auto& d : disabled_) h.endpoints[d] = false;
      reply(res, wire::health_response(h));
    });
    route("tags", [this](const nlohmann::json& j) {
      std::vector<Image> images;
      for (const auto& s : j.at("images")) images.push_back(decode_image(s.get<std::string>()));
      return nlohmann::json{{"tags", backend_.tags(images, j.at("max_tags").get<int>())}};
    });
    route("inpaint", [this](const nlohmann::json& j) {
      const auto seed = j.at("seed").get<std::uint64_t>();
      const auto steps = j.at("steps").get<int>();
      auto r = backend_.inpaint(decode_image(j.at("image").get<std::string>()), decode_mask(j.at("mask").get<std::string>()),
                                j.at("prompt").get<std::string>(), seed, steps);
      return nlohmann::json{{"image", encode_image(r.image)}, {"seed", seed}, {"steps", steps}, {"metadata", r.metadata}};
    });
    route("embed", [this](const nlohmann::json& j) {
      return nlohmann::json{{"vector", encode_vector(backend_.embed(decode_image(j.at("image").get<std::string>())))}};
    });
    route("align", [this](const nlohmann::json& j) {
      return nlohmann::json{
          {"score", backend_.align(decode_image(j.at("image").get<std::string>()), j.at("text").get<std::string>())}};
    });
    route("segment", [this](const nlohmann::json& j) {
      Mask hint;
      const bool has_hint = j.contains("mask");
      if (has_hint) hint = decode_mask(j.at("mask").get<std::string>());
      const auto m = backend_.segment(decode_image(j.at("image").get<std::string>()), wire::parse_bbox(j.at("bbox")),
                                      j.at("text_cue").get<std::string>(), has_hint ? &hint : nullptr);
      return nlohmann::json{{"mask", encode_mask(m)}};
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~MockServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  MockBackend& backend() { return backend_; }

  /// Makes the next `n` requests fail with HTTP 503.
  void fail_next(int n) { fail_budget_ = n; }

 private:
  template <typename Handler>
  void route(const std::string& name, Handler handler) {
    server_.Post("/v1/" + name, [this, name, handler](const httplib::Request& req, httplib::Response& res) {
      if (disabled_.count(name) || fail_budget_.fetch_sub(1) > 0) {
        res.status = 503;
        res.set_content(R"({"error":"unavailable"})", "application/json");
        return;
      }
      try {
        reply(res, handler(nlohmann::json::parse(req.body)));
      } catch (const std::exception& e) {
        res.status = 422;
        res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
      }
    });
  }

  static void reply(httplib::Response& res, const nlohmann::json& j) { res.set_content(j.dump(), "application/json"); }

  MockBackend backend_;
  std::set<std::string> disabled_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> fail_budget_{0};
};

}  // namespace defectforge

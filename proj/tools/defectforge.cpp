// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>

#include <iostream>
#include <memory>
#include <optional>

#include "defectforge/http_backend.hpp"
#include "defectforge/mock_backend.hpp"
#include "defectforge/pipeline.hpp"

using namespace defectforge;

namespace {

struct Options {
  std::optional<std::string> config;
  std::optional<std::string> profile;
  std::string workspace = "workspace";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> backend_url;
  std::optional<int> target;
  std::optional<std::string> dataset;
  bool force = false;
  bool mock = false;
  std::vector<std::string> variants;
};

ReportVariants parse_variants(const std::vector<std::string>& specs) {
  ReportVariants out;
  for (const auto& s : specs) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
      throw Error(ErrorKind::ConfigError, "--variant expects label=scores.csv, got '" + s + "'", s);
    }
    out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return out;
}

int run(const Options& o, const std::vector<std::string_view>& stages) {
  ConfigOverrides ov;
  ov.profile = o.profile;
  ov.seed = o.seed;
  ov.backend_url = o.backend_url;
  ov.target = o.target;
  if (o.dataset) ov.dataset = *o.dataset;
  std::optional<std::filesystem::path> cfg_path;
  if (o.config) cfg_path = *o.config;

  RunContext ctx;
  ctx.cfg = load_config(cfg_path, ov);
  ctx.workspace = o.workspace;
  ctx.force = o.force;
  std::unique_ptr<Backend> backend;
  ctx.backend = [&]() -> Backend& {
    if (!backend) {
      if (o.mock) {
        backend = std::make_unique<MockBackend>(ctx.cfg.profile.name == "msd" ? "msd" : "bsdata");
      } else {
        if (ctx.cfg.backend.url.empty()) {
          throw Error(ErrorKind::ConfigError,
                      "no inference backend: pass --backend-url, set DEFECTFORGE_BACKEND_URL or use --mock-backend",
                      "backend.url");
        }
        auto http = std::make_unique<HttpBackend>(ctx.cfg.backend.url, std::chrono::seconds(ctx.cfg.backend.timeout_s),
                                                  ctx.cfg.backend.retry);
        check_protocol(*http);
        backend = std::move(http);
      }
    }
    return *backend;
  };
  const auto variants = parse_variants(o.variants);
  for (auto stage : stages) {
    std::cerr << "== " << stage << "\n";
    const auto summary = run_stage(ctx, stage, variants);
    std::cout << stage << ": " << summary.dump() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic defect data generation pipeline"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config, "JSON config file");
  app.add_option("--profile", o.profile, "profile name: bsdata, msd or custom");
  app.add_option("--workspace", o.workspace, "workspace directory holding stage outputs")->capture_default_str();
  app.add_option("--seed", o.seed, "master seed for every stage");
  app.add_option("--backend-url", o.backend_url, "inference backend base URL");
  app.add_option("--target", o.target, "number of candidates to select");
  app.add_option("--dataset", o.dataset, "COCO annotation file; images resolve against its directory");
  app.add_flag("--force", o.force, "run even when upstream outputs changed");
  app.add_flag("--mock-backend", o.mock, "use the deterministic in-process backend");

  std::vector<std::string_view> stages;
  for (const auto& def : stage_graph()) {
    auto* sub = app.add_subcommand(std::string(def.name), "run the " + std::string(def.name) + " stage");
    if (def.name == "report") {
      sub->add_option("--variant", o.variants, "extra scores table as label=scores.csv (repeatable)");
    }
    sub->callback([&stages, name = def.name] { stages = {name}; });
  }
  app.add_subcommand("run", "run every stage in order")->callback([&stages] { stages = stage_order(); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  try {
    return run(o, stages);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

// Copyright (C) 2026 The DefectForge Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>

#include <iostream>

#include "defectforge/fixture.hpp"

using namespace defectforge;

int main(int argc, char** argv) {
  CLI::App app{"Write the procedural ball-screw fixture dataset"};
  std::string out;
  std::uint64_t seed = 7;
  bool metadata_only = false;
  app.add_option("--out", out, "output directory")->required();
  app.add_option("--seed", seed, "fixture seed")->capture_default_str();
  app.add_flag("--metadata-only", metadata_only, "write annotations.json without rendering images");
  CLI11_PARSE(app, argc, argv);
  try {
    const Dataset ds = make_fixture({}, seed);
    if (metadata_only) {
      Dataset copy = ds;
      copy.root = out;
      save_coco(copy, std::filesystem::path(out) / "annotations.json");
    } else {
      write_fixture(ds, out, seed);
    }
    std::cout << ds.images.size() << " images, " << ds.annotations.size() << " annotations in " << out << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

// Batch runner: gflow_lab <config.ini> [--output-dir D] [--workers N] [--seed-override S]
//               gflow_lab --list
//               gflow_lab --verify-manifest DIR

#include <CLI11.hpp>

#include <iostream>

#include "gflow/experiments.hpp"

int main(int argc, char** argv) {
  using namespace gflow::lab;
  CLI::App app{"gradient-flow experiment runner"};
  std::string config, output_dir, verify_dir;
  int workers = 0;
  std::uint64_t seed = 0;
  bool list = false;
  app.add_option("config", config, "experiment config (.ini)");
  auto* out_opt = app.add_option("--output-dir", output_dir, "override [experiment] output_dir");
  auto* workers_opt = app.add_option("--workers", workers, "worker threads (>= 1)");
  auto* seed_opt = app.add_option("--seed-override", seed, "replace every seed of the experiment");
  app.add_flag("--list", list, "print the experiment catalog");
  auto* verify_opt = app.add_option("--verify-manifest", verify_dir, "check a run directory against its manifest");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : exit_config;
  }

  if (list) {
    std::cout << catalog_text();
    return exit_pass;
  }
  if (*verify_opt) {
    try {
      const ManifestCheck r = verify_manifest(verify_dir);
      for (const auto& p : r.problems) std::cout << p << "\n";
      std::cout << (r.ok ? "manifest ok" : "manifest FAILED") << " (" << r.files << " files)\n";
      return r.ok ? exit_pass : exit_assertion;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return exit_config;
    }
  }
  if (config.empty()) {
    std::cerr << "error: a config file is required (or --list / --verify-manifest)\n";
    return exit_config;
  }

  Overrides ov;
  if (*out_opt) ov.output_dir = output_dir;
  if (*workers_opt) ov.workers = workers;
  if (*seed_opt) ov.seed = seed;
  ExperimentConfig cfg;
  try {
    cfg = load_config(config, ov);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_config;
  }
  try {
    return run_experiment(cfg, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_solver;
  }
}

#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "flhc/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Federated averaging with a hierarchical-clustering step"};
  app.require_subcommand(1);

  flhc::cli::Flags flags;
  std::uint64_t seed = 0;
  bool verbose = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", flags.config, "Experiment or sweep JSON")->required();
    cmd->add_flag("--fast", flags.fast, "FastMlp model and at most 8,000 train examples");
    cmd->add_flag("--baseline-only", flags.baseline_only, "Plain FL, no clustering step");
    cmd->add_option("--out", flags.out, "Output root directory")->capture_default_str();
    cmd->add_option("--seed", seed, "Override experiment and partition seeds");
    cmd->add_option("--jobs", flags.jobs, "Worker threads")->check(CLI::PositiveNumber);
    cmd->add_flag("-v,--verbose", verbose, "Log progress");
  };

  auto* run = app.add_subcommand("run", "Run FL and FL+HC experiments");
  add_common(run);
  run->add_flag("--parallel-runs", flags.parallel_runs, "Run sweep entries concurrently");
  auto* describe = app.add_subcommand("describe", "Print the resolved plan without training");
  add_common(describe);

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::info : spdlog::level::warn);
  if (run->count("--seed") || describe->count("--seed")) flags.seed = seed;

  if (*describe) return flhc::cli::describe(flags, std::cout, std::cerr);
  return flhc::cli::run(flags, std::cout, std::cerr);
}

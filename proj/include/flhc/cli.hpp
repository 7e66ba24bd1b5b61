#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>

#include "flhc/config.hpp"

namespace flhc::cli {

enum ExitCode : int {
  kOk = 0,
  kRunFailed = 1,
  kBadConfig = 2,
  kMissingData = 3,
  kOutputExists = 4,
};

struct Flags {
  std::filesystem::path config;
  bool baseline_only = false;
  bool fast = false;
  std::filesystem::path out = "runs";
  std::optional<std::uint64_t> seed;
  int jobs = 1;           // worker threads inside a run
  bool parallel_runs = false;  // spread sweep runs over `jobs` threads instead
};

/// --fast: FastMlp in place of the CNN, at most 8,000 train / 2,000 test examples.
void apply_fast(ExperimentConfig& cfg);

struct PlannedRun {
  ExperimentConfig config;  // overrides applied, data paths resolved
  std::string hash;         // of the config before path resolution
  std::filesystem::path dir;  // <out>/<hash>-seed<seed>
};

/// Parses the config file and expands any sweep, in sweep order.
std::vector<PlannedRun> plan_runs(const Flags& flags);

int run(const Flags& flags, std::ostream& out, std::ostream& err);

/// Prints partition sizes, parameter count, round plan and sweep size.
/// Never trains or initialises a model.
int describe(const Flags& flags, std::ostream& out, std::ostream& err);

}  // namespace flhc::cli

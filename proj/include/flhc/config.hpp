#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "flhc/experiment.hpp"

namespace flhc {

/// Malformed or invalid configuration (unknown key, wrong type, violated invariant).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Strict parse: unknown keys and type mismatches are errors. Missing keys
/// take their defaults. The result is validated.
ExperimentConfig parse_experiment_config(const nlohmann::json& j);

/// Every field, defaults included, in canonical form.
nlohmann::json to_json(const ExperimentConfig& cfg);

/// A base experiment plus axes over dotted config keys, e.g.
/// {"hp.client_fraction": [0.1, 0.2], "rounds_before_cluster": [1, 3]}.
struct SweepSpec {
  nlohmann::json base;
  std::map<std::string, std::vector<nlohmann::json>> axes;
  std::size_t max_runs = 256;
};

/// Either {"base": {...}, "axes": {...}, "max_runs": N} or a plain experiment
/// (which becomes a sweep with no axes).
SweepSpec parse_sweep(const nlohmann::json& j);

/// Cross product of the axes applied to the base, in lexicographic axis order.
std::vector<ExperimentConfig> expand(const SweepSpec& sweep);

std::size_t planned_runs(const SweepSpec& sweep);

/// Reads a JSON config file; relative data paths resolve against the file's
/// directory, then against $FLHC_DATA_DIR.
nlohmann::json read_config_file(const std::filesystem::path& path);
void resolve_data_paths(ExperimentConfig& cfg, const std::filesystem::path& config_dir);

/// 12 hex digits of FNV-1a over the canonical JSON of the config.
std::string config_hash(const ExperimentConfig& cfg);

std::string to_string(PartitionKind k);
std::string to_string(Architecture a);

}  // namespace flhc

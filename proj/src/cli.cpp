#include "flhc/cli.hpp"

#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

namespace flhc::cli {

namespace {

constexpr std::int64_t kFastTrainCap = 8000;
constexpr std::int64_t kFastTestCap = 2000;

std::string with_commas(std::int64_t v) {
  std::string s = std::to_string(v);
  for (int i = int(s.size()) - 3; i > 0; i -= 3) s.insert(std::size_t(i), ",");
  return s;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text << '\n';
}

void write_run(const std::filesystem::path& dir, const ExperimentConfig& cfg,
               const ExperimentResult& result) {
  std::filesystem::create_directories(dir);
  write_csv(result.rounds, dir / "metrics.csv");
  write_cluster_csv(result.rounds, dir / "clusters.csv");
  write_text(dir / "config.json", to_json(cfg).dump(2));
  if (result.dendrogram) {
    write_text(dir / "dendrogram.json", dendrogram_json(*result.dendrogram));
    nlohmann::json clusters = result.cluster_client_ids;
    write_text(dir / "assignment.json", clusters.dump());
  }
}

std::string data_key(const ExperimentConfig& cfg) {
  const auto j = to_json(cfg);
  return j["data"].dump() + j["partition"].dump() + j["model"]["input_shape"].dump() +
         j["model"]["num_classes"].dump();
}

// Client lists shared by sweep runs over the same data and partition.
class ClientCache {
 public:
  const std::vector<ClientDataset>& get(const ExperimentConfig& cfg) {
    std::lock_guard lock(mutex_);
    auto [it, inserted] = cache_.try_emplace(data_key(cfg));
    if (inserted) {
      try {
        it->second = prepare_clients(cfg);
      } catch (...) {
        cache_.erase(it);
        throw;
      }
    }
    return it->second;
  }

 private:
  std::mutex mutex_;
  std::map<std::string, std::vector<ClientDataset>> cache_;
};

std::string summary_line(const std::string& label, const ExperimentResult& r) {
  const RoundMetrics& last = r.rounds.back();
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s: round %d mean accuracy %.4f, %.1f%% clients at target, %d cluster(s)",
                label.c_str(), last.round, last.mean_test_accuracy, last.pct_clients_at_target,
                last.num_clusters);
  return buf;
}

std::string execute(const PlannedRun& planned, ClientCache& cache, int jobs) {
  const ExperimentConfig& cfg = planned.config;
  const auto& clients = cache.get(cfg);
  std::ostringstream log;
  log << planned.dir.string() << '\n';

  ExperimentConfig baseline = cfg;
  baseline.baseline_mode = true;
  const ExperimentResult fl = run_experiment(baseline, clients, {jobs, {}});
  write_run(planned.dir / "fl", baseline, fl);
  log << "  " << summary_line("fl", fl) << '\n';
  if (cfg.baseline_mode) return log.str();

  const ExperimentResult hc = run_experiment(cfg, clients, {jobs, {}});
  write_run(planned.dir / "flhc", cfg, hc);
  const int post = cfg.rounds_before_cluster + 1;
  const ComparisonReport report = compare(hc.rounds, fl.rounds, post, cfg.total_rounds);
  write_text(planned.dir / "comparison.json", comparison_json(report, post, cfg.total_rounds));
  log << "  " << summary_line("fl+hc", hc) << '\n'
      << "  ratios (post-cluster / final): accuracy " << format_ratio(report.post_cluster_acc_ratio)
      << " / " << format_ratio(report.final_acc_ratio) << ", clients at target "
      << format_ratio(report.post_cluster_pct_ratio) << " / " << format_ratio(report.final_pct_ratio)
      << '\n';
  return log.str();
}

}  // namespace

void apply_fast(ExperimentConfig& cfg) {
  cfg.model.architecture = Architecture::FastMlp;
  cfg.data.max_examples = std::min(cfg.data.max_examples.value_or(kFastTrainCap), kFastTrainCap);
  cfg.data.max_test_examples =
      std::min(cfg.data.max_test_examples.value_or(kFastTestCap), kFastTestCap);
}

std::vector<PlannedRun> plan_runs(const Flags& flags) {
  const SweepSpec sweep = parse_sweep(read_config_file(flags.config));
  const auto config_dir = std::filesystem::absolute(flags.config).parent_path();
  std::vector<PlannedRun> runs;
  std::set<std::filesystem::path> dirs;
  for (ExperimentConfig cfg : expand(sweep)) {
    if (flags.seed) {
      cfg.experiment_seed = *flags.seed;
      cfg.partition.seed = *flags.seed;
    }
    if (flags.fast) apply_fast(cfg);
    if (flags.baseline_only) cfg.baseline_mode = true;
    try {
      cfg.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    PlannedRun r;
    r.hash = config_hash(cfg);
    r.dir = flags.out / (r.hash + "-seed" + std::to_string(cfg.experiment_seed));
    if (!dirs.insert(r.dir).second)
      throw ConfigError("sweep produces two identical runs (" + r.dir.string() + ")");
    resolve_data_paths(cfg, config_dir);
    r.config = std::move(cfg);
    runs.push_back(std::move(r));
  }
  return runs;
}

int run(const Flags& flags, std::ostream& out, std::ostream& err) {
  std::vector<PlannedRun> runs;
  try {
    runs = plan_runs(flags);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kBadConfig;
  }
  for (const auto& r : runs)
    if (std::filesystem::exists(r.dir)) {
      err << "output directory already exists, refusing to overwrite: " << r.dir.string() << '\n';
      return kOutputExists;
    }

  ClientCache cache;
  std::vector<std::string> logs(runs.size());
  try {
    if (flags.parallel_runs) {
      parallel_for(runs.size(), flags.jobs,
                   [&](std::size_t i) { logs[i] = execute(runs[i], cache, 1); });
    } else {
      for (std::size_t i = 0; i < runs.size(); ++i) {
        logs[i] = execute(runs[i], cache, flags.jobs);
        out << logs[i] << std::flush;
      }
    }
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kMissingData;
  } catch (const std::exception& e) {
    err << "run failed: " << e.what() << '\n';
    return kRunFailed;
  }
  if (flags.parallel_runs)
    for (const auto& l : logs) out << l;
  return kOk;
}

int describe(const Flags& flags, std::ostream& out, std::ostream& err) {
  std::vector<PlannedRun> runs;
  std::size_t sweep_runs = 0;
  try {
    runs = plan_runs(flags);
    sweep_runs = runs.size();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kBadConfig;
  }

  const ExperimentConfig& cfg = runs.front().config;
  out << "config: " << flags.config.string() << '\n';
  try {
    if (cfg.partition.kind == PartitionKind::Prepartitioned) {
      const auto clients = load_prepartitioned(cfg.data.prepartitioned);
      Eigen::Index lo = clients.front().n_k(), hi = lo;
      for (const auto& c : clients) {
        lo = std::min(lo, c.n_k());
        hi = std::max(hi, c.n_k());
      }
      out << "partition: prepartitioned, " << clients.size() << " clients, " << lo << "-" << hi
          << " train examples each\n";
    } else {
      std::int64_t pool = idx_item_count(cfg.data.train_images);
      if (cfg.data.max_examples) pool = std::min(pool, *cfg.data.max_examples);
      const auto [train, test] = planned_client_size(cfg.partition, pool);
      out << "partition: " << to_string(cfg.partition.kind) << ", " << cfg.partition.num_clients
          << " clients × " << train << " train / " << test << " test\n";
    }
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kMissingData;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << '\n';
    return kBadConfig;
  }

  out << "model: " << to_string(cfg.model.architecture) << ", "
      << with_commas(parameter_count(cfg.model)) << " parameters\n";
  if (cfg.baseline_mode) {
    out << "rounds: " << cfg.total_rounds << " FL rounds, no clustering\n";
  } else {
    out << "rounds: " << cfg.rounds_before_cluster << " FL rounds, clustering pass ("
        << to_string(cfg.clustering.linkage) << "/" << to_string(cfg.clustering.metric)
        << ", threshold " << cfg.clustering.threshold << "), then "
        << cfg.total_rounds - cfg.rounds_before_cluster << " per-cluster rounds ("
        << cfg.total_rounds << " total)\n";
  }
  out << "client fraction: " << cfg.hp.client_fraction << " (" << cfg.hp.local_epochs
      << " epochs, batch " << cfg.hp.batch_size << ", learning rate " << cfg.hp.learning_rate
      << ")\n";
  out << "sweep: " << sweep_runs << " planned run" << (sweep_runs == 1 ? "" : "s") << '\n';
  for (const auto& r : runs) out << "  " << r.dir.string() << '\n';
  return kOk;
}

}  // namespace flhc::cli

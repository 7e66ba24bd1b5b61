#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flhc/data.hpp"
#include "flhc/fedavg.hpp"
#include "flhc/hac.hpp"
#include "flhc/metrics.hpp"
#include "flhc/model.hpp"

namespace flhc {

/// Where client data comes from. Synthetic partitions read an IDX train
/// pool and an IDX test pool; `prepartitioned` names a JSON client file.
struct DataSource {
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
  std::optional<std::int64_t> max_examples;       // cap on the train pool
  std::optional<std::int64_t> max_test_examples;  // cap on the test pool
  std::string prepartitioned;
};

struct ExperimentConfig {
  DataSource data;
  PartitionScheme partition;
  ModelSpec model;
  TrainingHyperparams hp;
  int rounds_before_cluster = 10;
  int total_rounds = 50;
  ClusteringConfig clustering;
  double target_accuracy = 0.99;
  bool baseline_mode = false;
  bool weight_accuracy_by_samples = false;
  std::uint64_t experiment_seed = 0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// One model per cluster; `members` holds client positions in the client list.
struct ClusterState {
  ClusterAssignment assignment;
  std::vector<ParameterVector> per_cluster_params;
};

struct ExperimentResult {
  std::vector<RoundMetrics> rounds;
  ParameterVector pre_cluster_global;  // model after the warm-up rounds
  std::optional<Dendrogram> dendrogram;
  ClusterState state;  // a single all-client cluster for plain FL
  /// Client ids per cluster (same order as state.assignment).
  std::vector<std::vector<int>> cluster_client_ids;
};

struct RunOptions {
  int jobs = 1;
  std::function<void(const RoundMetrics&)> on_round;
};

/// Loads (and, for synthetic schemes, partitions) the clients named by the config.
std::vector<ClientDataset> prepare_clients(const ExperimentConfig& cfg);

/// Local-minus-global update of every client after one full-participation
/// ClientUpdate pass from `global`. Entries follow the order of `clients`.
std::vector<Eigen::VectorXd> collect_deltas(const ModelSpec& spec, const ParameterVector& global,
                                            std::span<const ClientDataset* const> clients,
                                            const TrainingHyperparams& hp,
                                            std::uint64_t experiment_seed, int round, int jobs = 1);

/// Accuracy of every client on its own test set under its cluster's model.
/// `members` are positions into `clients`; one model per cluster.
RoundMetrics evaluate(const ModelSpec& spec, std::span<const ParameterVector> models,
                      const std::vector<std::vector<int>>& members,
                      std::span<const ClientDataset* const> clients, double target_accuracy,
                      bool weight_by_samples = false);

double client_accuracy(const ModelSpec& spec, const ParameterVector& params,
                       const ClientDataset& client);

/// Warm-up FL rounds, a clustering pass on update deltas, a threshold cut,
/// then independent FL per cluster. In baseline mode every round is plain FL.
ExperimentResult run_experiment(const ExperimentConfig& cfg, std::span<const ClientDataset> clients,
                                const RunOptions& options = {});

}  // namespace flhc

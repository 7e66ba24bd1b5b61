#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "flhc/data.hpp"
#include "flhc/model.hpp"
#include "flhc/rng.hpp"

namespace flhc {

struct TrainingHyperparams {
  int local_epochs = 3;
  int batch_size = 10;
  double learning_rate = 0.1;
  double client_fraction = 0.2;

  void validate() const;
};

/// E epochs of mini-batch SGD on the client's training set. Batch order is
/// reshuffled every epoch from `seed`; the final batch may be partial.
ParameterVector client_update(const ModelSpec& spec, const ParameterVector& params,
                              const ClientDataset& client, const TrainingHyperparams& hp,
                              std::uint64_t seed);

/// max(floor(alpha * K), 1) of the positions 0..K-1, uniformly without
/// replacement, returned in ascending order.
std::vector<int> sample_clients(int num_clients, double client_fraction, Rng& rng);

int sample_size(int num_clients, double client_fraction);

struct WeightedUpdate {
  const ParameterVector* params;
  Eigen::Index n_k;
};

/// sum_k (n_k / N) w_k over the given updates, accumulated in argument order.
ParameterVector aggregate(std::span<const WeightedUpdate> updates);

struct RoundResult {
  ParameterVector new_global;
  std::vector<int> participating;  // client ids, ascending
  std::map<int, ParameterVector> per_client_update;
};

/// Identifies a round in the seed tree: sampling is keyed on
/// (experiment_seed, round, sampling_key) and every client's local training
/// on (experiment_seed, stream, round, client_id).
struct RoundKey {
  std::uint64_t experiment_seed = 0;
  int round = 1;
  std::uint64_t sampling_key = 0;
  Stream stream = Stream::LocalTraining;
};

struct RoundOptions {
  int jobs = 1;
  bool keep_client_updates = false;
};

RoundResult run_round(const ModelSpec& spec, const ParameterVector& global,
                      std::span<const ClientDataset* const> clients, const TrainingHyperparams& hp,
                      const RoundKey& key, const RoundOptions& options = {});

std::uint64_t client_seed(const RoundKey& key, int client_id);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace flhc

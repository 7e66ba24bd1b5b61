#include "flhc/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace flhc {

using Eigen::Index;

namespace {

LabelledDataset head(LabelledDataset d, std::optional<std::int64_t> cap) {
  if (!cap || *cap >= d.size()) return d;
  if (*cap < 1) throw std::invalid_argument("example caps must be positive");
  std::vector<Index> idx(static_cast<std::size_t>(*cap));
  std::iota(idx.begin(), idx.end(), Index(0));
  return d.subset(idx);
}

std::vector<const ClientDataset*> sorted_by_id(std::span<const ClientDataset> clients) {
  std::vector<const ClientDataset*> out;
  for (const auto& c : clients) out.push_back(&c);
  std::sort(out.begin(), out.end(),
            [](const auto* a, const auto* b) { return a->client_id < b->client_id; });
  for (std::size_t i = 1; i < out.size(); ++i)
    if (out[i]->client_id == out[i - 1]->client_id)
      throw std::invalid_argument("duplicate client id " + std::to_string(out[i]->client_id));
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  partition.validate();
  model.validate();
  hp.validate();
  if (!baseline_mode) clustering.validate();
  if (rounds_before_cluster < 0)
    throw std::invalid_argument("rounds_before_cluster must be >= 0");
  if (total_rounds < 1) throw std::invalid_argument("total_rounds must be >= 1");
  if (rounds_before_cluster >= total_rounds)
    throw std::invalid_argument("rounds_before_cluster must be less than total_rounds");
  if (!(target_accuracy > 0.0 && target_accuracy <= 1.0))
    throw std::invalid_argument("target_accuracy must lie in (0, 1]");
  if (partition.kind == PartitionKind::Prepartitioned) {
    if (data.prepartitioned.empty())
      throw std::invalid_argument("data.prepartitioned is required for pre-partitioned data");
  } else if (data.train_images.empty() || data.train_labels.empty() || data.test_images.empty() ||
             data.test_labels.empty()) {
    throw std::invalid_argument("data needs train_images, train_labels, test_images, test_labels");
  }
}

std::vector<ClientDataset> prepare_clients(const ExperimentConfig& cfg) {
  std::vector<ClientDataset> clients;
  if (cfg.partition.kind == PartitionKind::Prepartitioned) {
    clients = load_prepartitioned(cfg.data.prepartitioned);
  } else {
    const int classes = cfg.model.num_classes;
    LabelledDataset train =
        head(load_idx(cfg.data.train_images, cfg.data.train_labels, classes), cfg.data.max_examples);
    LabelledDataset test = head(load_idx(cfg.data.test_images, cfg.data.test_labels, classes),
                                cfg.data.max_test_examples);
    clients = make_partition(cfg.partition, train, test);
  }
  for (const auto& c : clients)
    if (!(c.train.shape == cfg.model.input_shape))
      throw std::invalid_argument("dataset shape does not match model.input_shape");
  return clients;
}

std::vector<Eigen::VectorXd> collect_deltas(const ModelSpec& spec, const ParameterVector& global,
                                            std::span<const ClientDataset* const> clients,
                                            const TrainingHyperparams& hp,
                                            std::uint64_t experiment_seed, int round, int jobs) {
  const RoundKey key{experiment_seed, round, 0, Stream::ClusteringPass};
  std::vector<Eigen::VectorXd> deltas(clients.size());
  parallel_for(clients.size(), jobs, [&](std::size_t i) {
    const ClientDataset& c = *clients[i];
    deltas[i] = client_update(spec, global, c, hp, client_seed(key, c.client_id)).values - global.values;
  });
  return deltas;
}

double client_accuracy(const ModelSpec& spec, const ParameterVector& params,
                       const ClientDataset& client) {
  if (client.test.size() == 0) throw std::invalid_argument("client has no test examples");
  const auto predicted = predict_batch(spec, params, client.test.examples);
  Index correct = 0;
  for (Index i = 0; i < client.test.size(); ++i) correct += predicted[i] == client.test.labels[i];
  return double(correct) / double(client.test.size());
}

RoundMetrics evaluate(const ModelSpec& spec, std::span<const ParameterVector> models,
                      const std::vector<std::vector<int>>& members,
                      std::span<const ClientDataset* const> clients, double target_accuracy,
                      bool weight_by_samples) {
  if (models.size() != members.size())
    throw std::invalid_argument("need exactly one model per cluster");
  std::vector<int> seen(clients.size(), 0);
  RoundMetrics m;
  m.num_clusters = int(members.size());
  double weighted_sum = 0.0, weight_total = 0.0;
  int at_target = 0;
  for (std::size_t c = 0; c < members.size(); ++c) {
    double cluster_sum = 0.0;
    for (int pos : members[c]) {
      ++seen.at(pos);
      const ClientDataset& client = *clients[pos];
      const double acc = client_accuracy(spec, models[c], client);
      const double w = weight_by_samples ? double(client.n_k()) : 1.0;
      weighted_sum += w * acc;
      weight_total += w;
      cluster_sum += acc;
      // Accuracies are ratios of small integers; the slack absorbs rounding.
      if (acc >= target_accuracy - 1e-12) ++at_target;
    }
    m.per_cluster.push_back({int(c), int(members[c].size()),
                             members[c].empty() ? 0.0 : cluster_sum / double(members[c].size())});
  }
  if (std::any_of(seen.begin(), seen.end(), [](int s) { return s != 1; }))
    throw std::invalid_argument("every client must belong to exactly one cluster");
  m.mean_test_accuracy = weighted_sum / weight_total;
  m.pct_clients_at_target = 100.0 * double(at_target) / double(clients.size());
  return m;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, std::span<const ClientDataset> clients,
                                const RunOptions& options) {
  cfg.validate();
  if (clients.empty()) throw std::invalid_argument("no clients");
  const auto ordered = sorted_by_id(clients);
  const ModelSpec& spec = cfg.model;
  const int warmup = cfg.baseline_mode ? cfg.total_rounds : cfg.rounds_before_cluster;
  using Clock = std::chrono::steady_clock;
  auto elapsed_ms = [](Clock::time_point since) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - since).count();
  };

  ExperimentResult result;
  std::vector<int> all(ordered.size());
  std::iota(all.begin(), all.end(), 0);
  result.state.assignment.clusters = {all};
  result.state.per_cluster_params = {
      init_parameters(spec, derive_seed({cfg.experiment_seed, std::uint64_t(Stream::Init)}))};

  auto record = [&](RoundMetrics m, int round, Clock::time_point start) {
    m.round = round;
    m.wall_time_ms = elapsed_ms(start);
    if (options.on_round) options.on_round(m);
    result.rounds.push_back(std::move(m));
  };

  // Sampling within a cluster is keyed on its smallest client id, so a
  // single all-client cluster samples exactly like plain FL.
  auto cluster_round = [&](std::size_t c, int round, int jobs) {
    const auto& members = result.state.assignment.clusters[c];
    std::vector<const ClientDataset*> group;
    for (int pos : members) group.push_back(ordered[pos]);
    const RoundKey key{cfg.experiment_seed, round, std::uint64_t(group.front()->client_id),
                       Stream::LocalTraining};
    result.state.per_cluster_params[c] =
        run_round(spec, result.state.per_cluster_params[c], group, cfg.hp, key, {jobs, false})
            .new_global;
  };

  for (int t = 1; t <= warmup; ++t) {
    const auto start = Clock::now();
    cluster_round(0, t, options.jobs);
    record(evaluate(spec, result.state.per_cluster_params, result.state.assignment.clusters,
                    ordered, cfg.target_accuracy, cfg.weight_accuracy_by_samples),
           t, start);
  }
  result.pre_cluster_global = result.state.per_cluster_params.front();

  if (!cfg.baseline_mode) {
    const auto deltas = collect_deltas(spec, result.pre_cluster_global, ordered, cfg.hp,
                                       cfg.experiment_seed, warmup, options.jobs);
    result.dendrogram =
        build_dendrogram(deltas, cfg.clustering.metric, cfg.clustering.linkage);
    result.state.assignment = cut_by_threshold(*result.dendrogram, cfg.clustering.threshold);
    result.state.per_cluster_params.assign(result.state.assignment.size(), result.pre_cluster_global);
    spdlog::info("clustering after round {}: {} cluster(s)", warmup, result.state.assignment.size());

    const std::size_t nclusters = result.state.assignment.size();
    for (int t = warmup + 1; t <= cfg.total_rounds; ++t) {
      const auto start = Clock::now();
      if (nclusters == 1) {
        cluster_round(0, t, options.jobs);
      } else {
        parallel_for(nclusters, options.jobs, [&](std::size_t c) { cluster_round(c, t, 1); });
      }
      record(evaluate(spec, result.state.per_cluster_params, result.state.assignment.clusters,
                      ordered, cfg.target_accuracy, cfg.weight_accuracy_by_samples),
             t, start);
    }
  }

  for (const auto& members : result.state.assignment.clusters) {
    std::vector<int> ids;
    for (int pos : members) ids.push_back(ordered[pos]->client_id);
    result.cluster_client_ids.push_back(std::move(ids));
  }
  return result;
}

}  // namespace flhc

#include "flhc/fedavg.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace flhc {

using Eigen::Index;

void TrainingHyperparams::validate() const {
  if (local_epochs < 1) throw std::invalid_argument("hp.local_epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("hp.batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("hp.learning_rate must be >= 0");
  if (!(client_fraction > 0.0 && client_fraction <= 1.0))
    throw std::invalid_argument("hp.client_fraction must lie in (0, 1]");
}

ParameterVector client_update(const ModelSpec& spec, const ParameterVector& params,
                              const ClientDataset& client, const TrainingHyperparams& hp,
                              std::uint64_t seed) {
  hp.validate();
  if (client.n_k() == 0) throw std::invalid_argument("client has no training examples");

  ParameterVector w = params;
  Eigen::VectorXd grad;
  Rng rng = make_rng(seed);
  std::vector<Index> order(client.n_k());
  std::iota(order.begin(), order.end(), Index(0));
  std::vector<Index> idx;
  std::vector<int> labels;
  Eigen::MatrixXd inputs;
  for (int epoch = 0; epoch < hp.local_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Index start = 0; start < client.n_k(); start += hp.batch_size) {
      const Index end = std::min<Index>(start + hp.batch_size, client.n_k());
      idx.assign(order.begin() + start, order.begin() + end);
      inputs = client.train.examples(Eigen::all, idx);
      labels.clear();
      for (Index i : idx) labels.push_back(client.train.labels[i]);
      loss_and_gradient(spec, w.values, inputs, labels, grad);
      w.values.noalias() -= hp.learning_rate * grad;
    }
  }
  return w;
}

int sample_size(int num_clients, double client_fraction) {
  // The epsilon keeps products such as 0.29 * 100 from flooring to 28.
  const int m = int(std::floor(client_fraction * num_clients + 1e-9));
  return std::clamp(m, 1, num_clients);
}

std::vector<int> sample_clients(int num_clients, double client_fraction, Rng& rng) {
  if (num_clients < 1) throw std::invalid_argument("need at least one client");
  std::vector<int> ids(num_clients);
  std::iota(ids.begin(), ids.end(), 0);
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(sample_size(num_clients, client_fraction));
  std::sort(ids.begin(), ids.end());
  return ids;
}

ParameterVector aggregate(std::span<const WeightedUpdate> updates) {
  if (updates.empty()) throw std::invalid_argument("nothing to aggregate");
  const Index len = updates.front().params->size();
  double total = 0.0;
  for (const auto& u : updates) {
    if (u.params->size() != len) throw std::invalid_argument("update lengths differ");
    if (u.n_k < 1) throw std::invalid_argument("update with no samples");
    total += double(u.n_k);
  }
  ParameterVector out;
  out.layout = updates.front().params->layout;
  if (updates.size() == 1) {
    out.values = updates.front().params->values;
    return out;
  }
  out.values = Eigen::VectorXd::Zero(len);
  for (const auto& u : updates) out.values.noalias() += (double(u.n_k) / total) * u.params->values;
  return out;
}

std::uint64_t client_seed(const RoundKey& key, int client_id) {
  return derive_seed({key.experiment_seed, std::uint64_t(key.stream), std::uint64_t(key.round),
                      std::uint64_t(client_id)});
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(std::max(jobs, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < workers; ++t)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
  }
  if (error) std::rethrow_exception(error);
}

RoundResult run_round(const ModelSpec& spec, const ParameterVector& global,
                      std::span<const ClientDataset* const> clients, const TrainingHyperparams& hp,
                      const RoundKey& key, const RoundOptions& options) {
  if (clients.empty()) throw std::invalid_argument("run_round needs at least one client");
  hp.validate();

  Rng rng = make_rng(derive_seed({key.experiment_seed, std::uint64_t(Stream::Sampling),
                                  std::uint64_t(key.round), key.sampling_key}));
  std::vector<int> picked = sample_clients(int(clients.size()), hp.client_fraction, rng);
  // Reduction order is ascending client id, independent of list order.
  std::sort(picked.begin(), picked.end(),
            [&](int a, int b) { return clients[a]->client_id < clients[b]->client_id; });

  std::vector<ParameterVector> local(picked.size());
  parallel_for(picked.size(), options.jobs, [&](std::size_t i) {
    const ClientDataset& c = *clients[picked[i]];
    local[i] = client_update(spec, global, c, hp, client_seed(key, c.client_id));
  });

  std::vector<WeightedUpdate> updates;
  RoundResult result;
  for (std::size_t i = 0; i < picked.size(); ++i) {
    updates.push_back({&local[i], clients[picked[i]]->n_k()});
    result.participating.push_back(clients[picked[i]]->client_id);
  }
  result.new_global = aggregate(updates);
  if (options.keep_client_updates)
    for (std::size_t i = 0; i < picked.size(); ++i)
      result.per_client_update.emplace(result.participating[i], std::move(local[i]));
  return result;
}

}  // namespace flhc

#include <algorithm>
#include <random>
#include <set>

#include "doctest.h"
#include "flhc/fedavg.hpp"
#include "oracles.hpp"

using namespace flhc;

namespace {

ModelSpec tiny_spec() {
  ModelSpec s;
  s.architecture = Architecture::FastMlp;
  s.input_shape = {1, 4, 1};
  s.hidden_units = 5;
  s.num_classes = 3;
  return s;
}

ClientDataset make_client(int id, int n, std::mt19937_64& g, const ModelSpec& spec) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> lab(0, spec.num_classes - 1);
  ClientDataset c;
  c.client_id = id;
  c.train.shape = spec.input_shape;
  c.train.class_count = spec.num_classes;
  c.train.examples.resize(spec.input_shape.size(), n);
  for (Eigen::Index i = 0; i < c.train.examples.size(); ++i) c.train.examples.data()[i] = u(g);
  for (int i = 0; i < n; ++i) c.train.labels.push_back(lab(g));
  c.test = c.train;
  return c;
}

std::vector<const ClientDataset*> pointers(const std::vector<ClientDataset>& cs) {
  std::vector<const ClientDataset*> out;
  for (const auto& c : cs) out.push_back(&c);
  return out;
}

}  // namespace

TEST_CASE("sample sizes") {
  CHECK(sample_size(100, 0.2) == 20);
  CHECK(sample_size(5, 0.01) == 1);
  CHECK(sample_size(10, 1.0) == 10);
  CHECK(sample_size(100, 0.29) == 29);
  CHECK(sample_size(20, 0.5) == 10);

  Rng rng(3);
  const auto all = sample_clients(10, 1.0, rng);
  CHECK(all == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});

  for (int t = 0; t < 50; ++t) {
    Rng a(t), b(t);
    const auto s = sample_clients(37, 0.3, a);
    CHECK(s == sample_clients(37, 0.3, b));
    CHECK(s.size() == 11);
    CHECK(std::is_sorted(s.begin(), s.end()));
    CHECK(std::set<int>(s.begin(), s.end()).size() == s.size());
    CHECK(s.front() >= 0);
    CHECK(s.back() < 37);
  }
}

TEST_CASE("aggregate weights by sample count") {
  ParameterVector a{Eigen::VectorXd::Constant(1, 0.0), {}};
  ParameterVector b{Eigen::VectorXd::Constant(1, 4.0), {}};
  std::vector<WeightedUpdate> u = {{&a, 1}, {&b, 3}};
  CHECK(aggregate(u).values[0] == doctest::Approx(3.0));

  ParameterVector c{Eigen::VectorXd::LinSpaced(5, -1.0, 1.0 / 3.0), {}};
  std::vector<WeightedUpdate> one = {{&c, 7}};
  CHECK(aggregate(one).values == c.values);

  CHECK_THROWS_AS(aggregate(std::span<const WeightedUpdate>{}), std::invalid_argument);
  ParameterVector d{Eigen::VectorXd::Zero(2), {}};
  std::vector<WeightedUpdate> mismatched = {{&a, 1}, {&d, 1}};
  CHECK_THROWS_AS(aggregate(mismatched), std::invalid_argument);
}

TEST_CASE("aggregate is a convex combination") {
  std::mt19937_64 g(99);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int t = 0; t < 100; ++t) {
    const int k = 1 + int(g() % 8), len = 1 + int(g() % 20);
    std::vector<ParameterVector> ps(k);
    std::vector<WeightedUpdate> us;
    for (int i = 0; i < k; ++i) {
      ps[i].values.resize(len);
      for (auto& v : ps[i].values) v = n(g);
      us.push_back({&ps[i], 1 + Eigen::Index(g() % 500)});
    }
    const auto out = aggregate(us).values;
    for (int j = 0; j < len; ++j) {
      double lo = ps[0].values[j], hi = lo;
      for (const auto& p : ps) {
        lo = std::min(lo, p.values[j]);
        hi = std::max(hi, p.values[j]);
      }
      CHECK(out[j] >= lo - 1e-12);
      CHECK(out[j] <= hi + 1e-12);
    }
    // identical inputs come back unchanged
    std::vector<WeightedUpdate> same;
    for (int i = 0; i < k; ++i) same.push_back({&ps[0], us[i].n_k});
    CHECK((aggregate(same).values - ps[0].values).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const auto spec = tiny_spec();
  std::mt19937_64 g(1);
  std::vector<ClientDataset> cs;
  for (int k = 0; k < 6; ++k) cs.push_back(make_client(k, 7 + k, g, spec));
  const auto w = init_parameters(spec, 1);
  TrainingHyperparams hp;
  hp.learning_rate = 0.0;
  hp.client_fraction = 0.5;
  CHECK(client_update(spec, w, cs[0], hp, 5).values == w.values);
  const auto ptrs = pointers(cs);
  const auto r = run_round(spec, w, ptrs, hp, {1, 1, 0});
  CHECK((r.new_global.values - w.values).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(r.participating.size() == 3);
}

TEST_CASE("one full batch step matches a hand computed gradient step") {
  const auto spec = tiny_spec();
  std::mt19937_64 g(2);
  const auto c = make_client(0, 6, g, spec);
  const auto w = init_parameters(spec, 2);
  TrainingHyperparams hp;
  hp.local_epochs = 1;
  hp.batch_size = 6;
  hp.learning_rate = 0.3;
  const auto lg = loss_and_gradient(spec, w, c.train.examples, c.train.labels);
  const Eigen::VectorXd expected = w.values - 0.3 * lg.grad.values;
  CHECK((client_update(spec, w, c, hp, 77).values - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("client update matches straight-line sgd with partial batches") {
  const auto spec = tiny_spec();
  std::mt19937_64 g(3);
  for (int t = 0; t < 10; ++t) {
    const auto c = make_client(t, 5 + int(g() % 20), g, spec);
    const auto w = init_parameters(spec, g());
    TrainingHyperparams hp;
    hp.local_epochs = 1 + int(g() % 3);
    hp.batch_size = 1 + int(g() % 7);
    hp.learning_rate = 0.05;
    const std::uint64_t seed = g();
    const auto got = client_update(spec, w, c, hp, seed);
    const auto want = oracle::local_sgd(spec, w, c, hp, seed);
    CHECK((got.values - want.values).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(client_update(spec, w, c, hp, seed).values == got.values);
  }
}

TEST_CASE("full participation with one full batch step is gradient descent on the union") {
  const auto spec = tiny_spec();
  std::mt19937_64 g(4);
  std::vector<ClientDataset> cs;
  std::vector<int> sizes = {3, 8, 5, 2};
  for (int k = 0; k < 4; ++k) cs.push_back(make_client(k, sizes[k], g, spec));

  Eigen::MatrixXd all(spec.input_shape.size(), 18);
  std::vector<int> labels;
  Eigen::Index col = 0;
  for (const auto& c : cs) {
    all.middleCols(col, c.n_k()) = c.train.examples;
    col += c.n_k();
    labels.insert(labels.end(), c.train.labels.begin(), c.train.labels.end());
  }

  TrainingHyperparams hp;
  hp.local_epochs = 1;
  hp.batch_size = 100;
  hp.learning_rate = 0.2;
  hp.client_fraction = 1.0;
  const auto w = init_parameters(spec, 4);
  const auto ptrs = pointers(cs);
  const auto r = run_round(spec, w, ptrs, hp, {9, 1, 0});
  const auto lg = loss_and_gradient(spec, w, all, labels);
  CHECK((r.new_global.values - (w.values - 0.2 * lg.grad.values)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(r.participating == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("run_round against a sequential oracle") {
  const auto spec = tiny_spec();
  std::mt19937_64 g(5);
  std::vector<ClientDataset> cs;
  for (int k = 0; k < 9; ++k) cs.push_back(make_client(k, 4 + int(g() % 12), g, spec));
  const auto w = init_parameters(spec, 5);
  TrainingHyperparams hp;
  hp.batch_size = 3;
  hp.client_fraction = 0.4;
  const RoundKey key{17, 4, 0};
  const auto ptrs = pointers(cs);
  const auto r = run_round(spec, w, ptrs, hp, key, {1, true});

  Rng rng(derive_seed({17, std::uint64_t(Stream::Sampling), 4, 0}));
  const auto picked = sample_clients(9, 0.4, rng);
  CHECK(r.participating == picked);
  double total = 0.0;
  for (int k : picked) total += double(cs[k].n_k());
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(w.size());
  for (int k : picked) {
    const auto local = oracle::local_sgd(spec, w, cs[k], hp, client_seed(key, k));
    CHECK((r.per_client_update.at(k).values - local.values).cwiseAbs().maxCoeff() < 1e-12);
    expected += double(cs[k].n_k()) / total * local.values;
  }
  CHECK((r.new_global.values - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("run_round is deterministic and independent of worker count") {
  const auto spec = tiny_spec();
  std::mt19937_64 g(6);
  std::vector<ClientDataset> cs;
  for (int k = 0; k < 12; ++k) cs.push_back(make_client(k, 10 + int(g() % 30), g, spec));
  const auto w = init_parameters(spec, 6);
  TrainingHyperparams hp;
  hp.client_fraction = 0.5;
  const auto ptrs = pointers(cs);
  for (int round = 1; round <= 5; ++round) {
    const RoundKey key{3, round, 0};
    const auto a = run_round(spec, w, ptrs, hp, key, {1});
    const auto b = run_round(spec, w, ptrs, hp, key, {4});
    const auto c = run_round(spec, w, ptrs, hp, key, {1});
    CHECK(a.new_global.values == b.new_global.values);
    CHECK(a.new_global.values == c.new_global.values);
    CHECK(a.participating == b.participating);
  }
  const auto r1 = run_round(spec, w, ptrs, hp, {3, 1, 0});
  const auto r2 = run_round(spec, w, ptrs, hp, {3, 2, 0});
  CHECK(r1.participating != r2.participating);
}

TEST_CASE("parallel_for visits every index once and propagates errors") {
  std::vector<int> hits(100, 0);
  parallel_for(100, 4, [&](std::size_t i) { hits[i] += 1; });
  CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
  CHECK_THROWS_AS(parallel_for(10, 3,
                               [](std::size_t i) {
                                 if (i == 7) throw std::runtime_error("boom");
                               }),
                  std::runtime_error);
}

TEST_CASE("hyperparameter validation") {
  TrainingHyperparams hp;
  CHECK_NOTHROW(hp.validate());
  hp.client_fraction = 0.0;
  CHECK_THROWS_AS(hp.validate(), std::invalid_argument);
  hp = {};
  hp.batch_size = 0;
  CHECK_THROWS_AS(hp.validate(), std::invalid_argument);
  hp = {};
  hp.learning_rate = -0.1;
  CHECK_THROWS_AS(hp.validate(), std::invalid_argument);
  hp = {};
  hp.local_epochs = 0;
  CHECK_THROWS_AS(hp.validate(), std::invalid_argument);
}

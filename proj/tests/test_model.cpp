#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "flhc/model.hpp"

using namespace flhc;

namespace {

ModelSpec small_mlp(int in = 6, int hidden = 5, int classes = 4) {
  ModelSpec s;
  s.architecture = Architecture::FastMlp;
  s.input_shape = {1, in, 1};
  s.hidden_units = hidden;
  s.num_classes = classes;
  return s;
}

Eigen::MatrixXd random_inputs(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& g) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd x(rows, cols);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(g);
  return x;
}

std::vector<int> random_labels(int n, int classes, std::mt19937_64& g) {
  std::uniform_int_distribution<int> d(0, classes - 1);
  std::vector<int> y(n);
  for (auto& v : y) v = d(g);
  return y;
}

double central_difference(const ModelSpec& spec, ParameterVector p, Eigen::Index i,
                          const Eigen::MatrixXd& x, const std::vector<int>& y, double eps) {
  const double orig = p.values[i];
  p.values[i] = orig + eps;
  const double up = loss(spec, p, x, y);
  p.values[i] = orig - eps;
  const double down = loss(spec, p, x, y);
  return (up - down) / (2 * eps);
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

}  // namespace

TEST_CASE("parameter counts") {
  ModelSpec cnn;
  cnn.architecture = Architecture::PaperCnn;
  CHECK(parameter_count(cnn) == 1663370);

  ModelSpec mlp;
  mlp.architecture = Architecture::FastMlp;
  mlp.hidden_units = 64;
  CHECK(parameter_count(mlp) == 784 * 64 + 64 + 64 * 10 + 10);

  CHECK(parameter_count(small_mlp(3, 2, 2)) == 3 * 2 + 2 + 2 * 2 + 2);
  CHECK(init_parameters(cnn, 1).size() == 1663370);
}

TEST_CASE("layout names and shapes") {
  ModelSpec cnn;
  cnn.architecture = Architecture::PaperCnn;
  const auto layout = parameter_layout(cnn);
  REQUIRE(layout.size() == 8);
  CHECK(layout[0].name == "conv1.weight");
  CHECK(layout[0].dims == std::vector<Eigen::Index>{5, 5, 1, 32});
  CHECK(layout[2].dims == std::vector<Eigen::Index>{5, 5, 32, 64});
  CHECK(layout[4].dims == std::vector<Eigen::Index>{3136, 512});
  CHECK(layout[7].name == "dense2.bias");
}

TEST_CASE("init is deterministic and scaled by fan-in") {
  const ModelSpec spec = small_mlp(16, 8, 3);
  const auto a = init_parameters(spec, 42);
  const auto b = init_parameters(spec, 42);
  const auto c = init_parameters(spec, 43);
  CHECK(a.values == b.values);
  CHECK(a.values != c.values);

  const auto layers = unflatten(a);
  CHECK(layers[0].values.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(16.0));
  CHECK(layers[1].values.isZero());
  CHECK(layers[2].values.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(8.0));
  CHECK(layers[3].values.isZero());
}

TEST_CASE("flatten and unflatten round trip") {
  ModelSpec cnn;
  cnn.architecture = Architecture::PaperCnn;
  const auto p = init_parameters(cnn, 7);
  const auto layers = unflatten(p);
  const auto back = flatten(layers);
  CHECK(back.values == p.values);
  CHECK(back.layout == p.layout);

  ParameterVector bad = p;
  bad.values.conservativeResize(p.size() - 1);
  CHECK_THROWS_AS(unflatten(bad), std::invalid_argument);
}

TEST_CASE("uniform logits give loss ln(classes)") {
  const ModelSpec spec = small_mlp(6, 5, 10);
  ParameterVector p = init_parameters(spec, 1);
  p.values.setZero();
  std::mt19937_64 g(3);
  const auto x = random_inputs(6, 7, g);
  const auto y = random_labels(7, 10, g);
  CHECK(loss(spec, p, x, y) == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  // all-zero weights: every score ties, so class 0 wins
  for (int v : predict_batch(spec, p, x)) CHECK(v == 0);
}

TEST_CASE("mlp gradients match central differences") {
  std::mt19937_64 g(11);
  int instances = 0;
  for (int t = 0; t < 25; ++t) {
    const int in = 2 + int(g() % 7), hidden = 2 + int(g() % 6), classes = 2 + int(g() % 5);
    const int batch = 1 + int(g() % 6);
    const ModelSpec spec = small_mlp(in, hidden, classes);
    auto p = init_parameters(spec, g());
    // nonzero biases so their gradients are exercised
    std::normal_distribution<double> n(0.0, 0.3);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.values[i] += n(g);
    const auto x = random_inputs(in, batch, g);
    const auto y = random_labels(batch, classes, g);

    const auto lg = loss_and_gradient(spec, p, x, y);
    CHECK(lg.loss == doctest::Approx(loss(spec, p, x, y)).epsilon(1e-12));
    double worst = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double fd = central_difference(spec, p, i, x, y, 1e-4);
      if (std::abs(fd) < 1e-7 && std::abs(lg.grad.values[i]) < 1e-7) continue;
      worst = std::max(worst, relative_error(fd, lg.grad.values[i]));
    }
    CHECK(worst < 1e-3);
    ++instances;
  }
  CHECK(instances >= 20);
}

TEST_CASE("cnn gradients match central differences on sampled coordinates") {
  ModelSpec spec;
  spec.architecture = Architecture::PaperCnn;
  auto p = init_parameters(spec, 5);
  std::mt19937_64 g(5);
  std::normal_distribution<double> n(0.0, 0.05);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.values[i] += n(g);
  const auto x = random_inputs(784, 2, g);
  const std::vector<int> y = {3, 8};
  const auto lg = loss_and_gradient(spec, p, x, y);

  Eigen::Index offset = 0;
  for (const auto& layer : p.layout) {
    std::uniform_int_distribution<Eigen::Index> pick(0, layer.size() - 1);
    for (int k = 0; k < 6; ++k) {
      const Eigen::Index i = offset + pick(g);
      // conv weights touch thousands of relu/pool kinks; 1e-4 steps cross some of them
      const double fd = central_difference(spec, p, i, x, y, 1e-6);
      if (std::abs(fd) < 1e-6 && std::abs(lg.grad.values[i]) < 1e-6) continue;
      INFO(layer.name << " index " << i);
      CHECK(relative_error(fd, lg.grad.values[i]) < 1e-3);
    }
    offset += layer.size();
  }
}

TEST_CASE("duplicating a batch leaves the mean loss and gradient unchanged") {
  const ModelSpec spec = small_mlp(5, 4, 3);
  const auto p = init_parameters(spec, 2);
  std::mt19937_64 g(2);
  const auto x = random_inputs(5, 4, g);
  const auto y = random_labels(4, 3, g);
  Eigen::MatrixXd xx(5, 8);
  xx << x, x;
  std::vector<int> yy = y;
  yy.insert(yy.end(), y.begin(), y.end());
  const auto a = loss_and_gradient(spec, p, x, y);
  const auto b = loss_and_gradient(spec, p, xx, yy);
  CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-12));
  CHECK((a.grad.values - b.grad.values).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("adding a constant to the output bias does not change predictions or loss") {
  const ModelSpec spec = small_mlp(5, 4, 3);
  auto p = init_parameters(spec, 9);
  std::mt19937_64 g(9);
  const auto x = random_inputs(5, 6, g);
  const auto y = random_labels(6, 3, g);
  const double before = loss(spec, p, x, y);
  const auto pred = predict_batch(spec, p, x);
  p.values.tail(3).array() += 2.5;
  CHECK(loss(spec, p, x, y) == doctest::Approx(before).epsilon(1e-10));
  CHECK(predict_batch(spec, p, x) == pred);
}

TEST_CASE("evaluation is pure") {
  const ModelSpec spec = small_mlp();
  const auto p = init_parameters(spec, 4);
  const auto copy = p.values;
  std::mt19937_64 g(4);
  const auto x = random_inputs(6, 3, g);
  const auto s1 = class_scores(spec, p, x);
  const auto s2 = class_scores(spec, p, x);
  CHECK(s1 == s2);
  CHECK(p.values == copy);
  CHECK(predict(spec, p, x.col(1)) == predict_batch(spec, p, x)[1]);
}

TEST_CASE("a small gradient step decreases the loss") {
  std::mt19937_64 g(21);
  int failures = 0;
  for (int t = 0; t < 50; ++t) {
    const ModelSpec spec = small_mlp(4 + int(g() % 4), 3 + int(g() % 4), 2 + int(g() % 3));
    const auto p = init_parameters(spec, g());
    const auto x = random_inputs(spec.input_shape.size(), 5, g);
    const auto y = random_labels(5, spec.num_classes, g);
    const auto lg = loss_and_gradient(spec, p, x, y);
    ParameterVector q = p;
    q.values -= 1e-3 * lg.grad.values;
    if (!(loss(spec, q, x, y) < lg.loss)) ++failures;
  }
  CHECK(failures <= 2);
}

TEST_CASE("sgd fits a separable toy problem") {
  const ModelSpec spec = small_mlp(2, 8, 2);
  auto p = init_parameters(spec, 13);
  Eigen::MatrixXd x(2, 8);
  std::vector<int> y(8);
  std::mt19937_64 g(13);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (int i = 0; i < 8; ++i) {
    const int cls = i % 2;
    x(0, i) = cls ? u(g) : -u(g);
    x(1, i) = u(g) - 0.5;
    y[i] = cls;
  }
  const double start = loss(spec, p, x, y);
  Eigen::VectorXd grad;
  for (int step = 0; step < 200; ++step) {
    loss_and_gradient(spec, p.values, x, y, grad);
    p.values -= 0.5 * grad;
  }
  CHECK(loss(spec, p, x, y) < 0.1 * start);
  CHECK(predict_batch(spec, p, x) == y);
}

TEST_CASE("shape errors") {
  const ModelSpec spec = small_mlp(6, 5, 4);
  const auto p = init_parameters(spec, 1);
  std::mt19937_64 g(1);
  const auto x = random_inputs(6, 3, g);
  const std::vector<int> ok = {0, 1, 2}, short_labels = {0, 1}, out_of_range = {0, 1, 4};
  CHECK_NOTHROW(loss(spec, p, x, ok));
  CHECK_THROWS_AS(loss(spec, p, random_inputs(5, 3, g), ok), std::invalid_argument);
  CHECK_THROWS_AS(loss(spec, p, x, short_labels), std::invalid_argument);
  CHECK_THROWS_AS(loss(spec, p, x, out_of_range), std::invalid_argument);

  ModelSpec bad;
  bad.architecture = Architecture::PaperCnn;
  bad.input_shape = {32, 32, 3};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = small_mlp();
  bad.num_classes = 1;
  CHECK_THROWS_AS(parameter_count(bad), std::invalid_argument);
}

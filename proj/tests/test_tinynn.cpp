#include <doctest.h>

#include <random>
#include <sstream>

#include "shiftwatch/tinynn.hpp"
#include "gradcheck.hpp"

using namespace shiftwatch::nn;
using shiftwatch::testing::relative_error;

namespace {

Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace

TEST_CASE("identity linear layer returns its input") {
  NetworkSpec spec{{3, 3}, {}, Activation::linear, 0};
  Parameters p;
  p.layers.push_back({Matrix::Identity(3, 3), Vector::Zero(3)});
  Network net(spec, p);
  Vector x(3);
  x << 1.5, -2.0, 7.0;
  CHECK(net.predict(x) == x);
}

TEST_CASE("zero weights with sigmoid output give one half") {
  NetworkSpec spec{{4, 2}, {}, Activation::sigmoid, 0};
  Parameters p;
  p.layers.push_back({Matrix::Zero(2, 4), Vector::Zero(2)});
  Network net(spec, p);
  std::mt19937_64 rng(1);
  CHECK(net.predict(random_matrix(4, 5, rng)).isConstant(0.5));
}

TEST_CASE("forward pass matches a hand-rolled dense oracle") {
  NetworkSpec spec{{4, 8, 2}, {Activation::tanh}, Activation::sigmoid, 42};
  Network net(spec);
  std::mt19937_64 rng(2);
  const Matrix x = random_matrix(4, 6, rng);
  const auto& l = net.parameters().layers;
  for (Index c = 0; c < x.cols(); ++c) {
    Vector h(8);
    for (int i = 0; i < 8; ++i) {
      double s = l[0].bias(i);
      for (int j = 0; j < 4; ++j) s += l[0].weights(i, j) * x(j, c);
      h(i) = std::tanh(s);
    }
    for (int i = 0; i < 2; ++i) {
      double s = l[1].bias(i);
      for (int j = 0; j < 8; ++j) s += l[1].weights(i, j) * h(j);
      CHECK(net.predict(x)(i, c) == doctest::Approx(1.0 / (1.0 + std::exp(-s))).epsilon(1e-14));
    }
  }
}

TEST_CASE("glorot initialization is seeded and bounded") {
  NetworkSpec spec{{5, 7, 1}, {Activation::relu}, Activation::linear, 9};
  Network a(spec), b(spec);
  CHECK(a.parameters() == b.parameters());
  const double limit = std::sqrt(6.0 / (5 + 7));
  CHECK(a.parameters().layers[0].weights.cwiseAbs().maxCoeff() <= limit);
  CHECK(a.parameters().layers[0].bias.isZero());
  spec.seed = 10;
  CHECK_FALSE(Network(spec).parameters() == a.parameters());
}

TEST_CASE("linear squared-error gradient equals 2(Wx - y)x^T") {
  NetworkSpec spec{{3, 2}, {}, Activation::linear, 3};
  Network net(spec);
  std::mt19937_64 rng(3);
  const Matrix x = random_matrix(3, 1, rng);
  const Matrix y = random_matrix(2, 1, rng);
  const ForwardCache cache = net.forward(x);
  const LossValue loss = squared_error(cache.output(), y);
  const Gradients g = net.backward(cache, loss.gradient);
  const Matrix& w = net.parameters().layers[0].weights;
  const Matrix expected = 2.0 * (w * x - y) * x.transpose();
  CHECK((g.parameters.layers[0].weights - expected).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((g.parameters.layers[0].bias - 2.0 * (w * x - y)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("zero output gradient gives zero parameter gradients") {
  NetworkSpec spec{{3, 4, 2}, {Activation::tanh}, Activation::sigmoid, 4};
  Network net(spec);
  std::mt19937_64 rng(4);
  const ForwardCache cache = net.forward(random_matrix(3, 5, rng));
  const Gradients g = net.backward(cache, Matrix::Zero(2, 5));
  CHECK(g.parameters.flatten().isZero());
  CHECK(g.input.isZero());
}

TEST_CASE("backward matches central differences on random networks") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) CHECK(shiftwatch::testing::network_gradient_error(shiftwatch::testing::random_spec(rng), rng) <= 1e-4);
}

TEST_CASE("cross-entropy gradient matches central differences") {
  NetworkSpec spec{{3, 5, 1}, {Activation::tanh}, Activation::sigmoid, 6};
  Network net(spec);
  std::mt19937_64 rng(6);
  const Matrix x = random_matrix(3, 8, rng);
  const std::vector<int> y{0, 1, 1, 0, 1, 0, 0, 1};
  const auto cache = net.forward(x);
  const Gradients g = net.backward(cache, binary_cross_entropy(cache.output(), y).gradient);
  const Vector analytic = g.parameters.flatten();
  const Vector base = net.parameters().flatten();
  for (Index i = 0; i < base.size(); ++i) {
    Vector plus = base, minus = base;
    plus(i) += 1e-5;
    minus(i) -= 1e-5;
    Parameters p = net.parameters();
    p.assign(plus);
    const double lp = binary_cross_entropy(Network(spec, p).predict(x), y).loss;
    p.assign(minus);
    const double lm = binary_cross_entropy(Network(spec, p).predict(x), y).loss;
    CHECK(relative_error(analytic(i), (lp - lm) / 2e-5) <= 1e-4);
  }
}

TEST_CASE("backward refuses a cache from other parameters") {
  NetworkSpec spec{{2, 1}, {}, Activation::linear, 7};
  Network net(spec);
  const auto cache = net.forward(Matrix::Ones(2, 1));
  Optimizer sgd({OptimizerKind::sgd, 0.1});
  sgd.step(net, Parameters::zeros_like(net.parameters()));
  CHECK_THROWS_AS(net.backward(cache, Matrix::Ones(1, 1)), shiftwatch::StateError);
  CHECK_THROWS_AS(net.forward(Matrix::Ones(3, 1)), shiftwatch::SchemaError);
}

TEST_CASE("sgd arithmetic") {
  Parameters p, g;
  p.layers.push_back({Matrix::Constant(1, 1, 1.0), Vector::Constant(1, 1.0)});
  g.layers.push_back({Matrix::Constant(1, 1, 0.5), Vector::Zero(1)});
  Optimizer sgd({OptimizerKind::sgd, 0.1});
  sgd.step(p, g);
  CHECK(p.layers[0].weights(0, 0) == doctest::Approx(0.95));
  CHECK(p.layers[0].bias(0) == 1.0);
  Parameters mismatch;
  CHECK_THROWS_AS(sgd.step(p, mismatch), shiftwatch::SchemaError);
}

TEST_CASE("adam first step moves each parameter by about the learning rate") {
  Parameters p, g;
  p.layers.push_back({Matrix::Constant(2, 2, 1.0), Vector::Zero(2)});
  g.layers.push_back({Matrix::Constant(2, 2, 0.3), Vector::Constant(2, -4.0)});
  Optimizer adam({OptimizerKind::adam, 0.01});
  adam.step(p, g);
  // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
  CHECK(p.layers[0].weights(0, 0) == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(p.layers[0].bias(1) == doctest::Approx(0.01).epsilon(1e-6));
  adam.step(p, g);
  CHECK(p.layers[0].weights(0, 0) == doctest::Approx(1.0 - 0.02).epsilon(1e-6));
  CHECK_THROWS_AS(Optimizer({OptimizerKind::adam, 0.0}), shiftwatch::ConfigError);
}

TEST_CASE("training is bit-identical for a fixed seed") {
  auto run = [] {
    NetworkSpec spec{{2, 6, 1}, {Activation::tanh}, Activation::sigmoid, 8};
    Network net(spec);
    Optimizer adam({OptimizerKind::adam, 0.01});
    std::mt19937_64 rng(8);
    const Matrix x = random_matrix(2, 32, rng);
    std::vector<int> y;
    for (Index i = 0; i < 32; ++i) y.push_back(x(0, i) + x(1, i) > 0);
    for (int s = 0; s < 50; ++s) {
      const auto cache = net.forward(x);
      adam.step(net, net.backward(cache, binary_cross_entropy(cache.output(), y).gradient).parameters);
    }
    return net.parameters();
  };
  CHECK(run() == run());
}

TEST_CASE("sgd halves cross-entropy on a separable problem") {
  NetworkSpec spec{{2, 1}, {}, Activation::sigmoid, 9};
  Network net(spec);
  Optimizer sgd({OptimizerKind::sgd, 0.5});
  std::mt19937_64 rng(9);
  const Matrix x = random_matrix(2, 100, rng);
  std::vector<int> y;
  for (Index i = 0; i < x.cols(); ++i) y.push_back(x(0, i) - 0.5 * x(1, i) > 0);
  const double before = binary_cross_entropy(net.predict(x), y).loss;
  for (int s = 0; s < 200; ++s) {
    const auto cache = net.forward(x);
    sgd.step(net, net.backward(cache, binary_cross_entropy(cache.output(), y).gradient).parameters);
  }
  CHECK(binary_cross_entropy(net.predict(x), y).loss <= 0.5 * before);
}

TEST_CASE("save and load reproduce the network") {
  NetworkSpec spec{{3, 4, 2, 1}, {Activation::relu, Activation::tanh}, Activation::sigmoid, 10};
  Network net(spec);
  std::stringstream buf;
  save(buf, net);
  const Network back = load(buf);
  CHECK(back.parameters() == net.parameters());
  CHECK(back.spec().layer_sizes == spec.layer_sizes);
  CHECK(back.spec().output_activation == Activation::sigmoid);
  CHECK(back.parameters().hash() == net.parameters().hash());
  std::stringstream junk("not a network");
  CHECK_THROWS(load(junk));
}

TEST_CASE("flatten and assign are inverse") {
  NetworkSpec spec{{3, 4, 2}, {Activation::tanh}, Activation::linear, 11};
  Parameters p = Network(spec).parameters();
  const Vector flat = p.flatten();
  CHECK(flat.size() == 3 * 4 + 4 + 4 * 2 + 2);
  Parameters q = Parameters::zeros_like(p);
  q.assign(flat);
  CHECK(q == p);
  CHECK_THROWS_AS(q.assign(Vector::Zero(3)), shiftwatch::SchemaError);
}

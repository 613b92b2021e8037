#pragma once

// Small feed-forward networks with reverse-mode gradients. Batches are matrices with
// one sample per column.

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "shiftwatch/error.hpp"

namespace shiftwatch::nn {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

enum class Activation { relu, tanh, sigmoid, linear };

const char* to_string(Activation activation);
Activation activation_from_string(const std::string& text);

struct NetworkSpec {
  std::vector<int> layer_sizes;              // input, hidden..., output
  std::vector<Activation> hidden_activations;  // one per hidden layer (or one shared)
  Activation output_activation = Activation::linear;
  std::uint64_t seed = 0;

  void validate() const;
  int input_size() const { return layer_sizes.front(); }
  int output_size() const { return layer_sizes.back(); }
  std::size_t layer_count() const { return layer_sizes.size() - 1; }
  Activation activation(std::size_t layer) const;
};

struct DenseLayer {
  Matrix weights;  // out x in
  Vector bias;     // out
};

struct Parameters {
  std::vector<DenseLayer> layers;

  Index size() const;
  Vector flatten() const;
  void assign(const Vector& flat);
  bool same_shape(const Parameters& other) const;
  bool all_finite() const;
  // FNV-1a over the raw parameter bytes; identifies a parameter snapshot.
  std::uint64_t hash() const;

  static Parameters zeros_like(const Parameters& other);
  Parameters& operator+=(const Parameters& other);
  Parameters& operator*=(double factor);
  bool operator==(const Parameters& other) const;
};

struct ForwardCache {
  std::vector<Matrix> inputs;       // input of each layer; inputs[0] is the network input
  std::vector<Matrix> activations;  // output of each layer after its nonlinearity
  std::uint64_t generation = 0;

  const Matrix& output() const { return activations.back(); }
};

struct Gradients {
  Parameters parameters;
  Matrix input;  // d loss / d network input, same shape as the forward input
};

class Network {
 public:
  Network() = default;
  // Glorot-uniform weights and zero biases drawn from spec.seed.
  explicit Network(NetworkSpec spec);
  Network(NetworkSpec spec, Parameters parameters);

  Matrix predict(const Matrix& inputs) const;
  Vector predict(const Vector& input) const;
  ForwardCache forward(const Matrix& inputs) const;
  // Throws StateError when the cache was produced with different parameters.
  Gradients backward(const ForwardCache& cache, const Matrix& output_gradient) const;

  const NetworkSpec& spec() const { return spec_; }
  const Parameters& parameters() const { return parameters_; }
  void set_parameters(Parameters parameters);
  std::uint64_t generation() const { return generation_; }

  friend class Optimizer;

 private:
  void bump();

  NetworkSpec spec_;
  Parameters parameters_;
  std::uint64_t generation_ = 0;
};

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {});

  // sgd: p -= lr * g. adam: bias-corrected first/second moment recurrences.
  void step(Parameters& parameters, const Parameters& gradients);
  void step(Network& network, const Parameters& gradients);
  void reset();
  std::size_t steps() const { return steps_; }
  const OptimizerConfig& config() const { return config_; }

 private:
  OptimizerConfig config_;
  Parameters first_moment_;
  Parameters second_moment_;
  std::size_t steps_ = 0;
};

struct LossValue {
  double loss = 0.0;
  Matrix gradient;  // d loss / d prediction
};

// Mean binary cross-entropy over columns of a 1 x N probability row.
LossValue binary_cross_entropy(const Matrix& probabilities, std::span<const int> labels);
// Sum of squared errors divided by the number of columns.
LossValue squared_error(const Matrix& predictions, const Matrix& targets);

// Text format: header lines with the spec, then the flattened parameters.
void save(std::ostream& out, const Network& network);
Network load(std::istream& in);

}  // namespace shiftwatch::nn

#include "shiftwatch/tinynn.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace shiftwatch::nn {

namespace {

std::atomic<std::uint64_t> next_generation{1};

Matrix activate(Activation a, const Matrix& z) {
  switch (a) {
    case Activation::relu: return z.cwiseMax(0.0);
    case Activation::tanh: return z.array().tanh().matrix();
    case Activation::sigmoid: return (1.0 / (1.0 + (-z.array()).exp())).matrix();
    case Activation::linear: return z;
  }
  return z;
}

// Derivative expressed through the layer output (and input for relu).
Matrix activation_derivative(Activation a, const Matrix& pre, const Matrix& out) {
  switch (a) {
    case Activation::relu: return (pre.array() > 0.0).cast<double>().matrix();
    case Activation::tanh: return (1.0 - out.array().square()).matrix();
    case Activation::sigmoid: return (out.array() * (1.0 - out.array())).matrix();
    case Activation::linear: return Matrix::Ones(out.rows(), out.cols());
  }
  return Matrix::Ones(out.rows(), out.cols());
}

}  // namespace

const char* to_string(Activation activation) {
  switch (activation) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
    case Activation::linear: return "linear";
  }
  return "linear";
}

Activation activation_from_string(const std::string& text) {
  if (text == "relu") return Activation::relu;
  if (text == "tanh") return Activation::tanh;
  if (text == "sigmoid") return Activation::sigmoid;
  if (text == "linear") return Activation::linear;
  throw ConfigError("unknown activation '" + text + "'");
}

void NetworkSpec::validate() const {
  if (layer_sizes.size() < 2) throw ConfigError("network needs at least one layer transition");
  for (int s : layer_sizes)
    if (s < 1) throw ConfigError("layer sizes must be positive");
  const std::size_t hidden = layer_sizes.size() - 2;
  if (hidden > 0 && hidden_activations.size() != hidden && hidden_activations.size() != 1)
    throw ConfigError("need one activation per hidden layer");
}

Activation NetworkSpec::activation(std::size_t layer) const {
  if (layer + 1 == layer_count()) return output_activation;
  return hidden_activations.size() == 1 ? hidden_activations.front() : hidden_activations.at(layer);
}

Index Parameters::size() const {
  Index n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

Vector Parameters::flatten() const {
  Vector flat(size());
  Index o = 0;
  for (const auto& l : layers) {
    flat.segment(o, l.weights.size()) = l.weights.reshaped();
    o += l.weights.size();
    flat.segment(o, l.bias.size()) = l.bias;
    o += l.bias.size();
  }
  return flat;
}

void Parameters::assign(const Vector& flat) {
  if (flat.size() != size()) throw SchemaError("flat parameter vector has the wrong length");
  Index o = 0;
  for (auto& l : layers) {
    l.weights.reshaped() = flat.segment(o, l.weights.size());
    o += l.weights.size();
    l.bias = flat.segment(o, l.bias.size());
    o += l.bias.size();
  }
}

bool Parameters::same_shape(const Parameters& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].weights.rows() != other.layers[i].weights.rows() ||
        layers[i].weights.cols() != other.layers[i].weights.cols() ||
        layers[i].bias.size() != other.layers[i].bias.size())
      return false;
  }
  return true;
}

bool Parameters::all_finite() const {
  for (const auto& l : layers)
    if (!l.weights.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

std::uint64_t Parameters::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const double* data, Index n) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& l : layers) {
    mix(l.weights.data(), l.weights.size());
    mix(l.bias.data(), l.bias.size());
  }
  return h;
}

Parameters Parameters::zeros_like(const Parameters& other) {
  Parameters p;
  for (const auto& l : other.layers)
    p.layers.push_back({Matrix::Zero(l.weights.rows(), l.weights.cols()), Vector::Zero(l.bias.size())});
  return p;
}

Parameters& Parameters::operator+=(const Parameters& other) {
  if (!same_shape(other)) throw SchemaError("parameter shape mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].weights += other.layers[i].weights;
    layers[i].bias += other.layers[i].bias;
  }
  return *this;
}

Parameters& Parameters::operator*=(double factor) {
  for (auto& l : layers) {
    l.weights *= factor;
    l.bias *= factor;
  }
  return *this;
}

bool Parameters::operator==(const Parameters& other) const {
  if (!same_shape(other)) return false;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].weights != other.layers[i].weights || layers[i].bias != other.layers[i].bias)
      return false;
  return true;
}

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  std::mt19937_64 rng(spec_.seed);
  for (std::size_t l = 0; l < spec_.layer_count(); ++l) {
    const int in = spec_.layer_sizes[l];
    const int out = spec_.layer_sizes[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer layer{Matrix(out, in), Vector::Zero(out)};
    for (Index c = 0; c < layer.weights.cols(); ++c)
      for (Index r = 0; r < layer.weights.rows(); ++r) layer.weights(r, c) = dist(rng);
    parameters_.layers.push_back(std::move(layer));
  }
  bump();
}

Network::Network(NetworkSpec spec, Parameters parameters) : spec_(std::move(spec)) {
  spec_.validate();
  set_parameters(std::move(parameters));
}

void Network::set_parameters(Parameters parameters) {
  if (parameters.layers.size() != spec_.layer_count())
    throw SchemaError("parameter layer count differs from the network layout");
  for (std::size_t l = 0; l < parameters.layers.size(); ++l) {
    const auto& layer = parameters.layers[l];
    if (layer.weights.rows() != spec_.layer_sizes[l + 1] || layer.weights.cols() != spec_.layer_sizes[l] ||
        layer.bias.size() != spec_.layer_sizes[l + 1])
      throw SchemaError("parameter shapes differ from the network layout");
  }
  if (!parameters.all_finite()) throw InputError("parameters must be finite");
  parameters_ = std::move(parameters);
  bump();
}

void Network::bump() { generation_ = next_generation.fetch_add(1); }

Matrix Network::predict(const Matrix& inputs) const {
  if (inputs.rows() != spec_.input_size()) throw SchemaError("network input has the wrong size");
  Matrix a = inputs;
  for (std::size_t l = 0; l < parameters_.layers.size(); ++l) {
    const auto& layer = parameters_.layers[l];
    Matrix z = layer.weights * a;
    z.colwise() += layer.bias;
    a = activate(spec_.activation(l), z);
  }
  return a;
}

Vector Network::predict(const Vector& input) const {
  return predict(Matrix(input)).col(0);
}

ForwardCache Network::forward(const Matrix& inputs) const {
  if (inputs.rows() != spec_.input_size()) throw SchemaError("network input has the wrong size");
  ForwardCache cache;
  cache.generation = generation_;
  Matrix a = inputs;
  for (std::size_t l = 0; l < parameters_.layers.size(); ++l) {
    const auto& layer = parameters_.layers[l];
    Matrix z = layer.weights * a;
    z.colwise() += layer.bias;
    cache.inputs.push_back(std::move(a));
    a = activate(spec_.activation(l), z);
    cache.activations.push_back(a);
  }
  return cache;
}

Gradients Network::backward(const ForwardCache& cache, const Matrix& output_gradient) const {
  if (cache.generation != generation_) throw StateError("stale forward cache");
  if (output_gradient.rows() != cache.output().rows() || output_gradient.cols() != cache.output().cols())
    throw SchemaError("output gradient shape differs from the forward output");
  Gradients g;
  g.parameters = Parameters::zeros_like(parameters_);
  Matrix delta = output_gradient;
  for (std::size_t l = parameters_.layers.size(); l-- > 0;) {
    const auto& layer = parameters_.layers[l];
    // pre-activation is only needed for relu; recompute it there.
    Matrix pre;
    if (spec_.activation(l) == Activation::relu) {
      pre = layer.weights * cache.inputs[l];
      pre.colwise() += layer.bias;
    }
    delta = delta.cwiseProduct(activation_derivative(spec_.activation(l), pre, cache.activations[l]));
    g.parameters.layers[l].weights = delta * cache.inputs[l].transpose();
    g.parameters.layers[l].bias = delta.rowwise().sum();
    delta = layer.weights.transpose() * delta;
  }
  g.input = std::move(delta);
  return g;
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw ConfigError("adam betas must be in [0, 1)");
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) { config_.validate(); }

void Optimizer::reset() {
  first_moment_ = {};
  second_moment_ = {};
  steps_ = 0;
}

void Optimizer::step(Parameters& parameters, const Parameters& gradients) {
  if (!parameters.same_shape(gradients)) throw SchemaError("gradient shape differs from parameters");
  ++steps_;
  if (config_.kind == OptimizerKind::sgd) {
    for (std::size_t l = 0; l < parameters.layers.size(); ++l) {
      parameters.layers[l].weights -= config_.learning_rate * gradients.layers[l].weights;
      parameters.layers[l].bias -= config_.learning_rate * gradients.layers[l].bias;
    }
    return;
  }
  if (!first_moment_.same_shape(parameters)) {
    first_moment_ = Parameters::zeros_like(parameters);
    second_moment_ = Parameters::zeros_like(parameters);
  }
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    p.array() -= config_.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + config_.epsilon);
  };
  for (std::size_t l = 0; l < parameters.layers.size(); ++l) {
    update(parameters.layers[l].weights, first_moment_.layers[l].weights,
           second_moment_.layers[l].weights, gradients.layers[l].weights);
    update(parameters.layers[l].bias, first_moment_.layers[l].bias, second_moment_.layers[l].bias,
           gradients.layers[l].bias);
  }
}

void Optimizer::step(Network& network, const Parameters& gradients) {
  step(network.parameters_, gradients);
  network.bump();
}

LossValue binary_cross_entropy(const Matrix& probabilities, std::span<const int> labels) {
  if (probabilities.rows() != 1 || static_cast<std::size_t>(probabilities.cols()) != labels.size())
    throw SchemaError("binary cross-entropy expects a 1 x N row matching the labels");
  if (labels.empty()) throw SizeError("binary cross-entropy on an empty batch");
  const double n = static_cast<double>(labels.size());
  constexpr double eps = 1e-12;
  LossValue out;
  out.gradient.resize(1, probabilities.cols());
  for (Index i = 0; i < probabilities.cols(); ++i) {
    const double p = std::clamp(probabilities(0, i), eps, 1.0 - eps);
    const double y = labels[static_cast<std::size_t>(i)];
    out.loss -= (y * std::log(p) + (1.0 - y) * std::log(1.0 - p)) / n;
    out.gradient(0, i) = (p - y) / (p * (1.0 - p)) / n;
  }
  return out;
}

LossValue squared_error(const Matrix& predictions, const Matrix& targets) {
  if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols())
    throw SchemaError("squared error shape mismatch");
  if (predictions.cols() == 0) throw SizeError("squared error on an empty batch");
  const double n = static_cast<double>(predictions.cols());
  const Matrix diff = predictions - targets;
  return {diff.squaredNorm() / n, 2.0 * diff / n};
}

namespace {
std::string fmt(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, end);
}
}  // namespace

void save(std::ostream& out, const Network& network) {
  const auto& spec = network.spec();
  out << "tinynn-network 1\nlayers";
  for (int s : spec.layer_sizes) out << ' ' << s;
  out << "\nhidden";
  for (auto a : spec.hidden_activations) out << ' ' << to_string(a);
  out << "\noutput " << to_string(spec.output_activation) << "\nseed " << spec.seed << "\nparameters "
      << network.parameters().size() << '\n';
  const Vector flat = network.parameters().flatten();
  for (Index i = 0; i < flat.size(); ++i) out << fmt(flat(i)) << (i + 1 == flat.size() ? '\n' : ' ');
}

Network load(std::istream& in) {
  auto expect_line = [&in](const std::string& key) {
    std::string line;
    if (!std::getline(in, line)) throw InputError("truncated network file, expected '" + key + "'");
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    if (word != key) throw InputError("network file: expected '" + key + "', got '" + word + "'");
    std::string rest;
    std::getline(ss, rest);
    return rest;
  };
  std::string version = expect_line("tinynn-network");
  if (std::stoi(version) != 1) throw InputError("unsupported network file version");
  NetworkSpec spec;
  {
    std::istringstream ss(expect_line("layers"));
    int s;
    while (ss >> s) spec.layer_sizes.push_back(s);
  }
  {
    std::istringstream ss(expect_line("hidden"));
    std::string a;
    while (ss >> a) spec.hidden_activations.push_back(activation_from_string(a));
  }
  {
    std::istringstream ss(expect_line("output"));
    std::string a;
    ss >> a;
    spec.output_activation = activation_from_string(a);
  }
  spec.seed = std::stoull(expect_line("seed"));
  const long count = std::stol(expect_line("parameters"));
  spec.validate();
  Network shape(spec);
  Parameters params = shape.parameters();
  if (count != params.size()) throw InputError("network file parameter count mismatch");
  Vector flat(count);
  for (long i = 0; i < count; ++i) {
    std::string token;
    if (!(in >> token)) throw InputError("truncated network parameters");
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc() || ptr != token.data() + token.size())
      throw InputError("bad parameter value '" + token + "'");
    flat(i) = v;
  }
  params.assign(flat);
  return Network(spec, std::move(params));
}

}  // namespace shiftwatch::nn

#include "shiftwatch/shapley.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>

namespace shiftwatch {

const char* to_string(ShapleyMode mode) { return mode == ShapleyMode::exact ? "exact" : "permutation"; }

ShapleyMode shapley_mode_from_string(const std::string& text) {
  if (text == "exact") return ShapleyMode::exact;
  if (text == "permutation") return ShapleyMode::permutation;
  throw ConfigError("unknown explainer mode '" + text + "'");
}

namespace {

Vector evaluate(const ScoreFunction& model, const Matrix& rows) {
  Vector out = model(rows);
  if (out.size() != rows.rows()) throw SchemaError("score function returned the wrong number of scores");
  return out;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

double value_function(const ScoreFunction& model, const Vector& instance,
                      std::span<const Index> subset, const Matrix& background) {
  if (background.rows() == 0) throw SizeError("empty background set");
  if (instance.size() != background.cols()) throw SchemaError("instance dimension differs from background");
  if (subset.empty()) return 0.0;
  Matrix composite = background;
  for (Index j : subset) {
    if (j < 0 || j >= instance.size()) throw SchemaError("feature index out of range");
    composite.col(j).setConstant(instance(j));
  }
  return evaluate(model, composite).mean() - evaluate(model, background).mean();
}

ShapleyExplainer::ShapleyExplainer(ScoreFunction model, Matrix background, ShapleyMode mode,
                                   int permutations, std::uint64_t seed)
    : model_(std::move(model)),
      background_(std::move(background)),
      mode_(mode),
      permutations_(permutations),
      seed_(seed) {
  if (background_.rows() == 0) throw SizeError("empty background set");
  if (mode_ == ShapleyMode::exact && background_.cols() > kMaxExactFeatures)
    throw ConfigError("exact Shapley mode supports at most 15 features");
  if (mode_ == ShapleyMode::permutation && permutations_ < 1)
    throw ConfigError("permutation count must be >= 1");
  base_value_ = evaluate(model_, background_).mean();
}

void ShapleyExplainer::check_instance(const Vector& instance) const {
  if (instance.size() != background_.cols()) throw SchemaError("instance dimension differs from background");
}

double ShapleyExplainer::value(const Vector& instance, std::span<const Index> subset) const {
  check_instance(instance);
  if (subset.empty()) return 0.0;
  std::vector<std::vector<Index>> one{{subset.begin(), subset.end()}};
  return composite_means(instance, one)(0) - base_value_;
}

Vector ShapleyExplainer::composite_means(const Vector& instance,
                                         const std::vector<std::vector<Index>>& subsets) const {
  const Index nb = background_.rows();
  Matrix rows(nb * static_cast<Index>(subsets.size()), background_.cols());
  for (std::size_t s = 0; s < subsets.size(); ++s) {
    auto block = rows.middleRows(static_cast<Index>(s) * nb, nb);
    block = background_;
    for (Index j : subsets[s]) block.col(j).setConstant(instance(j));
  }
  const Vector scores = evaluate(model_, rows);
  Vector means(static_cast<Index>(subsets.size()));
  for (std::size_t s = 0; s < subsets.size(); ++s)
    means(static_cast<Index>(s)) = scores.segment(static_cast<Index>(s) * nb, nb).mean();
  return means;
}

Attribution ShapleyExplainer::explain(const Vector& instance) const {
  return mode_ == ShapleyMode::exact ? exact(instance) : sampled(instance, seed_);
}

std::vector<Attribution> ShapleyExplainer::explain_rows(const Matrix& instances) const {
  std::vector<Attribution> out;
  out.reserve(static_cast<std::size_t>(instances.rows()));
  for (Index i = 0; i < instances.rows(); ++i) {
    const Vector x = instances.row(i).transpose();
    out.push_back(mode_ == ShapleyMode::exact ? exact(x)
                                              : sampled(x, splitmix(seed_ ^ splitmix(static_cast<std::uint64_t>(i)))));
  }
  return out;
}

Attribution ShapleyExplainer::exact(const Vector& instance) const {
  check_instance(instance);
  const Index n = instance.size();
  if (n > kMaxExactFeatures) throw ConfigError("exact Shapley mode supports at most 15 features");
  const std::size_t masks = std::size_t{1} << n;

  Attribution a;
  a.base_value = base_value_;
  a.score = evaluate(model_, Matrix(instance.transpose()))(0);
  a.standard_error = Vector::Zero(n);

  // val for every subset; empty and full subsets are known without evaluation.
  std::vector<double> val(masks, 0.0);
  val[masks - 1] = a.score - base_value_;
  const std::size_t chunk = std::max<std::size_t>(1, 65536 / static_cast<std::size_t>(background_.rows()));
  std::vector<std::vector<Index>> subsets;
  std::vector<std::size_t> ids;
  auto flush = [&] {
    if (subsets.empty()) return;
    const Vector means = composite_means(instance, subsets);
    for (std::size_t s = 0; s < ids.size(); ++s) val[ids[s]] = means(static_cast<Index>(s)) - base_value_;
    subsets.clear();
    ids.clear();
  };
  for (std::size_t mask = 1; mask + 1 < masks; ++mask) {
    std::vector<Index> on;
    for (Index j = 0; j < n; ++j)
      if (mask >> j & 1U) on.push_back(j);
    subsets.push_back(std::move(on));
    ids.push_back(mask);
    if (subsets.size() >= chunk) flush();
  }
  flush();

  // weight(s) = s! (n - s - 1)! / n!
  std::vector<double> weight(static_cast<std::size_t>(n));
  for (Index s = 0; s < n; ++s)
    weight[static_cast<std::size_t>(s)] =
        std::exp(std::lgamma(s + 1.0) + std::lgamma(static_cast<double>(n - s)) - std::lgamma(n + 1.0));
  a.phi = Vector::Zero(n);
  for (std::size_t mask = 0; mask < masks; ++mask) {
    const int size = std::popcount(mask);
    for (Index j = 0; j < n; ++j) {
      if (mask >> j & 1U) continue;
      a.phi(j) += weight[static_cast<std::size_t>(size)] * (val[mask | (std::size_t{1} << j)] - val[mask]);
    }
  }
  return a;
}

Attribution ShapleyExplainer::sampled(const Vector& instance, std::uint64_t seed) const {
  check_instance(instance);
  const Index n = instance.size();
  const Index nb = background_.rows();

  Attribution a;
  a.base_value = base_value_;
  a.score = evaluate(model_, Matrix(instance.transpose()))(0);
  a.phi = Vector::Zero(n);
  a.standard_error = Vector::Zero(n);
  const double total = a.score - base_value_;

  // Features equal to the instance across the whole background never change a composite
  // and contribute exactly zero; they are left out of the permutations.
  std::vector<Index> active;
  for (Index j = 0; j < n; ++j)
    if ((background_.col(j).array() != instance(j)).any()) active.push_back(j);
  if (active.empty()) return a;
  const Index na = static_cast<Index>(active.size());

  Vector sum = Vector::Zero(n), sum_sq = Vector::Zero(n);
  std::mt19937_64 rng(seed);
  std::vector<Index> order = active;
  Matrix rows(std::max<Index>(na - 1, 0) * nb, n);
  for (int p = 0; p < permutations_; ++p) {
    std::shuffle(order.begin(), order.end(), rng);
    // Intermediate prefix states 1 .. na-1; state 0 is the background, state na the instance.
    Matrix current = background_;
    for (Index s = 1; s < na; ++s) {
      current.col(order[static_cast<std::size_t>(s - 1)]).setConstant(instance(order[static_cast<std::size_t>(s - 1)]));
      rows.middleRows((s - 1) * nb, nb) = current;
    }
    Vector scores;
    if (na > 1) scores = evaluate(model_, rows);
    double previous = 0.0;
    for (Index s = 1; s <= na; ++s) {
      const double value = s == na ? total : scores.segment((s - 1) * nb, nb).mean() - base_value_;
      const Index j = order[static_cast<std::size_t>(s - 1)];
      const double contribution = value - previous;
      sum(j) += contribution;
      sum_sq(j) += contribution * contribution;
      previous = value;
    }
  }
  const double P = permutations_;
  a.phi = sum / P;
  if (permutations_ > 1) {
    for (Index j : active) {
      const double var = std::max(0.0, (sum_sq(j) - P * a.phi(j) * a.phi(j)) / (P - 1.0));
      a.standard_error(j) = std::sqrt(var / P);
    }
  }
  // Enforce efficiency exactly: spread the residual in proportion to the standard errors.
  const double residual = total - a.phi.sum();
  const double se_total = a.standard_error.sum();
  if (se_total > 0.0) {
    a.phi += residual * a.standard_error / se_total;
  } else {
    for (Index j : active) a.phi(j) += residual / static_cast<double>(na);
  }
  return a;
}

}  // namespace shiftwatch

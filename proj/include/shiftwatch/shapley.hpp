#pragma once

// Shapley-value attributions of a scalar score function. The value of a feature subset K
// is the interventional expectation
//   val_x(K) = mean_{b in B} f(x on K, b off K) - mean_{b in B} f(b)
// over a background set B.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "shiftwatch/stream.hpp"

namespace shiftwatch {

// Maps instances (one per row) to scores (one per row).
using ScoreFunction = std::function<Vector(const Matrix&)>;

enum class ShapleyMode { exact, permutation };

const char* to_string(ShapleyMode mode);
ShapleyMode shapley_mode_from_string(const std::string& text);

struct Attribution {
  Vector phi;             // one value per feature
  double base_value = 0;  // mean score over the background
  double score = 0;       // f(x)
  Vector standard_error;  // zeros in exact mode
};

inline constexpr int kMaxExactFeatures = 15;

double value_function(const ScoreFunction& model, const Vector& instance,
                      std::span<const Index> subset, const Matrix& background);

class ShapleyExplainer {
 public:
  ShapleyExplainer(ScoreFunction model, Matrix background, ShapleyMode mode = ShapleyMode::permutation,
                   int permutations = 500, std::uint64_t seed = 0);

  double value(const Vector& instance, std::span<const Index> subset) const;
  double base_value() const { return base_value_; }

  // Dispatches on the configured mode; sampled mode draws from the explainer seed.
  Attribution explain(const Vector& instance) const;
  Attribution exact(const Vector& instance) const;
  Attribution sampled(const Vector& instance, std::uint64_t seed) const;
  // One attribution per row. In sampled mode row i uses a seed derived from (seed, i).
  std::vector<Attribution> explain_rows(const Matrix& instances) const;

  ShapleyMode mode() const { return mode_; }
  int permutations() const { return permutations_; }
  const Matrix& background() const { return background_; }

 private:
  void check_instance(const Vector& instance) const;
  // Means of f over the background with columns in `on` replaced by the instance, for a
  // list of subsets; returns one mean per subset.
  Vector composite_means(const Vector& instance, const std::vector<std::vector<Index>>& subsets) const;

  ScoreFunction model_;
  Matrix background_;
  ShapleyMode mode_;
  int permutations_;
  std::uint64_t seed_;
  double base_value_ = 0.0;
};

}  // namespace shiftwatch

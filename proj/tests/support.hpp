#pragma once

// Shared fixtures for the test binaries.

#include <algorithm>
#include <cmath>
#include <random>

#include "shiftwatch/datagen.hpp"
#include "shiftwatch/pipeline.hpp"

namespace shiftwatch::testing {

// Paper-shaped stream at a fifth of the length: 1600 source samples, then four 200-sample
// segments (product 2, failure, product 3, product 4).
inline StreamRecipe short_recipe(std::uint64_t seed) {
  StreamRecipe r = paper_recipe(seed);
  r.products[0].length = 1600;
  for (std::size_t i = 1; i < r.products.size(); ++i) r.products[i].length = 200;
  r.total_length = 2400;
  return r;
}

// Pipeline settings small enough for unit tests.
inline RunConfig quick_config() {
  RunConfig c;
  c.pretrain_epochs = 40;
  c.epochs = 10;
  c.pairs = 32;
  c.permutations = 4;
  c.shap_features = {"current_2", "torque_2", "current_3", "torque_3"};
  return c;
}

inline PipelineConfig quick_pipeline(std::size_t length) { return pipeline_config(quick_config(), length); }

inline LoadedStream short_stream(std::uint64_t seed) {
  auto g = generate_stream(short_recipe(seed));
  return {std::move(g.stream), std::move(g.segments)};
}

inline Matrix gaussian(Index rows, Index cols, std::mt19937_64& rng, double shift = 0.0) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = n(rng) + shift;
  return m;
}

// |a - b| relative to the larger magnitude, with a floor so that coordinates whose
// gradient is numerically zero compare on an absolute scale.
inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1e-6, std::abs(a), std::abs(b)});
}

}  // namespace shiftwatch::testing

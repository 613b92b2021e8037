#pragma once

// Nearest-neighbour estimation of the Kullback-Leibler divergence between a reference
// sample set and an incoming ("approximate") sample set. Sample sets are matrices with
// one sample per row.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "shiftwatch/error.hpp"

namespace shiftwatch {

enum class KlForm {
  // (n/m) * sum_i log(r_k(x_i) / s_k(x_i)) + log(1/(m-1)), summed over reference points.
  as_printed,
  // (n/m) * sum_i log(s_k(x_i) / r_k(x_i)) + log(|approx|/(m-1)) (Wang, Kulkarni, Verdu).
  wang_standard,
};

// Which m the normalizer uses: the number of reference points, or the largest index of a
// reference set written as {x^0, ..., x^m} (i.e. size - 1).
enum class KlNormalizer { set_size, last_index };

const char* to_string(KlForm form);
KlForm kl_form_from_string(const std::string& text);

struct KlEstimatorConfig {
  int k_nn = 1;
  KlForm form = KlForm::as_printed;
  double distance_floor = 1e-12;
  KlNormalizer normalizer = KlNormalizer::set_size;

  void validate() const {
    if (k_nn < 1) throw ConfigError("k_nn must be >= 1");
    if (!(distance_floor > 0.0)) throw ConfigError("distance floor must be positive");
  }
};

// +1 when the estimate grows as the approximate set leaves the reference support, -1
// when it shrinks (the as-printed form has log(r/s), which falls as s grows).
inline double drift_orientation(KlForm form) {
  return form == KlForm::wang_standard ? 1.0 : -1.0;
}

namespace detail {

// k-th smallest of the squared distances, k is 1-based.
template <typename Scalar>
Scalar kth_smallest(std::vector<Scalar>& values, int k) {
  auto nth = values.begin() + (k - 1);
  std::nth_element(values.begin(), nth, values.end());
  return *nth;
}

}  // namespace detail

// Euclidean distance from `query` to its k-th nearest row of `points`. With
// `exclude_exact_self`, one row bit-identical to the query is skipped (if present).
template <typename DerivedQ, typename DerivedP>
typename DerivedP::Scalar knn_distance(const Eigen::MatrixBase<DerivedQ>& query,
                                       const Eigen::MatrixBase<DerivedP>& points, int k,
                                       bool exclude_exact_self) {
  using Scalar = typename DerivedP::Scalar;
  if (k < 1) throw ConfigError("k must be >= 1");
  if (query.size() != points.cols()) throw SchemaError("query dimension differs from points");
  std::vector<Scalar> d2;
  d2.reserve(static_cast<std::size_t>(points.rows()));
  bool skipped = false;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Scalar dist = (points.row(i).transpose() - query.derived()).squaredNorm();
    if (exclude_exact_self && !skipped && points.row(i).transpose() == query.derived()) {
      skipped = true;
      continue;
    }
    d2.push_back(dist);
  }
  if (static_cast<int>(d2.size()) < k)
    throw SizeError("knn_distance needs at least " + std::to_string(k) +
                    " candidate points, have " + std::to_string(d2.size()));
  return std::sqrt(detail::kth_smallest(d2, k));
}

// Minimum reference size for the given configuration.
inline Eigen::Index min_reference_size(const KlEstimatorConfig& config) {
  const Eigen::Index base = std::max<Eigen::Index>(2, config.k_nn + 1);
  return config.normalizer == KlNormalizer::last_index ? std::max<Eigen::Index>(base, 3) : base;
}

// Combines per-reference-point log distance sums into the final estimate.
// `sum_log_ratio` = sum_i log(r_i) - log(s_i) with floored distances.
inline double combine_kl(double sum_log_ratio, Eigen::Index reference_size,
                         Eigen::Index approx_size, Eigen::Index dimension,
                         const KlEstimatorConfig& config) {
  const double m = config.normalizer == KlNormalizer::set_size
                       ? static_cast<double>(reference_size)
                       : static_cast<double>(reference_size - 1);
  const double n = static_cast<double>(dimension);
  if (config.form == KlForm::as_printed) return (n / m) * sum_log_ratio + std::log(1.0 / (m - 1.0));
  return -(n / m) * sum_log_ratio + std::log(static_cast<double>(approx_size) / (m - 1.0));
}

// k-NN KL divergence D(reference || approx). r_k is taken in the reference set without
// the point itself, s_k in the approx set with k clamped to |approx|. Distances below the
// configured floor are clamped to it before taking logarithms.
template <typename DerivedR, typename DerivedA>
double estimate_kl(const Eigen::MatrixBase<DerivedR>& reference,
                   const Eigen::MatrixBase<DerivedA>& approx, const KlEstimatorConfig& config) {
  config.validate();
  if (approx.rows() == 0) throw SizeError("approximate set is empty");
  if (reference.cols() != approx.cols())
    throw SchemaError("reference and approximate sets have different dimensions");
  const Eigen::Index m = reference.rows();
  if (m < min_reference_size(config))
    throw SizeError("reference set needs at least " + std::to_string(min_reference_size(config)) +
                    " points, has " + std::to_string(m));
  const int k_ref = config.k_nn;
  const int k_approx = std::min<int>(config.k_nn, static_cast<int>(approx.rows()));
  const double floor = config.distance_floor;

  std::vector<double> ref_d2(static_cast<std::size_t>(m - 1));
  std::vector<double> approx_d2(static_cast<std::size_t>(approx.rows()));
  double sum_log_ratio = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    std::size_t c = 0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j == i) continue;
      ref_d2[c++] = (reference.row(j) - reference.row(i)).squaredNorm();
    }
    for (Eigen::Index j = 0; j < approx.rows(); ++j)
      approx_d2[static_cast<std::size_t>(j)] = (approx.row(j) - reference.row(i)).squaredNorm();
    const double r = std::max(std::sqrt(detail::kth_smallest(ref_d2, k_ref)), floor);
    const double s = std::max(std::sqrt(detail::kth_smallest(approx_d2, k_approx)), floor);
    sum_log_ratio += std::log(r) - std::log(s);
  }
  return combine_kl(sum_log_ratio, m, approx.rows(), reference.cols(), config);
}

// Growing reference set with cached k-th neighbour distances, so that scoring one new
// approximate set costs O(m * n) instead of O(m^2 * n). Produces the same estimate as
// estimate_kl() on the same points.
class ReferenceWindow {
 public:
  ReferenceWindow(Eigen::Index dimension, int k_nn);

  void add(const Eigen::VectorXd& point);
  void clear();
  std::size_t size() const { return count_; }
  Eigen::Index dimension() const { return dim_; }
  // r_k of point i within the window (point excluded); requires size() > k.
  double kth_distance(std::size_t i) const;
  // Requires size() >= min_reference_size(config) and config.k_nn == k of the window.
  double estimate(const Eigen::MatrixXd& approx, const KlEstimatorConfig& config) const;
  Eigen::MatrixXd points() const;

 private:
  Eigen::Index dim_;
  int k_;
  std::size_t count_ = 0;
  std::vector<double> data_;     // row-major points
  std::vector<double> nearest_;  // per point: k smallest squared distances, ascending
  std::vector<int> filled_;      // valid entries in each point's nearest_ slot
};

}  // namespace shiftwatch

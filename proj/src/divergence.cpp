#include "shiftwatch/divergence.hpp"

namespace shiftwatch {

const char* to_string(KlForm form) {
  return form == KlForm::as_printed ? "as-printed" : "wang-standard";
}

KlForm kl_form_from_string(const std::string& text) {
  if (text == "as-printed") return KlForm::as_printed;
  if (text == "wang-standard") return KlForm::wang_standard;
  throw ConfigError("unknown KL form '" + text + "' (expected as-printed or wang-standard)");
}

ReferenceWindow::ReferenceWindow(Eigen::Index dimension, int k_nn) : dim_(dimension), k_(k_nn) {
  if (dimension < 1) throw SchemaError("reference window needs dimension >= 1");
  if (k_nn < 1) throw ConfigError("k_nn must be >= 1");
}

namespace {
using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Inserts d2 into an ascending list of at most k entries.
void insert_nearest(double* slot, int& filled, int k, double d2) {
  if (filled == k && d2 >= slot[k - 1]) return;
  int pos = filled < k ? filled++ : k - 1;
  while (pos > 0 && slot[pos - 1] > d2) {
    slot[pos] = slot[pos - 1];
    --pos;
  }
  slot[pos] = d2;
}
}  // namespace

void ReferenceWindow::add(const Eigen::VectorXd& point) {
  if (point.size() != dim_) throw SchemaError("reference window dimension mismatch");
  const std::size_t m = count_;
  Eigen::VectorXd d2;
  if (m > 0) {
    Eigen::Map<const RowMajor> existing(data_.data(), static_cast<Eigen::Index>(m), dim_);
    d2 = (existing.rowwise() - point.transpose()).rowwise().squaredNorm();
  }
  data_.insert(data_.end(), point.data(), point.data() + dim_);
  nearest_.resize((m + 1) * static_cast<std::size_t>(k_), 0.0);
  filled_.push_back(0);
  for (std::size_t i = 0; i < m; ++i) {
    const double d = d2(static_cast<Eigen::Index>(i));
    insert_nearest(&nearest_[i * k_], filled_[i], k_, d);
    insert_nearest(&nearest_[m * k_], filled_[m], k_, d);
  }
  ++count_;
}

void ReferenceWindow::clear() {
  count_ = 0;
  data_.clear();
  nearest_.clear();
  filled_.clear();
}

double ReferenceWindow::kth_distance(std::size_t i) const {
  if (i >= count_) throw SizeError("reference point index out of range");
  if (filled_[i] < k_) throw SizeError("reference window has fewer than k+1 points");
  return std::sqrt(nearest_[i * k_ + (k_ - 1)]);
}

double ReferenceWindow::estimate(const Eigen::MatrixXd& approx,
                                 const KlEstimatorConfig& config) const {
  config.validate();
  if (config.k_nn != k_) throw ConfigError("estimator k differs from the window's k");
  if (approx.rows() == 0) throw SizeError("approximate set is empty");
  if (approx.cols() != dim_) throw SchemaError("approximate set dimension mismatch");
  const auto m = static_cast<Eigen::Index>(count_);
  if (m < min_reference_size(config))
    throw SizeError("reference window too small for estimation");

  Eigen::Map<const RowMajor> ref(data_.data(), m, dim_);
  const int k_approx = std::min<int>(k_, static_cast<int>(approx.rows()));
  Eigen::VectorXd s2;
  if (approx.rows() == 1) {
    s2 = (ref.rowwise() - approx.row(0)).rowwise().squaredNorm();
  } else {
    s2.resize(m);
    std::vector<double> scratch(static_cast<std::size_t>(approx.rows()));
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = 0; j < approx.rows(); ++j)
        scratch[static_cast<std::size_t>(j)] = (approx.row(j) - ref.row(i)).squaredNorm();
      s2(i) = detail::kth_smallest(scratch, k_approx);
    }
  }
  const double floor = config.distance_floor;
  double sum_log_ratio = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double r = std::max(std::sqrt(nearest_[static_cast<std::size_t>(i) * k_ + (k_ - 1)]), floor);
    const double s = std::max(std::sqrt(s2(i)), floor);
    sum_log_ratio += std::log(r) - std::log(s);
  }
  return combine_kl(sum_log_ratio, m, approx.rows(), dim_, config);
}

Eigen::MatrixXd ReferenceWindow::points() const {
  return Eigen::Map<const RowMajor>(data_.data(), static_cast<Eigen::Index>(count_), dim_);
}

}  // namespace shiftwatch

#include "shiftwatch/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "shiftwatch/shap_monitor.hpp"

namespace shiftwatch {

double average_path_length(double n) {
  if (n <= 1.0) return 0.0;
  if (n <= 2.0) return 1.0;
  constexpr double euler = 0.5772156649015329;
  return 2.0 * (std::log(n - 1.0) + euler) - 2.0 * (n - 1.0) / n;
}

AnomalyDetector::AnomalyDetector(double contamination, bool standardize)
    : contamination_(contamination), standardize_(standardize) {
  if (!(contamination >= 0.0 && contamination < 1.0)) throw ConfigError("contamination must be in [0, 1)");
}

void AnomalyDetector::fit(const Matrix& training) {
  if (training.rows() == 0 || training.cols() == 0) throw SizeError("empty training set");
  if (standardize_) scaler_ = Standardizer::fit(training);
  fit_standardized(standardize_ ? scaler_.transform(training) : training);
  const Vector s = training_scores();
  std::vector<double> sorted(s.data(), s.data() + s.size());
  std::sort(sorted.begin(), sorted.end());
  threshold_ = quantile_sorted(sorted, 1.0 - contamination_);
  fitted_ = true;
}

Vector AnomalyDetector::score(const Matrix& rows) const {
  if (!fitted_) throw StateError(name() + " is not fitted");
  return score_standardized(standardize_ ? scaler_.transform(rows) : rows);
}

double AnomalyDetector::score(const Vector& sample) const { return score(Matrix(sample.transpose()))(0); }

std::vector<int> AnomalyDetector::classify(const Matrix& rows) const {
  const Vector s = score(rows);
  std::vector<int> out(static_cast<std::size_t>(s.size()));
  for (Index i = 0; i < s.size(); ++i) out[static_cast<std::size_t>(i)] = s(i) > threshold_ ? 1 : 0;
  return out;
}

int AnomalyDetector::classify(const Vector& sample) const { return score(sample) > threshold_ ? 1 : 0; }

// Isolation Forest

IsolationForest::IsolationForest(IsolationForestConfig config)
    : AnomalyDetector(config.contamination, config.standardize), config_(config) {
  if (config_.trees < 1 || config_.subsample < 1) throw ConfigError("isolation forest needs trees and subsample >= 1");
}

void IsolationForest::fit_standardized(const Matrix& rows) {
  const Index n = rows.rows();
  psi_ = static_cast<int>(std::min<Index>(config_.subsample, n));
  max_depth_ = static_cast<int>(std::ceil(std::log2(static_cast<double>(psi_))));
  std::mt19937_64 rng(config_.seed);
  trees_.assign(static_cast<std::size_t>(config_.trees), {});

  std::vector<Index> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), Index{0});
  for (auto& tree : trees_) {
    std::vector<Index> sample = all;
    std::shuffle(sample.begin(), sample.end(), rng);
    sample.resize(static_cast<std::size_t>(psi_));

    // Iterative build: (node id, member range, depth).
    struct Work {
      int node;
      std::vector<Index> members;
      int depth;
    };
    tree.push_back({});
    std::vector<Work> stack;
    stack.push_back({0, std::move(sample), 0});
    while (!stack.empty()) {
      Work w = std::move(stack.back());
      stack.pop_back();
      Node& node = tree[static_cast<std::size_t>(w.node)];
      node.size = static_cast<int>(w.members.size());
      if (w.depth >= max_depth_ || w.members.size() <= 1) continue;
      std::vector<int> candidates;
      std::vector<std::pair<double, double>> ranges(static_cast<std::size_t>(rows.cols()));
      for (Index j = 0; j < rows.cols(); ++j) {
        double lo = rows(w.members.front(), j), hi = lo;
        for (Index i : w.members) {
          lo = std::min(lo, rows(i, j));
          hi = std::max(hi, rows(i, j));
        }
        ranges[static_cast<std::size_t>(j)] = {lo, hi};
        if (hi > lo) candidates.push_back(static_cast<int>(j));
      }
      if (candidates.empty()) continue;
      const int f = candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];
      const auto [lo, hi] = ranges[static_cast<std::size_t>(f)];
      double split = std::uniform_real_distribution<double>(lo, hi)(rng);
      if (split <= lo) split = std::nextafter(lo, hi);
      std::vector<Index> left, right;
      for (Index i : w.members) (rows(i, f) < split ? left : right).push_back(i);
      const int l = static_cast<int>(tree.size());
      tree.push_back({});
      tree.push_back({});
      Node& parent = tree[static_cast<std::size_t>(w.node)];
      parent.feature = f;
      parent.split = split;
      parent.left = l;
      parent.right = l + 1;
      stack.push_back({l, std::move(left), w.depth + 1});
      stack.push_back({l + 1, std::move(right), w.depth + 1});
    }
  }
  train_scores_ = score_standardized(rows);
}

double IsolationForest::path_length(const Tree& tree, const double* x) const {
  int node = 0;
  int depth = 0;
  while (tree[static_cast<std::size_t>(node)].feature >= 0) {
    const Node& n = tree[static_cast<std::size_t>(node)];
    node = x[n.feature] < n.split ? n.left : n.right;
    ++depth;
  }
  return depth + average_path_length(tree[static_cast<std::size_t>(node)].size);
}

double IsolationForest::expected_path_length(const Vector& standardized) const {
  double total = 0.0;
  for (const auto& tree : trees_) total += path_length(tree, standardized.data());
  return total / static_cast<double>(trees_.size());
}

Vector IsolationForest::score_standardized(const Matrix& rows) const {
  const double c = average_path_length(psi_);
  Vector out(rows.rows());
  Vector x(rows.cols());
  for (Index i = 0; i < rows.rows(); ++i) {
    x = rows.row(i).transpose();
    // A one-point subsample has c = 0; every point then scores 1.
    out(i) = c > 0.0 ? std::exp2(-expected_path_length(x) / c) : 1.0;
  }
  return out;
}

// Local Outlier Factor

LocalOutlierFactor::LocalOutlierFactor(LofConfig config)
    : AnomalyDetector(config.contamination, config.standardize), config_(config) {
  if (config_.k < 1) throw ConfigError("LOF needs k >= 1");
}

void LocalOutlierFactor::neighbours(const Matrix& queries, bool self,
                                    std::vector<std::vector<std::pair<Index, double>>>& out) const {
  const Index n = reference_.rows();
  const Vector ref_norms = reference_.rowwise().squaredNorm();
  out.assign(static_cast<std::size_t>(queries.rows()), {});
  constexpr Index block = 256;
  std::vector<std::pair<Index, double>> row;
  for (Index start = 0; start < queries.rows(); start += block) {
    const Index len = std::min(block, queries.rows() - start);
    const auto q = queries.middleRows(start, len);
    Matrix d2 = (-2.0 * q * reference_.transpose()).eval();
    d2.colwise() += q.rowwise().squaredNorm();
    d2.rowwise() += ref_norms.transpose();
    for (Index r = 0; r < len; ++r) {
      row.clear();
      for (Index j = 0; j < n; ++j) {
        if (self && j == start + r) continue;
        row.emplace_back(j, std::sqrt(std::max(0.0, d2(r, j))));
      }
      const auto kk = static_cast<std::ptrdiff_t>(std::min<std::size_t>(static_cast<std::size_t>(k_), row.size()));
      auto by_distance = [](const auto& a, const auto& b) {
        return a.second < b.second || (a.second == b.second && a.first < b.first);
      };
      std::partial_sort(row.begin(), row.begin() + kk, row.end(), by_distance);
      out[static_cast<std::size_t>(start + r)].assign(row.begin(), row.begin() + kk);
    }
  }
}

void LocalOutlierFactor::fit_standardized(const Matrix& rows) {
  if (rows.rows() < 2) throw SizeError("LOF needs at least two training samples");
  reference_ = rows;
  k_ = static_cast<int>(std::min<Index>(config_.k, rows.rows() - 1));
  std::vector<std::vector<std::pair<Index, double>>> nn;
  neighbours(reference_, true, nn);
  const Index n = rows.rows();
  k_distance_.resize(n);
  for (Index i = 0; i < n; ++i) k_distance_(i) = nn[static_cast<std::size_t>(i)].back().second;
  lrd_.resize(n);
  for (Index i = 0; i < n; ++i) {
    double reach = 0.0;
    for (const auto& [j, d] : nn[static_cast<std::size_t>(i)]) reach += std::max(k_distance_(j), d);
    lrd_(i) = 1.0 / (reach / k_ + 1e-10);
  }
  train_scores_.resize(n);
  for (Index i = 0; i < n; ++i) {
    double sum = 0.0;
    for (const auto& [j, d] : nn[static_cast<std::size_t>(i)]) sum += lrd_(j);
    train_scores_(i) = sum / k_ / lrd_(i);
  }
}

Vector LocalOutlierFactor::score_standardized(const Matrix& rows) const {
  std::vector<std::vector<std::pair<Index, double>>> nn;
  neighbours(rows, false, nn);
  Vector out(rows.rows());
  for (Index i = 0; i < rows.rows(); ++i) {
    double reach = 0.0, sum = 0.0;
    for (const auto& [j, d] : nn[static_cast<std::size_t>(i)]) {
      reach += std::max(k_distance_(j), d);
      sum += lrd_(j);
    }
    const double lrd = 1.0 / (reach / k_ + 1e-10);
    out(i) = sum / k_ / lrd;
  }
  return out;
}

// Autoencoder

AutoencoderDetector::AutoencoderDetector(AutoencoderConfig config)
    : AnomalyDetector(config.contamination, config.standardize), config_(config) {
  if (config_.hidden < 1 || config_.epochs < 0 || config_.minibatch < 1)
    throw ConfigError("invalid autoencoder configuration");
}

void AutoencoderDetector::fit_standardized(const Matrix& rows) {
  const int n = static_cast<int>(rows.cols());
  network_ = nn::Network({{n, config_.hidden, n}, {config_.activation}, nn::Activation::linear, config_.seed});
  nn::Optimizer optimizer(config_.optimizer);
  const Matrix data = rows.transpose();  // columns are samples
  std::vector<Index> order(static_cast<std::size_t>(data.cols()));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(config_.seed ^ 0x5bd1e995ULL);
  Matrix batch;
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config_.minibatch)) {
      const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(config_.minibatch), order.size() - start);
      batch.resize(data.rows(), static_cast<Index>(len));
      for (std::size_t c = 0; c < len; ++c) batch.col(static_cast<Index>(c)) = data.col(order[start + c]);
      const auto cache = network_.forward(batch);
      const auto loss = nn::squared_error(cache.output(), batch);
      optimizer.step(network_, network_.backward(cache, loss.gradient).parameters);
    }
  }
  train_scores_ = score_standardized(rows);
}

Vector AutoencoderDetector::score_standardized(const Matrix& rows) const {
  const Matrix x = rows.transpose();
  const Matrix diff = network_.predict(x) - x;
  return diff.colwise().squaredNorm().transpose() / static_cast<double>(rows.cols());
}

// Evaluation

std::vector<SegmentEvaluation> evaluate_flags(std::span<const int> flags, const LabeledStream& stream,
                                              std::span<const SegmentDescriptor> segments) {
  if (!stream.labeled) throw InputError("evaluation needs a labeled stream");
  if (flags.size() != stream.size()) throw SizeError("one flag per stream sample required");
  std::vector<SegmentEvaluation> out;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto& seg = segments[s];
    if (seg.end > stream.size() || seg.start >= seg.end) throw InputError("segment outside the stream");
    SegmentEvaluation e;
    e.segment = s;
    e.kind = seg.kind;
    e.start = seg.start;
    e.end = seg.end;
    e.samples = seg.end - seg.start;
    std::size_t flagged = 0, positives = 0, hits = 0;
    for (std::size_t i = seg.start; i < seg.end; ++i) {
      const int y = stream.samples[i].label;
      flagged += flags[i] != 0;
      positives += y != 0;
      hits += flags[i] != 0 && y != 0;
    }
    e.flagged_rate = static_cast<double>(flagged) / static_cast<double>(e.samples);
    e.precision = flagged ? static_cast<double>(hits) / static_cast<double>(flagged) : 1.0;
    e.recall = positives ? static_cast<double>(hits) / static_cast<double>(positives) : 1.0;
    out.push_back(e);
  }
  return out;
}

std::vector<SegmentEvaluation> evaluate_on_stream(const AnomalyDetector& detector, const LabeledStream& stream,
                                                  std::span<const SegmentDescriptor> segments,
                                                  const std::vector<std::string>& features) {
  Matrix rows = stack_rows(std::span<const LabeledSample>(stream.samples));
  if (!features.empty()) {
    const auto idx = stream.schema.indices_of(features);
    Matrix sub(rows.rows(), static_cast<Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) sub.col(static_cast<Index>(j)) = rows.col(idx[j]);
    rows = std::move(sub);
  }
  const auto flags = detector.classify(rows);
  return evaluate_flags(flags, stream, segments);
}

void write_evaluation_csv(std::ostream& out, const std::string& detector,
                          std::span<const SegmentEvaluation> rows, bool header) {
  if (header) out << "detector,segment,kind,start,end,samples,flagged_rate,precision,recall\n";
  for (const auto& r : rows)
    out << detector << ',' << r.segment << ',' << to_string(r.kind) << ',' << r.start << ',' << r.end << ','
        << r.samples << ',' << format_double(r.flagged_rate) << ',' << format_double(r.precision) << ','
        << format_double(r.recall) << '\n';
}

std::unique_ptr<AnomalyDetector> make_detector(const std::string& name, double contamination, std::uint64_t seed) {
  if (name == "if" || name == "isolation-forest") {
    IsolationForestConfig c;
    c.contamination = contamination;
    c.seed = seed;
    return std::make_unique<IsolationForest>(c);
  }
  if (name == "lof" || name == "local-outlier-factor") {
    LofConfig c;
    c.contamination = contamination;
    return std::make_unique<LocalOutlierFactor>(c);
  }
  if (name == "ae" || name == "autoencoder") {
    AutoencoderConfig c;
    c.contamination = contamination;
    c.seed = seed;
    return std::make_unique<AutoencoderDetector>(c);
  }
  throw ConfigError("unknown detector '" + name + "'");
}

}  // namespace shiftwatch

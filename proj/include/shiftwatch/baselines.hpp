#pragma once

// Static anomaly detectors fitted once on the source product: Isolation Forest, Local
// Outlier Factor and a reconstruction-error autoencoder. Inputs are rows of samples.

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "shiftwatch/stream.hpp"
#include "shiftwatch/tinynn.hpp"

namespace shiftwatch {

inline constexpr double kDefaultContamination = 0.085;

// c(n): average path length of an unsuccessful BST search, c(1) = c(0) = 0.
double average_path_length(double n);

class AnomalyDetector {
 public:
  virtual ~AnomalyDetector() = default;

  // Fits on the rows of `training` and sets the threshold to the (1 - contamination)
  // quantile of the training scores.
  void fit(const Matrix& training);
  Vector score(const Matrix& rows) const;
  double score(const Vector& sample) const;
  // 1 iff score > threshold.
  std::vector<int> classify(const Matrix& rows) const;
  int classify(const Vector& sample) const;

  bool fitted() const { return fitted_; }
  double threshold() const { return threshold_; }
  void set_threshold(double value) { threshold_ = value; }
  double contamination() const { return contamination_; }
  virtual std::string name() const = 0;

 protected:
  AnomalyDetector(double contamination, bool standardize);
  virtual void fit_standardized(const Matrix& rows) = 0;
  virtual Vector training_scores() const = 0;
  virtual Vector score_standardized(const Matrix& rows) const = 0;

 private:
  double contamination_;
  bool standardize_;
  Standardizer scaler_;
  double threshold_ = 0.0;
  bool fitted_ = false;
};

struct IsolationForestConfig {
  int trees = 100;
  int subsample = 256;
  std::uint64_t seed = 11;
  double contamination = kDefaultContamination;
  bool standardize = true;
};

class IsolationForest : public AnomalyDetector {
 public:
  explicit IsolationForest(IsolationForestConfig config = {});
  std::string name() const override { return "isolation-forest"; }
  // Mean path length over the trees, before normalization.
  double expected_path_length(const Vector& standardized) const;
  int max_depth() const { return max_depth_; }
  int effective_subsample() const { return psi_; }

 protected:
  void fit_standardized(const Matrix& rows) override;
  Vector training_scores() const override { return train_scores_; }
  Vector score_standardized(const Matrix& rows) const override;

 private:
  struct Node {
    int feature = -1;  // -1 = leaf
    double split = 0.0;
    int left = -1;
    int right = -1;
    int size = 0;
  };
  using Tree = std::vector<Node>;
  double path_length(const Tree& tree, const double* x) const;

  IsolationForestConfig config_;
  std::vector<Tree> trees_;
  int psi_ = 0;
  int max_depth_ = 0;
  Vector train_scores_;
};

struct LofConfig {
  int k = 20;
  double contamination = kDefaultContamination;
  bool standardize = true;
};

class LocalOutlierFactor : public AnomalyDetector {
 public:
  explicit LocalOutlierFactor(LofConfig config = {});
  std::string name() const override { return "local-outlier-factor"; }
  int k() const { return k_; }

 protected:
  void fit_standardized(const Matrix& rows) override;
  Vector training_scores() const override { return train_scores_; }
  Vector score_standardized(const Matrix& rows) const override;

 private:
  // k nearest reference points of each query row (excluding row i of the reference when
  // `self` is set), as (index, distance) sorted by distance.
  void neighbours(const Matrix& queries, bool self, std::vector<std::vector<std::pair<Index, double>>>& out) const;

  LofConfig config_;
  int k_ = 0;
  Matrix reference_;
  Vector k_distance_;
  Vector lrd_;
  Vector train_scores_;
};

struct AutoencoderConfig {
  int hidden = 8;
  nn::Activation activation = nn::Activation::tanh;
  int epochs = 500;
  int minibatch = 64;
  nn::OptimizerConfig optimizer{nn::OptimizerKind::adam, 1e-3};
  std::uint64_t seed = 13;
  double contamination = kDefaultContamination;
  bool standardize = true;
};

class AutoencoderDetector : public AnomalyDetector {
 public:
  explicit AutoencoderDetector(AutoencoderConfig config = {});
  std::string name() const override { return "autoencoder"; }
  const nn::Network& network() const { return network_; }

 protected:
  void fit_standardized(const Matrix& rows) override;
  Vector training_scores() const override { return train_scores_; }
  Vector score_standardized(const Matrix& rows) const override;

 private:
  AutoencoderConfig config_;
  nn::Network network_;
  Vector train_scores_;
};

struct SegmentEvaluation {
  std::size_t segment = 0;
  SegmentKind kind = SegmentKind::target_product;
  std::size_t start = 0;
  std::size_t end = 0;
  std::size_t samples = 0;
  double flagged_rate = 0.0;
  double precision = 1.0;  // 1 when nothing is flagged
  double recall = 1.0;     // 1 when the segment has no anomalies
};

// Scores from `flags` (one per stream sample, 0/1) summarized per segment.
std::vector<SegmentEvaluation> evaluate_flags(std::span<const int> flags, const LabeledStream& stream,
                                              std::span<const SegmentDescriptor> segments);
std::vector<SegmentEvaluation> evaluate_on_stream(const AnomalyDetector& detector, const LabeledStream& stream,
                                                  std::span<const SegmentDescriptor> segments,
                                                  const std::vector<std::string>& features = {});

void write_evaluation_csv(std::ostream& out, const std::string& detector,
                          std::span<const SegmentEvaluation> rows, bool header = true);

std::unique_ptr<AnomalyDetector> make_detector(const std::string& name, double contamination, std::uint64_t seed);

}  // namespace shiftwatch

#pragma once

// Classification and Contrastive Semantic Alignment (CCSA) domain adaptation, driven in
// batches: train on a small labeled target batch, predict the following batch, grow the
// target set with the predictions, restart from the source model on every changepoint.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shiftwatch/stream.hpp"
#include "shiftwatch/tinynn.hpp"

namespace shiftwatch {

enum class LabelSource { true_labels, pseudo_labels };
enum class LabelOrigin { true_label, pseudo };

const char* to_string(LabelSource source);
LabelSource label_source_from_string(const std::string& text);

struct CcsaConfig {
  std::vector<int> encoder_hidden{16};
  int embedding_dim = 8;
  nn::Activation encoder_activation = nn::Activation::tanh;
  double alpha = 0.25;     // weight of the alignment terms
  double margin = 1.0;     // separation margin for different-label pairs
  double threshold = 0.5;  // anomaly iff score > threshold
  int epochs = 100;
  int pairs_per_kind = 128;
  nn::OptimizerConfig optimizer{nn::OptimizerKind::adam, 1e-3};
  int pretrain_epochs = 500;
  int pretrain_batch = 64;
  std::size_t batch_size = 50;
  LabelSource label_source = LabelSource::true_labels;
  std::uint64_t seed = 7;

  void validate() const;
};

// Encoder g: n -> embedding, head h: embedding -> (0, 1). Inputs are standardized with
// statistics of the source set before entering the encoder.
class CcsaModel {
 public:
  CcsaModel() = default;
  CcsaModel(Standardizer scaler, const CcsaConfig& config);

  // rows = raw samples; returns h(g(standardize(x))) per row.
  Vector score(const Matrix& rows) const;
  // rows = standardized samples; returns the embedding with one column per sample.
  Matrix embed_standardized(const Matrix& rows) const;
  Vector score_standardized(const Matrix& rows) const;

  nn::Network encoder;
  nn::Network head;
  Standardizer scaler;
  double alpha = 0.25;
  double margin = 1.0;
  double threshold = 0.5;

  std::uint64_t hash() const;
  Index input_dimension() const { return encoder.spec().input_size(); }
};

struct Pair {
  std::size_t source = 0;
  std::size_t target = 0;
};

struct PairSet {
  std::vector<Pair> positive;  // same label
  std::vector<Pair> negative;  // different label
  // Set when no same-label cross-domain pair exists; training proceeds on what is there.
  std::optional<std::string> pairing_error;
};

// Draws up to `count` distinct cross-domain pairs of each kind. When fewer distinct pairs
// exist than requested, all of them are returned.
PairSet sample_pairs(std::span<const int> source_labels, std::span<const int> target_labels,
                     std::size_t count, std::uint64_t seed);

struct LossTerms {
  double total = 0.0;
  double classification = 0.0;  // mean BCE on the labeled batch
  double alignment = 0.0;       // mean 0.5*|g(xs)-g(xt)|^2 over same-label pairs
  double separation = 0.0;      // mean 0.5*max(0, margin - |g(xs)-g(xt)|)^2 over different-label pairs

  bool operator==(const LossTerms&) const = default;
};

struct LossResult {
  LossTerms terms;
  nn::Parameters encoder_gradient;
  nn::Parameters head_gradient;
};

// L = (1 - alpha) * classification + alpha * (alignment + separation).
// Sample matrices hold one standardized sample per row; pairs index source/target rows.
LossResult ccsa_loss(const CcsaModel& model, const Matrix& source, const Matrix& target,
                     const PairSet& pairs, const Matrix& batch, std::span<const int> batch_labels);

struct TrainMetrics {
  LossTerms final_loss;
  int epochs = 0;
  std::optional<std::string> pairing_error;
};

struct Prediction {
  std::vector<int> labels;
  Vector scores;
  std::uint64_t model_hash = 0;
};

struct TargetEntry {
  std::size_t index = 0;
  Vector values;  // standardized
  int label = 0;
  LabelOrigin origin = LabelOrigin::true_label;
};

struct SessionSnapshot {
  std::size_t cursor = 0;
  std::size_t target_size = 0;
  std::size_t pseudo_labeled = 0;
  std::size_t trained_batches = 0;
  bool frozen = false;
  std::uint64_t model_hash = 0;
  std::uint64_t source_hash = 0;
};

class AdaptationSession {
 public:
  // Fits the standardizer on `source` and pre-trains the classifier on it with the
  // classification loss only. The result is retained as the source snapshot.
  AdaptationSession(CcsaConfig config, std::span<const LabeledSample> source,
                    std::size_t start_index = 0);

  // Updates the model for config.epochs epochs on re-sampled pairs and appends the batch to
  // the target set with the given origin. Advances the cursor by the batch size.
  TrainMetrics train_on_batch(std::span<const LabeledSample> batch,
                              LabelOrigin origin = LabelOrigin::true_label);
  // label = 1 iff score > threshold; predicted samples join the target set as pseudo labels.
  Prediction predict_batch(std::span<const Sample> batch);
  // Scores without touching the target set.
  Prediction classify(std::span<const Sample> batch) const;
  // Drops the target set and returns to the source snapshot.
  void restart(std::size_t changepoint_index);
  // Stops training and reverts to the source snapshot until the next restart.
  void freeze();

  const CcsaModel& model() const { return model_; }
  const CcsaModel& source_model() const { return source_model_; }
  const CcsaConfig& config() const { return config_; }
  std::span<const TargetEntry> target() const { return target_; }
  std::size_t source_size() const { return source_labels_.size(); }
  const Matrix& source_matrix() const { return source_; }
  std::size_t cursor() const { return cursor_; }
  bool frozen() const { return frozen_; }
  std::size_t trained_batches() const { return trained_batches_; }
  SessionSnapshot snapshot() const;

 private:
  void upsert_target(const Sample& sample, const Vector& standardized, int label, LabelOrigin origin);
  void pretrain();

  CcsaConfig config_;
  Matrix source_;  // standardized source rows
  std::vector<int> source_labels_;
  CcsaModel model_;
  CcsaModel source_model_;
  nn::Optimizer encoder_optimizer_;
  nn::Optimizer head_optimizer_;
  std::vector<TargetEntry> target_;
  std::size_t cursor_ = 0;
  std::size_t trained_batches_ = 0;
  bool frozen_ = false;
};

}  // namespace shiftwatch

#include "shiftwatch/ccsa.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <unordered_set>

namespace shiftwatch {

const char* to_string(LabelSource source) {
  return source == LabelSource::true_labels ? "true-labels" : "pseudo-labels";
}

LabelSource label_source_from_string(const std::string& text) {
  if (text == "true-labels") return LabelSource::true_labels;
  if (text == "pseudo-labels") return LabelSource::pseudo_labels;
  throw ConfigError("unknown label source '" + text + "'");
}

void CcsaConfig::validate() const {
  if (embedding_dim < 1) throw ConfigError("embedding dimension must be positive");
  for (int h : encoder_hidden)
    if (h < 1) throw ConfigError("encoder hidden sizes must be positive");
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must be in [0, 1]");
  if (!(margin > 0.0)) throw ConfigError("margin must be positive");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must be in (0, 1)");
  if (epochs < 0 || pretrain_epochs < 0) throw ConfigError("epochs must be non-negative");
  if (pairs_per_kind < 0) throw ConfigError("pairs per kind must be non-negative");
  if (pretrain_batch < 1) throw ConfigError("pretrain batch must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  optimizer.validate();
}

namespace {

nn::NetworkSpec encoder_spec(Index input_dim, const CcsaConfig& config) {
  nn::NetworkSpec spec;
  spec.layer_sizes.push_back(static_cast<int>(input_dim));
  for (int h : config.encoder_hidden) spec.layer_sizes.push_back(h);
  spec.layer_sizes.push_back(config.embedding_dim);
  spec.hidden_activations = {config.encoder_activation};
  spec.output_activation = config.encoder_activation;
  spec.seed = config.seed;
  return spec;
}

nn::NetworkSpec head_spec(const CcsaConfig& config) {
  return {{config.embedding_dim, 1}, {}, nn::Activation::sigmoid, config.seed + 1};
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  x ^= x >> 31;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 29;
  return x;
}

}  // namespace

CcsaModel::CcsaModel(Standardizer s, const CcsaConfig& config)
    : encoder(encoder_spec(s.mean().size(), config)),
      head(head_spec(config)),
      scaler(std::move(s)),
      alpha(config.alpha),
      margin(config.margin),
      threshold(config.threshold) {}

Matrix CcsaModel::embed_standardized(const Matrix& rows) const {
  return encoder.predict(Matrix(rows.transpose()));
}

Vector CcsaModel::score_standardized(const Matrix& rows) const {
  return head.predict(embed_standardized(rows)).row(0).transpose();
}

Vector CcsaModel::score(const Matrix& rows) const {
  return score_standardized(scaler.transform(rows));
}

std::uint64_t CcsaModel::hash() const {
  return mix_seed(encoder.parameters().hash(), head.parameters().hash());
}

PairSet sample_pairs(std::span<const int> source_labels, std::span<const int> target_labels,
                     std::size_t count, std::uint64_t seed) {
  if (source_labels.empty() || target_labels.empty())
    throw SizeError("pair sampling needs non-empty source and target sets");
  std::vector<std::size_t> src[2], tgt[2];
  for (std::size_t i = 0; i < source_labels.size(); ++i) src[source_labels[i] != 0].push_back(i);
  for (std::size_t i = 0; i < target_labels.size(); ++i) tgt[target_labels[i] != 0].push_back(i);

  std::mt19937_64 rng(seed);
  // blocks: (source class, target class) combinations making up one pair kind
  auto draw = [&](std::initializer_list<std::pair<int, int>> blocks) {
    std::vector<std::pair<int, int>> live;
    std::vector<std::size_t> sizes;
    std::size_t total = 0;
    for (auto [a, b] : blocks) {
      const std::size_t n = src[a].size() * tgt[b].size();
      if (n == 0) continue;
      live.emplace_back(a, b);
      sizes.push_back(n);
      total += n;
    }
    std::vector<Pair> out;
    auto decode = [&](std::size_t code) {
      std::size_t blk = 0;
      while (code >= sizes[blk]) code -= sizes[blk++];
      auto [a, b] = live[blk];
      return Pair{src[a][code / tgt[b].size()], tgt[b][code % tgt[b].size()]};
    };
    if (total <= count) {
      for (std::size_t code = 0; code < total; ++code) out.push_back(decode(code));
      return out;
    }
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    std::unordered_set<std::size_t> seen;
    while (out.size() < count) {
      const std::size_t code = pick(rng);
      if (seen.insert(code).second) out.push_back(decode(code));
    }
    return out;
  };

  PairSet pairs;
  pairs.positive = draw({{0, 0}, {1, 1}});
  pairs.negative = draw({{0, 1}, {1, 0}});
  if (pairs.positive.empty())
    pairs.pairing_error = "no same-label source/target pair available";
  return pairs;
}

LossResult ccsa_loss(const CcsaModel& model, const Matrix& source, const Matrix& target,
                     const PairSet& pairs, const Matrix& batch, std::span<const int> batch_labels) {
  if (batch.rows() == 0 || batch_labels.empty()) throw SizeError("ccsa loss needs a labeled batch");
  if (static_cast<std::size_t>(batch.rows()) != batch_labels.size())
    throw SchemaError("batch rows differ from label count");
  const Index dim = model.input_dimension();
  if (batch.cols() != dim || (source.size() && source.cols() != dim) || (target.size() && target.cols() != dim))
    throw SchemaError("ccsa loss input dimension mismatch");

  const Index B = batch.rows();
  const Index P = static_cast<Index>(pairs.positive.size());
  const Index N = static_cast<Index>(pairs.negative.size());
  Matrix inputs(dim, B + 2 * P + 2 * N);
  inputs.leftCols(B) = batch.transpose();
  for (Index k = 0; k < P; ++k) {
    inputs.col(B + k) = source.row(static_cast<Index>(pairs.positive[k].source)).transpose();
    inputs.col(B + P + k) = target.row(static_cast<Index>(pairs.positive[k].target)).transpose();
  }
  const Index neg0 = B + 2 * P;
  for (Index k = 0; k < N; ++k) {
    inputs.col(neg0 + k) = source.row(static_cast<Index>(pairs.negative[k].source)).transpose();
    inputs.col(neg0 + N + k) = target.row(static_cast<Index>(pairs.negative[k].target)).transpose();
  }

  const double alpha = model.alpha;
  const auto enc_cache = model.encoder.forward(inputs);
  const Matrix& emb = enc_cache.output();
  const auto head_cache = model.head.forward(emb.leftCols(B));
  const auto bce = nn::binary_cross_entropy(head_cache.output(), batch_labels);
  auto head_grad = model.head.backward(head_cache, (1.0 - alpha) * bce.gradient);

  LossResult out;
  out.terms.classification = bce.loss;
  Matrix d_emb = Matrix::Zero(emb.rows(), emb.cols());
  d_emb.leftCols(B) = head_grad.input;

  for (Index k = 0; k < P; ++k) {
    const Vector diff = emb.col(B + k) - emb.col(B + P + k);
    out.terms.alignment += 0.5 * diff.squaredNorm() / static_cast<double>(P);
    d_emb.col(B + k) += alpha * diff / static_cast<double>(P);
    d_emb.col(B + P + k) -= alpha * diff / static_cast<double>(P);
  }
  for (Index k = 0; k < N; ++k) {
    const Vector diff = emb.col(neg0 + k) - emb.col(neg0 + N + k);
    const double d = diff.norm();
    const double hinge = std::max(0.0, model.margin - d);
    out.terms.separation += 0.5 * hinge * hinge / static_cast<double>(N);
    if (hinge > 0.0 && d > 0.0) {
      const Vector g = -alpha * hinge / static_cast<double>(N) * diff / d;
      d_emb.col(neg0 + k) += g;
      d_emb.col(neg0 + N + k) -= g;
    }
  }
  out.terms.total = (1.0 - alpha) * out.terms.classification +
                    alpha * (out.terms.alignment + out.terms.separation);
  out.encoder_gradient = model.encoder.backward(enc_cache, d_emb).parameters;
  out.head_gradient = std::move(head_grad.parameters);
  return out;
}

AdaptationSession::AdaptationSession(CcsaConfig config, std::span<const LabeledSample> source,
                                     std::size_t start_index)
    : config_(std::move(config)),
      encoder_optimizer_(config_.optimizer),
      head_optimizer_(config_.optimizer),
      cursor_(start_index) {
  config_.validate();
  if (source.empty()) throw SizeError("adaptation needs a non-empty source set");
  const Matrix raw = stack_rows(source);
  auto scaler = Standardizer::fit(raw);
  source_ = scaler.transform(raw);
  for (const auto& s : source) {
    if (s.label != 0 && s.label != 1) throw InputError("labels must be 0 or 1");
    source_labels_.push_back(s.label);
  }
  model_ = CcsaModel(std::move(scaler), config_);
  pretrain();
  source_model_ = model_;
}

void AdaptationSession::pretrain() {
  CcsaModel& m = model_;
  const double alpha = m.alpha;
  m.alpha = 0.0;
  nn::Optimizer enc_opt(config_.optimizer), head_opt(config_.optimizer);
  std::mt19937_64 rng(mix_seed(config_.seed, 0x5eed));
  std::vector<std::size_t> order(source_labels_.size());
  std::iota(order.begin(), order.end(), 0);
  const PairSet no_pairs;
  const std::size_t mb = static_cast<std::size_t>(config_.pretrain_batch);
  for (int epoch = 0; epoch < config_.pretrain_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += mb) {
      const std::size_t end = std::min(order.size(), start + mb);
      Matrix batch(static_cast<Index>(end - start), source_.cols());
      std::vector<int> labels;
      for (std::size_t i = start; i < end; ++i) {
        batch.row(static_cast<Index>(i - start)) = source_.row(static_cast<Index>(order[i]));
        labels.push_back(source_labels_[order[i]]);
      }
      auto loss = ccsa_loss(m, source_, source_, no_pairs, batch, labels);
      enc_opt.step(m.encoder, loss.encoder_gradient);
      head_opt.step(m.head, loss.head_gradient);
    }
  }
  m.alpha = alpha;
}

void AdaptationSession::upsert_target(const Sample& sample, const Vector& standardized, int label,
                                      LabelOrigin origin) {
  for (auto& e : target_) {
    if (e.index == sample.index) {
      e.label = label;
      e.origin = origin;
      return;
    }
  }
  target_.push_back({sample.index, standardized, label, origin});
}

TrainMetrics AdaptationSession::train_on_batch(std::span<const LabeledSample> batch,
                                               LabelOrigin origin) {
  if (batch.empty()) throw SizeError("training batch is empty");
  if (frozen_) throw StateError("session is frozen after a failure verdict");
  const Matrix x = model_.scaler.transform(stack_rows(batch));
  std::vector<int> labels;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].label != 0 && batch[i].label != 1) throw InputError("labels must be 0 or 1");
    labels.push_back(batch[i].label);
    upsert_target(batch[i].sample, x.row(static_cast<Index>(i)).transpose(), batch[i].label, origin);
  }
  Matrix target(static_cast<Index>(target_.size()), x.cols());
  std::vector<int> target_labels;
  for (std::size_t i = 0; i < target_.size(); ++i) {
    target.row(static_cast<Index>(i)) = target_[i].values.transpose();
    target_labels.push_back(target_[i].label);
  }

  TrainMetrics metrics;
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    const auto seed = mix_seed(mix_seed(config_.seed, trained_batches_ + 1), static_cast<std::uint64_t>(epoch));
    const PairSet pairs = sample_pairs(source_labels_, target_labels,
                                       static_cast<std::size_t>(config_.pairs_per_kind), seed);
    if (pairs.pairing_error) metrics.pairing_error = pairs.pairing_error;
    auto loss = ccsa_loss(model_, source_, target, pairs, x, labels);
    encoder_optimizer_.step(model_.encoder, loss.encoder_gradient);
    head_optimizer_.step(model_.head, loss.head_gradient);
    metrics.final_loss = loss.terms;
    metrics.epochs = epoch + 1;
  }
  ++trained_batches_;
  cursor_ += batch.size();
  return metrics;
}

Prediction AdaptationSession::classify(std::span<const Sample> batch) const {
  Prediction p;
  p.model_hash = model_.hash();
  if (batch.empty()) return p;
  p.scores = model_.score(stack_rows(batch));
  for (Index i = 0; i < p.scores.size(); ++i) p.labels.push_back(p.scores(i) > model_.threshold ? 1 : 0);
  return p;
}

Prediction AdaptationSession::predict_batch(std::span<const Sample> batch) {
  Prediction p = classify(batch);
  if (batch.empty()) return p;
  const Matrix x = model_.scaler.transform(stack_rows(batch));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const bool known = std::any_of(target_.begin(), target_.end(),
                                   [&](const TargetEntry& e) { return e.index == batch[i].index; });
    if (!known) upsert_target(batch[i], x.row(static_cast<Index>(i)).transpose(), p.labels[i], LabelOrigin::pseudo);
  }
  return p;
}

void AdaptationSession::restart(std::size_t changepoint_index) {
  target_.clear();
  model_ = source_model_;
  encoder_optimizer_.reset();
  head_optimizer_.reset();
  cursor_ = changepoint_index;
  trained_batches_ = 0;
  frozen_ = false;
}

void AdaptationSession::freeze() {
  model_ = source_model_;
  frozen_ = true;
}

SessionSnapshot AdaptationSession::snapshot() const {
  SessionSnapshot s;
  s.cursor = cursor_;
  s.target_size = target_.size();
  s.pseudo_labeled = static_cast<std::size_t>(std::count_if(
      target_.begin(), target_.end(), [](const TargetEntry& e) { return e.origin == LabelOrigin::pseudo; }));
  s.trained_batches = trained_batches_;
  s.frozen = frozen_;
  s.model_hash = model_.hash();
  s.source_hash = source_model_.hash();
  return s;
}

}  // namespace shiftwatch

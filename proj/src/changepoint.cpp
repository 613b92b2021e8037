#include "shiftwatch/changepoint.hpp"

#include <cmath>
#include <numeric>

namespace shiftwatch {

void PageHinkleyConfig::validate() const {
  if (!(delta >= 0.0) || !std::isfinite(delta)) throw ConfigError("PH delta must be >= 0");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("PH lambda must be > 0");
}

PageHinkley::PageHinkley(PageHinkleyConfig config) : config_(config) { config_.validate(); }

PageHinkley::Update PageHinkley::update(double value) {
  if (!std::isfinite(value)) throw InputError("Page-Hinkley input must be finite");
  ++count_;
  mean_ += (value - mean_) / static_cast<double>(count_);
  const double deviation =
      config_.direction == PhDirection::increase ? value - mean_ : mean_ - value;
  cumulative_ += deviation - config_.delta;
  minimum_ = std::min(minimum_, cumulative_);
  const double stat = cumulative_ - minimum_;
  return {stat > config_.lambda && count_ >= config_.min_instances, stat};
}

void PageHinkley::reset() {
  mean_ = 0.0;
  cumulative_ = 0.0;
  minimum_ = 0.0;
  count_ = 0;
}

void PageHinkley::warm_start(std::span<const double> values) {
  reset();
  if (values.empty()) return;
  for (double v : values)
    if (!std::isfinite(v)) throw InputError("Page-Hinkley warm-start value must be finite");
  mean_ = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  count_ = values.size();
}

void PageHinkley::set_config(const PageHinkleyConfig& config) {
  config.validate();
  config_ = config;
}

TwoSidedPageHinkley::TwoSidedPageHinkley(PageHinkleyConfig config) : up_(config), down_(config) {
  set_config(config);
}

TwoSidedPageHinkley::Update TwoSidedPageHinkley::update(double value) {
  const auto up = up_.update(value);
  const auto down = down_.update(value);
  return {up.alarm || down.alarm, up.alarm, down.alarm, up.statistic, down.statistic};
}

void TwoSidedPageHinkley::reset() {
  up_.reset();
  down_.reset();
}

void TwoSidedPageHinkley::warm_start(std::span<const double> values) {
  up_.warm_start(values);
  down_.warm_start(values);
}

void TwoSidedPageHinkley::set_config(const PageHinkleyConfig& config) {
  auto up = config;
  up.direction = PhDirection::increase;
  auto down = config;
  down.direction = PhDirection::decrease;
  up_.set_config(up);
  down_.set_config(down);
}

PageHinkleyConfig calibrate_page_hinkley(std::span<const double> warmup,
                                         const PageHinkleyConfig& base,
                                         const PhCalibration& calibration) {
  base.validate();
  if (warmup.size() < 2) return base;
  const double n = static_cast<double>(warmup.size());
  const double mean = std::accumulate(warmup.begin(), warmup.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : warmup) ss += (v - mean) * (v - mean);
  const double sigma = std::sqrt(ss / (n - 1.0));

  PageHinkleyConfig out = base;
  out.delta = std::max(base.delta, calibration.delta_sigmas * sigma);

  PageHinkley scratch(PageHinkleyConfig{out.delta, base.lambda, 0, base.direction});
  std::vector<double> increments;
  increments.reserve(warmup.size());
  double previous = 0.0;
  for (double v : warmup) {
    scratch.update(v);
    increments.push_back(scratch.cumulative() - previous);
    previous = scratch.cumulative();
  }
  const double inc_mean =
      std::accumulate(increments.begin(), increments.end(), 0.0) / static_cast<double>(increments.size());
  double inc_ss = 0.0;
  for (double v : increments) inc_ss += (v - inc_mean) * (v - inc_mean);
  const double inc_sd = std::sqrt(inc_ss / static_cast<double>(increments.size() - 1));
  const double lambda = inc_mean + calibration.lambda_sigmas * inc_sd;
  // A flat warm-up carries no scale information; keep the configured threshold.
  if (lambda > 0.0 && inc_sd > 0.0) out.lambda = lambda;
  return out;
}

void MonitorConfig::validate() const {
  kl.validate();
  ph.validate();
  const auto min_ref = static_cast<std::size_t>(min_reference_size(kl));
  if (min_ref_size < min_ref) throw ConfigError("min_ref_size too small for the estimator");
  if (post_change_min_ref < min_ref)
    throw ConfigError("post_change_min_ref too small for the estimator");
  if (approx_window < 1) throw ConfigError("approx window must be >= 1");
  if (smoothing < 0.0 || smoothing >= 1.0) throw ConfigError("smoothing must be in [0, 1)");
}

namespace {
std::vector<std::string> resolve_features(const FeatureSchema& schema,
                                          const std::vector<std::string>& features) {
  return features.empty() ? schema.names() : features;
}
}  // namespace

ChangepointMonitor::ChangepointMonitor(const FeatureSchema& schema, MonitorConfig config)
    : schema_(schema),
      config_(std::move(config)),
      projection_(schema_, resolve_features(schema_, config_.features)),
      window_(static_cast<Index>(projection_.dimension()), config_.kl.k_nn),
      detector_(config_.ph),
      warmup_target_(config_.min_ref_size) {
  config_.validate();
  if (config_.features.empty()) config_.features = schema_.names();
}

std::size_t ChangepointMonitor::reference_size() const {
  return active_ ? window_.size() + pending_.size() : warmup_.size();
}

void ChangepointMonitor::finish_warmup() {
  if (config_.standardize && !scaler_.fitted()) {
    Matrix rows(static_cast<Index>(warmup_.size()), static_cast<Index>(projection_.dimension()));
    for (std::size_t i = 0; i < warmup_.size(); ++i) rows.row(static_cast<Index>(i)) = warmup_[i].transpose();
    scaler_ = Standardizer::fit(rows);
  }
  std::vector<Vector> points;
  points.reserve(warmup_.size());
  for (const auto& x : warmup_) points.push_back(scaler_.fitted() ? scaler_.transform(x) : x);

  const std::size_t total = points.size();
  const std::size_t w = config_.approx_window;
  const std::size_t calib = config_.calibration_window ? std::min(config_.calibration_window, total)
                                                       : total / 2;
  const auto min_ref = static_cast<std::size_t>(min_reference_size(config_.kl));
  window_.clear();
  pending_.clear();
  std::vector<double> scores;
  double smooth = 0.0;
  for (std::size_t j = 0; j < total; ++j) {
    if (j + calib >= total && j + 1 >= w && window_.size() >= min_ref) {
      Matrix approx(static_cast<Index>(w), static_cast<Index>(projection_.dimension()));
      for (std::size_t r = 0; r < w; ++r) approx.row(static_cast<Index>(r)) = points[j + 1 - w + r].transpose();
      double s = drift_score(window_.estimate(approx, config_.kl));
      if (config_.smoothing > 0.0) {
        smooth = scores.empty() ? s : config_.smoothing * smooth + (1.0 - config_.smoothing) * s;
        s = smooth;
      }
      scores.push_back(s);
    }
    if (j + 1 >= w) window_.add(points[j + 1 - w]);
  }
  for (std::size_t j = total + 1 - w; j < total; ++j) pending_.push_back(points[j]);

  if (config_.calibrate && scores.size() >= 2) {
    // Overlapping windows make consecutive scores dependent; their cumulative sums spread
    // like independent terms with sqrt(w) times the marginal deviation.
    PhCalibration calibration = config_.calibration;
    calibration.delta_sigmas *= std::sqrt(static_cast<double>(w));
    calibration.lambda_sigmas *= std::sqrt(static_cast<double>(w));
    detector_.set_config(calibrate_page_hinkley(scores, config_.ph, calibration));
  }
  detector_.warm_start(scores);
  smoothed_init_ = !scores.empty();
  smoothed_ = smooth;
  warmup_.clear();
  active_ = true;
}

MonitorStep ChangepointMonitor::step(const Sample& sample) {
  validate_sample(schema_, sample);
  if (last_index_ && sample.index <= *last_index_)
    throw InputError("monitor samples must arrive in increasing index order");
  last_index_ = sample.index;
  ++steps_;
  Vector x = projection_.apply(sample.values);

  if (!active_) {
    warmup_.push_back(std::move(x));
    if (warmup_.size() >= warmup_target_) finish_warmup();
    return {};
  }

  Vector xs = scaler_.fitted() ? scaler_.transform(x) : x;
  const std::size_t w = config_.approx_window;
  Matrix approx(static_cast<Index>(w), xs.size());
  for (std::size_t r = 0; r < pending_.size(); ++r) approx.row(static_cast<Index>(r)) = pending_[r].transpose();
  approx.row(static_cast<Index>(w - 1)) = xs.transpose();

  MonitorStep out;
  out.active = true;
  out.kl = window_.estimate(approx, config_.kl);
  double input = drift_score(out.kl);
  if (config_.smoothing > 0.0) {
    smoothed_ = smoothed_init_ ? config_.smoothing * smoothed_ + (1.0 - config_.smoothing) * input : input;
    smoothed_init_ = true;
    input = smoothed_;
  }
  const auto update = detector_.update(input);
  out.statistic = update.statistic;

  if (update.alarm) {
    out.changepoint = sample.index;
    changepoints_.push_back(sample.index);
    detector_.reset();
    window_.clear();
    pending_.clear();
    warmup_.clear();
    warmup_.push_back(std::move(x));
    warmup_target_ = config_.post_change_min_ref;
    active_ = false;
    smoothed_init_ = false;
    return out;
  }
  pending_.push_back(std::move(xs));
  if (pending_.size() >= w) {
    window_.add(pending_.front());
    pending_.pop_front();
  }
  return out;
}

MonitorSnapshot ChangepointMonitor::snapshot() const {
  return {reference_size(), active_, steps_, detector_.config(), detector_.statistic(), changepoints_};
}

}  // namespace shiftwatch

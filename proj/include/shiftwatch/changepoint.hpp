#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shiftwatch/divergence.hpp"
#include "shiftwatch/stream.hpp"

namespace shiftwatch {

enum class PhDirection { increase, decrease };

struct PageHinkleyConfig {
  double delta = 0.005;  // magnitude tolerance
  double lambda = 50.0;  // alarm threshold
  std::size_t min_instances = 30;
  PhDirection direction = PhDirection::increase;

  void validate() const;
  bool operator==(const PageHinkleyConfig&) const = default;
};

// One-sided Page-Hinkley test:
//   mean_t = running mean of the inputs
//   m_t    = m_{t-1} + (x_t - mean_t - delta)      (mirrored for `decrease`)
//   M_t    = min(M_{t-1}, m_t),  M_0 = m_0 = 0
//   alarm iff m_t - M_t > lambda and t >= min_instances
class PageHinkley {
 public:
  struct Update {
    bool alarm = false;
    double statistic = 0.0;
  };

  explicit PageHinkley(PageHinkleyConfig config = {});

  Update update(double value);
  // Back to the initial state; the configuration is kept.
  void reset();
  // Seeds the running mean and count from values known to be drift-free without
  // accumulating the cumulative statistic.
  void warm_start(std::span<const double> values);

  const PageHinkleyConfig& config() const { return config_; }
  void set_config(const PageHinkleyConfig& config);
  double mean() const { return mean_; }
  double cumulative() const { return cumulative_; }
  double minimum() const { return minimum_; }
  double statistic() const { return cumulative_ - minimum_; }
  std::size_t count() const { return count_; }

  bool operator==(const PageHinkley&) const = default;

 private:
  PageHinkleyConfig config_;
  double mean_ = 0.0;
  double cumulative_ = 0.0;
  double minimum_ = 0.0;
  std::size_t count_ = 0;
};

// Two mirrored one-sided detectors sharing delta/lambda.
class TwoSidedPageHinkley {
 public:
  struct Update {
    bool alarm = false;
    bool increase = false;
    bool decrease = false;
    double increase_statistic = 0.0;
    double decrease_statistic = 0.0;
  };

  explicit TwoSidedPageHinkley(PageHinkleyConfig config = {});
  Update update(double value);
  void reset();
  void warm_start(std::span<const double> values);
  void set_config(const PageHinkleyConfig& config);
  const PageHinkleyConfig& config() const { return up_.config(); }
  const PageHinkley& increase_arm() const { return up_; }
  const PageHinkley& decrease_arm() const { return down_; }

 private:
  PageHinkley up_;
  PageHinkley down_;
};

// Scale-free threshold selection from a drift-free warm-up series of sigma sd:
//   delta  = max(base.delta, delta_sigmas * sigma)
//   lambda = mean + lambda_sigmas * sd of the cumulative-statistic increments
//            (x_t - mean_t - delta) observed while replaying the warm-up.
struct PhCalibration {
  double delta_sigmas = 1.0;
  double lambda_sigmas = 10.0;
};

PageHinkleyConfig calibrate_page_hinkley(std::span<const double> warmup,
                                         const PageHinkleyConfig& base,
                                         const PhCalibration& calibration = {});

struct MonitorConfig {
  std::vector<std::string> features;  // empty = every schema feature
  KlEstimatorConfig kl{1, KlForm::wang_standard};
  PageHinkleyConfig ph;
  bool calibrate = true;
  PhCalibration calibration;
  std::size_t min_ref_size = 200;         // reference size before the first detection
  std::size_t post_change_min_ref = 100;  // reference size before detection after an alarm
  std::size_t calibration_window = 0;     // scores used for calibration; 0 = half the warm-up
  std::size_t approx_window = 1;          // |X_approx|
  bool standardize = true;                // z-score with warm-up statistics (frozen)
  double smoothing = 0.0;                 // exponential smoothing of the PH input, 0 = off

  void validate() const;
};

struct MonitorStep {
  double kl = 0.0;         // raw estimate, 0 while the reference warms up
  double statistic = 0.0;  // Page-Hinkley statistic after this step
  bool active = false;     // false during warm-up
  std::optional<std::size_t> changepoint;
};

struct MonitorSnapshot {
  std::size_t reference_size = 0;
  bool active = false;
  std::size_t steps = 0;
  PageHinkleyConfig ph;
  double statistic = 0.0;
  std::vector<std::size_t> changepoints;
};

// Streaming changepoint protocol: every incoming sample is scored against the reference
// set with the k-NN KL estimate; the score drives a Page-Hinkley detector. Without an
// alarm the sample joins the reference, with an alarm the reference restarts from it.
class ChangepointMonitor {
 public:
  ChangepointMonitor(const FeatureSchema& schema, MonitorConfig config);

  MonitorStep step(const Sample& sample);

  const std::vector<std::size_t>& changepoints() const { return changepoints_; }
  std::size_t reference_size() const;
  bool active() const { return active_; }
  const PageHinkley& detector() const { return detector_; }
  const MonitorConfig& config() const { return config_; }
  MonitorSnapshot snapshot() const;

 private:
  void finish_warmup();
  double drift_score(double kl) const { return drift_orientation(config_.kl.form) * kl; }

  FeatureSchema schema_;
  MonitorConfig config_;
  Projection projection_;
  Standardizer scaler_;
  ReferenceWindow window_;
  PageHinkley detector_;
  std::vector<Vector> warmup_;   // projected raw samples awaiting the reference build
  std::deque<Vector> pending_;   // approx window members not yet in the reference
  std::size_t warmup_target_;
  bool active_ = false;
  bool smoothed_init_ = false;
  double smoothed_ = 0.0;
  std::size_t steps_ = 0;
  std::optional<std::size_t> last_index_;
  std::vector<std::size_t> changepoints_;
};

}  // namespace shiftwatch

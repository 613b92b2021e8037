#pragma once

// Boxplot statistics of Shapley values per training batch, per-feature median series with
// a two-sided Page-Hinkley detector, and per-segment median profiles.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shiftwatch/changepoint.hpp"
#include "shiftwatch/shapley.hpp"

namespace shiftwatch {

// Quantile with linear interpolation between order statistics at position n*p + 1/2
// (1-based), clamped to the extremes. `sorted` must be ascending and non-empty.
double quantile_sorted(std::span<const double> sorted, double p);
double median_of(std::vector<double> values);

struct FiveNumber {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;

  double iqr() const { return q3 - q1; }
  bool operator==(const FiveNumber&) const = default;
};

FiveNumber five_number(std::vector<double> values);

struct ShapleyBatchStats {
  std::size_t batch = 0;
  std::vector<std::string> features;
  std::vector<FiveNumber> summary;  // parallel to features
  std::vector<bool> alarm;          // median-drift alarm per feature

  std::size_t index_of(const std::string& feature) const;
  const FiveNumber& at(const std::string& feature) const { return summary[index_of(feature)]; }
  bool operator==(const ShapleyBatchStats&) const = default;
};

ShapleyBatchStats summarize_batch(std::span<const Attribution> attributions, std::size_t batch,
                                  const std::vector<std::string>& features);
// Rows of `phi` are instances.
ShapleyBatchStats summarize_batch(const Matrix& phi, std::size_t batch,
                                  const std::vector<std::string>& features);

struct MedianPoint {
  std::size_t batch = 0;
  double median = 0.0;
  bool alarm = false;
  bool operator==(const MedianPoint&) const = default;
};

struct MedianAlarm {
  std::size_t batch = 0;
  PhDirection arm = PhDirection::increase;
};

// Median series of one feature. With calibration_batches > 0 the first medians only
// calibrate delta and lambda; detection starts once calibration is done.
class MedianSeries {
 public:
  MedianSeries(std::string feature, PageHinkleyConfig ph = {}, std::size_t calibration_batches = 0,
               PhCalibration calibration = {});

  std::optional<MedianAlarm> update(std::size_t batch, double median);
  // Calibrates from the medians collected so far (when not yet calibrated).
  void finish_calibration();

  const std::string& feature() const { return feature_; }
  const std::vector<MedianPoint>& points() const { return points_; }
  bool calibrated() const { return calibrated_; }
  const TwoSidedPageHinkley& detector() const { return detector_; }

 private:
  std::string feature_;
  PageHinkleyConfig base_;
  std::size_t calibration_batches_;
  PhCalibration calibration_;
  TwoSidedPageHinkley detector_;
  bool calibrated_;
  std::vector<double> pending_;
  std::vector<MedianPoint> points_;
};

std::optional<MedianAlarm> median_drift(MedianSeries& series, const ShapleyBatchStats& stats);

// One median vector per group; each group holds attributions as rows.
std::vector<Vector> segment_median_profile(std::span<const Matrix> groups);

void write_stats_csv(std::ostream& out, std::span<const ShapleyBatchStats> stats);
void write_iqr_csv(std::ostream& out, std::span<const ShapleyBatchStats> stats);

}  // namespace shiftwatch

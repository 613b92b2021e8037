#include "shiftwatch/shap_monitor.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace shiftwatch {

double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw SizeError("quantile of an empty set");
  const double n = static_cast<double>(sorted.size());
  const double h = std::clamp(n * p + 0.5, 1.0, n);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const double frac = h - static_cast<double>(lo);
  if (lo >= sorted.size()) return sorted.back();
  return sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1]);
}

double median_of(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  return quantile_sorted(values, 0.5);
}

FiveNumber five_number(std::vector<double> values) {
  if (values.empty()) throw SizeError("five-number summary of an empty set");
  std::sort(values.begin(), values.end());
  return {values.front(), quantile_sorted(values, 0.25), quantile_sorted(values, 0.5),
          quantile_sorted(values, 0.75), values.back()};
}

std::size_t ShapleyBatchStats::index_of(const std::string& feature) const {
  const auto it = std::find(features.begin(), features.end(), feature);
  if (it == features.end()) throw NotFoundError("feature '" + feature + "' not in batch stats");
  return static_cast<std::size_t>(it - features.begin());
}

ShapleyBatchStats summarize_batch(const Matrix& phi, std::size_t batch,
                                  const std::vector<std::string>& features) {
  if (phi.rows() == 0) throw SizeError("no attributions to summarize");
  if (phi.cols() != static_cast<Index>(features.size()))
    throw SchemaError("attribution width differs from the feature list");
  ShapleyBatchStats stats;
  stats.batch = batch;
  stats.features = features;
  stats.alarm.assign(features.size(), false);
  for (Index j = 0; j < phi.cols(); ++j) {
    std::vector<double> column(phi.col(j).data(), phi.col(j).data() + phi.rows());
    stats.summary.push_back(five_number(std::move(column)));
  }
  return stats;
}

ShapleyBatchStats summarize_batch(std::span<const Attribution> attributions, std::size_t batch,
                                  const std::vector<std::string>& features) {
  if (attributions.empty()) throw SizeError("no attributions to summarize");
  Matrix phi(static_cast<Index>(attributions.size()), static_cast<Index>(features.size()));
  for (std::size_t i = 0; i < attributions.size(); ++i) {
    if (attributions[i].phi.size() != phi.cols())
      throw SchemaError("attribution width differs from the feature list");
    phi.row(static_cast<Index>(i)) = attributions[i].phi.transpose();
  }
  return summarize_batch(phi, batch, features);
}

MedianSeries::MedianSeries(std::string feature, PageHinkleyConfig ph, std::size_t calibration_batches,
                           PhCalibration calibration)
    : feature_(std::move(feature)),
      base_(ph),
      calibration_batches_(calibration_batches),
      calibration_(calibration),
      detector_(ph),
      calibrated_(calibration_batches == 0) {}

void MedianSeries::finish_calibration() {
  if (calibrated_) return;
  calibrated_ = true;
  detector_.set_config(calibrate_page_hinkley(pending_, base_, calibration_));
  detector_.warm_start(pending_);
  pending_.clear();
}

std::optional<MedianAlarm> MedianSeries::update(std::size_t batch, double median) {
  if (!points_.empty() && batch <= points_.back().batch)
    throw InputError("median series batch indices must increase");
  points_.push_back({batch, median, false});
  if (!calibrated_) {
    pending_.push_back(median);
    if (pending_.size() >= calibration_batches_) finish_calibration();
    return std::nullopt;
  }
  const auto u = detector_.update(median);
  if (!u.alarm) return std::nullopt;
  points_.back().alarm = true;
  detector_.reset();
  return MedianAlarm{batch, u.decrease && !u.increase ? PhDirection::decrease : PhDirection::increase};
}

std::optional<MedianAlarm> median_drift(MedianSeries& series, const ShapleyBatchStats& stats) {
  return series.update(stats.batch, stats.at(series.feature()).median);
}

std::vector<Vector> segment_median_profile(std::span<const Matrix> groups) {
  std::vector<Vector> out;
  out.reserve(groups.size());
  for (const Matrix& g : groups) {
    if (g.rows() == 0) throw SizeError("empty segment group");
    Vector med(g.cols());
    for (Index j = 0; j < g.cols(); ++j)
      med(j) = median_of(std::vector<double>(g.col(j).data(), g.col(j).data() + g.rows()));
    out.push_back(std::move(med));
  }
  return out;
}

void write_stats_csv(std::ostream& out, std::span<const ShapleyBatchStats> stats) {
  out << "batch,feature,min,q1,median,q3,max,alarm\n";
  for (const auto& s : stats)
    for (std::size_t j = 0; j < s.features.size(); ++j) {
      const auto& f = s.summary[j];
      out << s.batch << ',' << s.features[j] << ',' << format_double(f.min) << ',' << format_double(f.q1)
          << ',' << format_double(f.median) << ',' << format_double(f.q3) << ',' << format_double(f.max)
          << ',' << (j < s.alarm.size() && s.alarm[j] ? 1 : 0) << '\n';
    }
}

void write_iqr_csv(std::ostream& out, std::span<const ShapleyBatchStats> stats) {
  out << "batch,feature,iqr\n";
  for (const auto& s : stats)
    for (std::size_t j = 0; j < s.features.size(); ++j)
      out << s.batch << ',' << s.features[j] << ',' << format_double(s.summary[j].iqr()) << '\n';
}

}  // namespace shiftwatch

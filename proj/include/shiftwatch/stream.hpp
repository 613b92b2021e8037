#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "shiftwatch/error.hpp"

namespace shiftwatch {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

// Ordered set of named sensor channels. Immutable once built.
class FeatureSchema {
 public:
  FeatureSchema() = default;
  explicit FeatureSchema(std::vector<std::string> names,
                         std::vector<std::string> units = {});

  std::size_t dimension() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  // Empty string where no unit is known.
  const std::string& unit(std::size_t i) const { return units_.at(i); }
  bool contains(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;
  std::vector<Index> indices_of(std::span<const std::string> subset) const;
  FeatureSchema subset(std::span<const std::string> names) const;

  bool operator==(const FeatureSchema& other) const { return names_ == other.names_; }

 private:
  std::vector<std::string> names_;
  std::vector<std::string> units_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

// One time step of the sensor vector. `index` is the 0-based stream position.
struct Sample {
  std::size_t index = 0;
  Vector values;
};

struct LabeledSample {
  Sample sample;
  int label = 0;  // 0 = normal, 1 = anomaly
};

// A fully materialized stream. `labeled` is false when the source had no label column;
// labels are then all zero and must not be used for evaluation.
struct LabeledStream {
  FeatureSchema schema;
  std::vector<LabeledSample> samples;
  bool labeled = true;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

enum class SegmentKind { source_product, target_product, failure };

const char* to_string(SegmentKind kind);
SegmentKind segment_kind_from_string(const std::string& text);

struct ProductParams {
  double ithick = 0.0;
  double othick = 0.0;
  double width = 0.0;
};

// Half-open [start, end) range of the stream produced by one product or failure.
struct SegmentDescriptor {
  std::size_t start = 0;
  std::size_t end = 0;
  SegmentKind kind = SegmentKind::target_product;
  ProductParams product;

  std::size_t length() const { return end - start; }
  bool contains(std::size_t index) const { return index >= start && index < end; }
};

// Throws InputError when a segment is empty or segments overlap / are unordered.
void validate_segments(std::span<const SegmentDescriptor> segments);

// Index of the segment containing `index`, if any.
std::optional<std::size_t> segment_of(std::span<const SegmentDescriptor> segments,
                                      std::size_t index);

// Throws InputError when a value is non-finite or the length disagrees with the schema.
void validate_sample(const FeatureSchema& schema, const Sample& sample);

// Precomputed coordinate selection for a feature subset.
class Projection {
 public:
  Projection() = default;
  Projection(const FeatureSchema& schema, std::span<const std::string> subset);

  Vector apply(const Vector& values) const;
  Sample apply(const Sample& sample) const { return {sample.index, apply(sample.values)}; }
  std::size_t dimension() const { return columns_.size(); }
  const std::vector<Index>& columns() const { return columns_; }

 private:
  std::vector<Index> columns_;
  std::size_t source_dimension_ = 0;
};

// Restricts `sample` to the named features, in the order given by `subset`.
Sample project(const FeatureSchema& schema, const Sample& sample,
               std::span<const std::string> subset);

// Stacks sample values as matrix rows.
Matrix stack_rows(std::span<const Sample> samples);
Matrix stack_rows(std::span<const LabeledSample> samples);

// Column-wise z-score. Columns with zero spread are scaled by |mean| (or 1 when the mean
// is zero too) so that constant descriptors such as coil width stay on a unit scale.
class Standardizer {
 public:
  Standardizer() = default;
  static Standardizer fit(const Matrix& rows);

  Matrix transform(const Matrix& rows) const;
  Vector transform(const Vector& values) const;
  const Vector& mean() const { return mean_; }
  const Vector& scale() const { return scale_; }
  bool fitted() const { return mean_.size() > 0; }

 private:
  Vector mean_;
  Vector scale_;
};

// Maps column names found in a file to schema names (e.g. "current2" -> "current_2").
using NameMapping = std::map<std::string, std::string>;

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

// Header: feature names plus a trailing `label` column when `stream.labeled`.
void write_csv(std::ostream& out, const LabeledStream& stream);
// Parses the CSV row format. Throws InputError("... line N ...") on malformed rows and
// SizeError on an empty input.
LabeledStream read_csv(std::istream& in, const NameMapping& mapping = {});

}  // namespace shiftwatch

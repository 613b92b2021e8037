#include "shiftwatch/stream.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

namespace shiftwatch {

FeatureSchema::FeatureSchema(std::vector<std::string> names, std::vector<std::string> units)
    : names_(std::move(names)), units_(std::move(units)) {
  if (names_.empty()) throw SchemaError("schema needs at least one feature");
  if (units_.empty()) units_.assign(names_.size(), "");
  if (units_.size() != names_.size()) throw SchemaError("unit list length differs from names");
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i].empty()) throw SchemaError("empty feature name");
    if (!lookup_.emplace(names_[i], i).second)
      throw SchemaError("duplicate feature name '" + names_[i] + "'");
  }
}

bool FeatureSchema::contains(const std::string& name) const { return lookup_.count(name) > 0; }

std::size_t FeatureSchema::index_of(const std::string& name) const {
  auto it = lookup_.find(name);
  if (it == lookup_.end()) throw SchemaError("unknown feature '" + name + "'");
  return it->second;
}

std::vector<Index> FeatureSchema::indices_of(std::span<const std::string> subset) const {
  std::vector<Index> out;
  out.reserve(subset.size());
  for (const auto& name : subset) out.push_back(static_cast<Index>(index_of(name)));
  return out;
}

FeatureSchema FeatureSchema::subset(std::span<const std::string> names) const {
  std::vector<std::string> units;
  for (const auto& name : names) units.push_back(units_[index_of(name)]);
  return FeatureSchema({names.begin(), names.end()}, std::move(units));
}

const char* to_string(SegmentKind kind) {
  switch (kind) {
    case SegmentKind::source_product: return "source-product";
    case SegmentKind::target_product: return "target-product";
    case SegmentKind::failure: return "failure";
  }
  return "unknown";
}

SegmentKind segment_kind_from_string(const std::string& text) {
  if (text == "source-product") return SegmentKind::source_product;
  if (text == "target-product") return SegmentKind::target_product;
  if (text == "failure") return SegmentKind::failure;
  throw InputError("unknown segment kind '" + text + "'");
}

void validate_segments(std::span<const SegmentDescriptor> segments) {
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (segments[i].start >= segments[i].end)
      throw InputError("segment " + std::to_string(i) + " is empty");
    if (i > 0 && segments[i].start < segments[i - 1].end)
      throw InputError("segment " + std::to_string(i) + " overlaps its predecessor");
  }
}

std::optional<std::size_t> segment_of(std::span<const SegmentDescriptor> segments,
                                      std::size_t index) {
  for (std::size_t i = 0; i < segments.size(); ++i)
    if (segments[i].contains(index)) return i;
  return std::nullopt;
}

void validate_sample(const FeatureSchema& schema, const Sample& sample) {
  if (static_cast<std::size_t>(sample.values.size()) != schema.dimension())
    throw SchemaError("sample " + std::to_string(sample.index) + " has " +
                      std::to_string(sample.values.size()) + " values, schema has " +
                      std::to_string(schema.dimension()));
  if (!sample.values.allFinite())
    throw InputError("sample " + std::to_string(sample.index) + " has a non-finite value");
}

Projection::Projection(const FeatureSchema& schema, std::span<const std::string> subset)
    : columns_(schema.indices_of(subset)), source_dimension_(schema.dimension()) {
  if (columns_.empty()) throw SchemaError("empty feature subset");
}

Vector Projection::apply(const Vector& values) const {
  if (static_cast<std::size_t>(values.size()) != source_dimension_)
    throw SchemaError("projection input has wrong dimension");
  return values(columns_);
}

Sample project(const FeatureSchema& schema, const Sample& sample,
               std::span<const std::string> subset) {
  return Projection(schema, subset).apply(sample);
}

namespace {
template <typename Range, typename Get>
Matrix stack(const Range& items, Get get) {
  if (items.empty()) return Matrix();
  const Index cols = get(items.front()).size();
  Matrix out(static_cast<Index>(items.size()), cols);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Vector& v = get(items[i]);
    if (v.size() != cols) throw SchemaError("ragged sample set");
    out.row(static_cast<Index>(i)) = v.transpose();
  }
  return out;
}
}  // namespace

Matrix stack_rows(std::span<const Sample> samples) {
  return stack(samples, [](const Sample& s) -> const Vector& { return s.values; });
}

Matrix stack_rows(std::span<const LabeledSample> samples) {
  return stack(samples, [](const LabeledSample& s) -> const Vector& { return s.sample.values; });
}

Standardizer Standardizer::fit(const Matrix& rows) {
  if (rows.rows() == 0) throw SizeError("cannot standardize an empty set");
  Standardizer s;
  s.mean_ = rows.colwise().mean().transpose();
  s.scale_.resize(rows.cols());
  for (Index j = 0; j < rows.cols(); ++j) {
    const double var = (rows.col(j).array() - s.mean_(j)).square().mean();
    const double sd = std::sqrt(var);
    if (sd > 1e-12 * std::max(1.0, std::abs(s.mean_(j))))
      s.scale_(j) = sd;
    else
      s.scale_(j) = std::abs(s.mean_(j)) > 0.0 ? std::abs(s.mean_(j)) : 1.0;
  }
  return s;
}

Matrix Standardizer::transform(const Matrix& rows) const {
  if (rows.cols() != mean_.size()) throw SchemaError("standardizer dimension mismatch");
  return (rows.rowwise() - mean_.transpose()).array().rowwise() / scale_.transpose().array();
}

Vector Standardizer::transform(const Vector& values) const {
  if (values.size() != mean_.size()) throw SchemaError("standardizer dimension mismatch");
  return (values - mean_).cwiseQuotient(scale_);
}

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw InputError("cannot format value");
  return std::string(buf, end);
}

void write_csv(std::ostream& out, const LabeledStream& stream) {
  const auto& names = stream.schema.names();
  for (std::size_t j = 0; j < names.size(); ++j) out << (j ? "," : "") << names[j];
  if (stream.labeled) out << ",label";
  out << '\n';
  for (const auto& row : stream.samples) {
    for (Index j = 0; j < row.sample.values.size(); ++j)
      out << (j ? "," : "") << format_double(row.sample.values(j));
    if (stream.labeled) out << ',' << row.label;
    out << '\n';
  }
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    // Tolerate surrounding whitespace and a CRLF line ending.
    auto first = field.find_first_not_of(" \t\r");
    auto last = field.find_last_not_of(" \t\r");
    fields.push_back(first == std::string::npos ? std::string() : field.substr(first, last - first + 1));
  }
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_number(const std::string& text, std::size_t line_no, const std::string& column) {
  double value = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  if (!text.empty() && *begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (text.empty() || ec != std::errc() || ptr != end)
    throw InputError("line " + std::to_string(line_no) + ": cannot parse '" + text +
                     "' in column '" + column + "'");
  if (!std::isfinite(value))
    throw InputError("line " + std::to_string(line_no) + ": non-finite value in column '" +
                     column + "'");
  return value;
}

}  // namespace

LabeledStream read_csv(std::istream& in, const NameMapping& mapping) {
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") != std::string::npos) {
      have_header = true;
      break;
    }
  }
  if (!have_header) throw SizeError("empty stream: no header line");

  auto header = split_fields(line);
  bool labeled = false;
  if (!header.empty() && header.back() == "label") {
    labeled = true;
    header.pop_back();
  }
  std::vector<std::string> names;
  for (auto& raw : header) {
    auto it = mapping.find(raw);
    names.push_back(it == mapping.end() ? raw : it->second);
  }
  LabeledStream stream;
  stream.schema = FeatureSchema(names);
  stream.labeled = labeled;
  const std::size_t expected = names.size() + (labeled ? 1 : 0);

  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fields = split_fields(line);
    if (fields.size() != expected)
      throw InputError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(expected) + " fields, got " +
                       std::to_string(fields.size()));
    LabeledSample row;
    row.sample.index = stream.samples.size();
    row.sample.values.resize(static_cast<Index>(names.size()));
    for (std::size_t j = 0; j < names.size(); ++j)
      row.sample.values(static_cast<Index>(j)) = parse_number(fields[j], line_no, names[j]);
    if (labeled) {
      const double y = parse_number(fields.back(), line_no, "label");
      if (y != 0.0 && y != 1.0)
        throw InputError("line " + std::to_string(line_no) + ": label must be 0 or 1");
      row.label = static_cast<int>(y);
    }
    stream.samples.push_back(std::move(row));
  }
  return stream;
}

}  // namespace shiftwatch

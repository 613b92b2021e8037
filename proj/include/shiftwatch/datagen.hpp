#pragma once

// Synthetic cold-rolling streams with product segments, bearing anomalies and a stand
// failure, plus loading of recorded streams from CSV.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "shiftwatch/stream.hpp"

namespace shiftwatch {

inline constexpr int kStands = 4;

// Coil descriptors, roll descriptors and seven signals on each of four stands, e.g.
// "current_2" for the motor current of stand 2.
FeatureSchema rolling_schema();
std::vector<std::string> stand_signals();    // reduction, tension, ... per stand
std::vector<std::string> global_signals();   // ithick, othick, ...
std::vector<std::string> current_torque_features();

struct FailureMode {
  int stand = 2;
  std::vector<std::string> signals{"current", "torque"};
  double shift_sigmas = 3.0;     // sustained offset in noise scales
  double noise_inflation = 1.5;  // noise multiplier on the affected signals
};

struct ProductSpec {
  std::string name;
  ProductParams params;
  SegmentKind kind = SegmentKind::target_product;
  std::size_t length = 0;
  double anomaly_rate = 0.0;
  Vector baseline;  // per schema feature
  Vector noise;     // per schema feature, standard deviation
  std::optional<FailureMode> failure;

  void validate(const FeatureSchema& schema) const;
};

struct StreamRecipe {
  std::vector<ProductSpec> products;
  std::size_t total_length = 0;
  std::uint64_t seed = 0;
  double pulse_min = 2.0;  // anomaly pulse height range in noise scales
  double pulse_max = 4.0;

  void validate() const;
};

// Physical operating point of a product: per-feature nominal values in schema order.
Vector nominal_signals(const ProductParams& params);

struct ProductOptions {
  double noise_fraction = 0.01;  // noise sd relative to the reference product's signal level
  double shift_scale = 0.1;      // fraction of the physical operating-point change applied
};

// Builds a spec whose baseline moves from `reference` towards the product's own operating
// point by shift_scale, with noise scaled from the reference levels. Coil and roll
// descriptors carry no noise.
ProductSpec make_product(std::string name, const ProductParams& params, const ProductParams& reference,
                         SegmentKind kind, std::size_t length, double anomaly_rate,
                         const ProductOptions& options = {});

// 8000 source samples followed by four 500-sample segments: product 2, failure on stand 2
// during product 2, product 3, product 4.
StreamRecipe paper_recipe(std::uint64_t seed, const ProductOptions& options = {});
// A single product without shifts.
StreamRecipe stationary_recipe(std::uint64_t seed, std::size_t length, const ProductOptions& options = {});

struct GeneratedStream {
  LabeledStream stream;
  std::vector<SegmentDescriptor> segments;
};

GeneratedStream generate_stream(const StreamRecipe& recipe);

// Segment layout of the published 10000-sample recording.
std::vector<SegmentDescriptor> paper_segments();

LabeledStream load_csv(const std::string& path, const NameMapping& mapping = {});
void write_stream_csv(const std::string& path, const LabeledStream& stream);

}  // namespace shiftwatch

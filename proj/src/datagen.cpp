#include "shiftwatch/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace shiftwatch {

namespace {

constexpr double kRollDiameter = 500.0;  // mm
constexpr double kRollMileage = 120000.0;
constexpr double kExitSpeed = 12.0;  // m/s after the last stand
constexpr double kDraftShare[kStands] = {0.35, 0.30, 0.22, 0.13};

std::string stand_name(const std::string& signal, int stand) { return signal + "_" + std::to_string(stand); }

}  // namespace

std::vector<std::string> global_signals() {
  return {"ithick", "othick", "width", "ys0", "ys1", "work_roll_diam", "work_roll_mileage"};
}

std::vector<std::string> stand_signals() {
  return {"reduction", "tension", "roll_speed", "force", "torque", "gap", "current"};
}

FeatureSchema rolling_schema() {
  std::vector<std::string> names = global_signals();
  std::vector<std::string> units{"mm", "mm", "mm", "MPa", "MPa", "mm", "mm"};
  const std::vector<std::string> stand_units{"%", "kN", "m/s", "kN", "Nm", "mm", "A"};
  const auto signals = stand_signals();
  for (int s = 1; s <= kStands; ++s)
    for (std::size_t k = 0; k < signals.size(); ++k) {
      names.push_back(stand_name(signals[k], s));
      units.push_back(stand_units[k]);
    }
  return FeatureSchema(names, units);
}

std::vector<std::string> current_torque_features() {
  std::vector<std::string> out;
  for (int s = 1; s <= kStands; ++s) {
    out.push_back(stand_name("current", s));
    out.push_back(stand_name("torque", s));
  }
  return out;
}

Vector nominal_signals(const ProductParams& p) {
  if (!(p.ithick > p.othick && p.othick > 0.0 && p.width > 0.0)) throw ConfigError("invalid product parameters");
  const FeatureSchema schema = rolling_schema();
  Vector v(static_cast<Index>(schema.dimension()));
  const double draft = p.ithick - p.othick;
  const double ys0 = 300.0 + 10.0 * (p.ithick - 3.0);
  const double ys1 = ys0 * (1.0 + 0.8 * draft / p.ithick);
  v.head(7) << p.ithick, p.othick, p.width, ys0, ys1, kRollDiameter, kRollMileage;

  const double radius = kRollDiameter / 2.0;
  double entry = p.ithick;
  Index j = 7;
  for (int s = 0; s < kStands; ++s) {
    const double dh = kDraftShare[s] * draft;
    const double exit = entry - dh;
    const double hardening = ys0 * (1.0 + 0.8 * (p.ithick - exit) / p.ithick);
    const double contact = std::sqrt(radius * dh);                    // mm
    const double force = 1.15 * hardening * p.width * contact / 1000.0;  // kN
    const double torque = 0.5 * force * contact;                       // kN*mm = Nm
    const double speed = kExitSpeed * p.othick / exit;                 // m/s
    const double power = torque * speed / (radius / 1000.0);          // W
    v(j++) = 100.0 * dh / entry;                                      // reduction
    v(j++) = 0.1 * hardening * p.width * exit / 1000.0;               // tension
    v(j++) = speed;
    v(j++) = force;
    v(j++) = torque;
    v(j++) = 0.9 * exit;                                              // gap
    v(j++) = power / 800.0;                                           // current
    entry = exit;
  }
  return v;
}

void ProductSpec::validate(const FeatureSchema& schema) const {
  if (length == 0) throw ConfigError("product '" + name + "' has a zero-length segment");
  if (!(anomaly_rate >= 0.0 && anomaly_rate <= 1.0)) throw ConfigError("anomaly rate must be in [0, 1]");
  const auto n = static_cast<Index>(schema.dimension());
  if (baseline.size() != n || noise.size() != n) throw SchemaError("product signal vectors must match the schema");
  if ((noise.array() < 0.0).any()) throw ConfigError("noise scales must be non-negative");
  if (failure && (failure->stand < 1 || failure->stand > kStands)) throw ConfigError("failure stand out of range");
}

void StreamRecipe::validate() const {
  if (products.empty()) throw ConfigError("recipe has no products");
  const FeatureSchema schema = rolling_schema();
  std::size_t sum = 0;
  for (const auto& p : products) {
    p.validate(schema);
    sum += p.length;
  }
  if (sum != total_length) throw ConfigError("segment lengths do not sum to the total length");
  if (!(pulse_min >= 0.0 && pulse_max >= pulse_min)) throw ConfigError("invalid pulse range");
}

ProductSpec make_product(std::string name, const ProductParams& params, const ProductParams& reference,
                         SegmentKind kind, std::size_t length, double anomaly_rate,
                         const ProductOptions& options) {
  const Vector ref = nominal_signals(reference);
  const Vector own = nominal_signals(params);
  ProductSpec spec;
  spec.name = std::move(name);
  spec.params = params;
  spec.kind = kind;
  spec.length = length;
  spec.anomaly_rate = anomaly_rate;
  spec.baseline = ref + options.shift_scale * (own - ref);
  spec.baseline.head(7) = own.head(7);
  spec.noise = options.noise_fraction * ref.cwiseAbs();
  spec.noise.head(7).setZero();
  return spec;
}

StreamRecipe paper_recipe(std::uint64_t seed, const ProductOptions& options) {
  const ProductParams p1{3.4, 1.61, 918.67}, p2{3.0, 1.11, 1082.43}, p3{2.8, 0.82, 918.58}, p4{3.5, 1.44, 1080.20};
  StreamRecipe r;
  r.seed = seed;
  r.products.push_back(make_product("product-1", p1, p1, SegmentKind::source_product, 8000, 0.085, options));
  r.products.push_back(make_product("product-2", p2, p1, SegmentKind::target_product, 500, 0.108, options));
  auto failure = make_product("failure", p2, p1, SegmentKind::failure, 500, 0.774, options);
  failure.failure = FailureMode{};
  r.products.push_back(std::move(failure));
  r.products.push_back(make_product("product-3", p3, p1, SegmentKind::target_product, 500, 0.06, options));
  r.products.push_back(make_product("product-4", p4, p1, SegmentKind::target_product, 500, 0.126, options));
  r.total_length = 10000;
  return r;
}

StreamRecipe stationary_recipe(std::uint64_t seed, std::size_t length, const ProductOptions& options) {
  const ProductParams p1{3.4, 1.61, 918.67};
  StreamRecipe r;
  r.seed = seed;
  r.products.push_back(make_product("product-1", p1, p1, SegmentKind::source_product, length, 0.085, options));
  r.total_length = length;
  return r;
}

GeneratedStream generate_stream(const StreamRecipe& recipe) {
  recipe.validate();
  const FeatureSchema schema = rolling_schema();
  GeneratedStream out;
  out.stream.schema = schema;
  out.stream.labeled = true;
  out.stream.samples.reserve(recipe.total_length);

  std::mt19937_64 rng(recipe.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> pulse(recipe.pulse_min, recipe.pulse_max);
  std::uniform_int_distribution<int> any_stand(1, kStands);

  std::size_t index = 0;
  for (const auto& product : recipe.products) {
    SegmentDescriptor seg{index, index + product.length, product.kind, product.params};
    out.segments.push_back(seg);

    // Exact anomaly count at uniformly drawn positions.
    const auto count = static_cast<std::size_t>(std::llround(product.anomaly_rate * static_cast<double>(product.length)));
    std::vector<std::size_t> order(product.length);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<char> anomalous(product.length, 0);
    for (std::size_t i = 0; i < count; ++i) anomalous[order[i]] = 1;

    Vector baseline = product.baseline;
    Vector noise = product.noise;
    if (product.failure) {
      for (const auto& signal : product.failure->signals) {
        const auto j = static_cast<Index>(schema.index_of(stand_name(signal, product.failure->stand)));
        baseline(j) += product.failure->shift_sigmas * product.noise(j);
        noise(j) *= product.failure->noise_inflation;
      }
    }

    for (std::size_t t = 0; t < product.length; ++t) {
      Vector x(baseline.size());
      for (Index j = 0; j < x.size(); ++j) x(j) = baseline(j) + noise(j) * gauss(rng);
      if (anomalous[t]) {
        const int stand = product.failure ? product.failure->stand : any_stand(rng);
        const double h = pulse(rng);
        for (const char* signal : {"current", "torque"}) {
          const auto j = static_cast<Index>(schema.index_of(stand_name(signal, stand)));
          x(j) += h * product.noise(j);
        }
      }
      out.stream.samples.push_back({{index, std::move(x)}, anomalous[t] ? 1 : 0});
      ++index;
    }
  }
  return out;
}

std::vector<SegmentDescriptor> paper_segments() {
  const ProductParams p1{3.4, 1.61, 918.67}, p2{3.0, 1.11, 1082.43}, p3{2.8, 0.82, 918.58}, p4{3.5, 1.44, 1080.20};
  return {{0, 8000, SegmentKind::source_product, p1},
          {8000, 8500, SegmentKind::target_product, p2},
          {8500, 9000, SegmentKind::failure, p2},
          {9000, 9500, SegmentKind::target_product, p3},
          {9500, 10000, SegmentKind::target_product, p4}};
}

LabeledStream load_csv(const std::string& path, const NameMapping& mapping) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  return read_csv(in, mapping);
}

void write_stream_csv(const std::string& path, const LabeledStream& stream) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  write_csv(out, stream);
}

}  // namespace shiftwatch

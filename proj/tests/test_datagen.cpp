#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "shiftwatch/datagen.hpp"
#include "support.hpp"

using namespace shiftwatch;

namespace {

std::string csv_text(const LabeledStream& s) {
  std::ostringstream out;
  write_csv(out, s);
  return out.str();
}

double column_mean(const LabeledStream& s, const SegmentDescriptor& seg, Index j) {
  double sum = 0.0;
  for (std::size_t i = seg.start; i < seg.end; ++i) sum += s.samples[i].sample.values(j);
  return sum / static_cast<double>(seg.end - seg.start);
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("shiftwatch-test-" + name);
}

}  // namespace

TEST_CASE("schema lists coil, roll and per-stand signals") {
  const FeatureSchema s = rolling_schema();
  CHECK(s.dimension() == 7 + 7 * kStands);
  CHECK(s.index_of("current_2") < s.dimension());
  CHECK(current_torque_features().size() == 8);
}

TEST_CASE("recipe layout: lengths, boundaries and anomaly rates") {
  const auto g = generate_stream(paper_recipe(1));
  REQUIRE(g.stream.size() == 10000);
  REQUIRE(g.segments.size() == 5);
  const std::size_t starts[] = {0, 8000, 8500, 9000, 9500};
  const double rates[] = {0.085, 0.108, 0.774, 0.06, 0.126};
  for (std::size_t s = 0; s < 5; ++s) {
    CHECK(g.segments[s].start == starts[s]);
    std::size_t anomalies = 0;
    for (std::size_t i = g.segments[s].start; i < g.segments[s].end; ++i) anomalies += g.stream.samples[i].label;
    const double rate = static_cast<double>(anomalies) / static_cast<double>(g.segments[s].end - g.segments[s].start);
    CHECK(std::abs(rate - rates[s]) <= 0.015);
  }
  CHECK(g.segments[2].kind == SegmentKind::failure);
  for (std::size_t i = 0; i < g.stream.size(); ++i) CHECK(g.stream.samples[i].sample.index == i);
  const auto fixed = paper_segments();
  for (std::size_t s = 0; s < 5; ++s) CHECK(fixed[s].start == g.segments[s].start);
}

TEST_CASE("same seed gives a byte-identical csv") {
  const auto a = generate_stream(testing::short_recipe(2)), b = generate_stream(testing::short_recipe(2));
  CHECK(csv_text(a.stream) == csv_text(b.stream));
  CHECK(csv_text(a.stream) != csv_text(generate_stream(testing::short_recipe(3)).stream));
}

TEST_CASE("zero noise and no anomalies give constant signals") {
  StreamRecipe r = stationary_recipe(4, 50, {0.0, 0.1});
  r.products[0].anomaly_rate = 0.0;
  const auto g = generate_stream(r);
  for (const auto& s : g.stream.samples) CHECK(s.sample.values == g.stream.samples[0].sample.values);
}

TEST_CASE("stand-2 current and torque separate the failure segment from product 2") {
  const auto g = generate_stream(paper_recipe(5));
  const FeatureSchema& schema = g.stream.schema;
  const auto& healthy = g.segments[1];
  const auto& failure = g.segments[2];
  for (const char* f : {"current_2", "torque_2"}) {
    const auto j = static_cast<Index>(schema.index_of(f));
    const double sd = paper_recipe(5).products[1].noise(j);
    CHECK(column_mean(g.stream, failure, j) - column_mean(g.stream, healthy, j) >= 2.0 * sd);
  }
  for (const char* f : {"current_1", "torque_1", "current_3", "torque_3", "current_4", "torque_4"}) {
    const auto j = static_cast<Index>(schema.index_of(f));
    const double sd = paper_recipe(5).products[1].noise(j);
    // Bearing pulses land on stand 2 inside the failure segment, so other stands stay put.
    CHECK(std::abs(column_mean(g.stream, failure, j) - column_mean(g.stream, healthy, j)) <= 0.5 * sd);
  }
}

TEST_CASE("each product moves the operating point") {
  const auto g = generate_stream(paper_recipe(6));
  const Vector& sd = paper_recipe(6).products[0].noise;
  for (std::size_t s : {1, 3, 4}) {
    double largest = 0.0;
    for (Index j = 0; j < sd.size(); ++j)
      if (sd(j) > 0.0)
        largest = std::max(largest, std::abs(column_mean(g.stream, g.segments[s], j) - column_mean(g.stream, g.segments[0], j)) / sd(j));
    CHECK(largest > 3.0);
  }
}

TEST_CASE("recipe validation") {
  StreamRecipe r = paper_recipe(1);
  r.total_length = 9999;
  CHECK_THROWS_AS(generate_stream(r), ConfigError);
  r = paper_recipe(1);
  r.products[1].anomaly_rate = 1.5;
  CHECK_THROWS_AS(generate_stream(r), ConfigError);
  r = paper_recipe(1);
  r.products.clear();
  CHECK_THROWS_AS(generate_stream(r), ConfigError);
}

TEST_CASE("csv files round trip and load unlabeled") {
  const auto g = generate_stream(testing::short_recipe(7));
  const auto path = temp_file("roundtrip.csv");
  write_stream_csv(path.string(), g.stream);
  const LabeledStream back = load_csv(path.string());
  CHECK(back.labeled);
  CHECK(csv_text(back) == csv_text(g.stream));
  {
    std::ofstream out(path);
    out << "current_2,torque_2\n1.5,2.5\n3.5,4.5\n";
  }
  const LabeledStream plain = load_csv(path.string());
  CHECK_FALSE(plain.labeled);
  CHECK(plain.size() == 2);
  CHECK(plain.samples[1].sample.values(1) == 4.5);
  { std::ofstream empty(path); }
  CHECK_THROWS_AS(load_csv(path.string()), SizeError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_csv(path.string()), InputError);
}

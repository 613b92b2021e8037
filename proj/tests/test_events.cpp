#include <doctest.h>

#include "shiftwatch/events.hpp"

using namespace shiftwatch;

namespace {

ShapleyBatchStats stats() {
  Matrix phi(3, 2);
  phi << 0.1, -0.3, 0.25, 1e-17, -2.0, 1.0 / 3.0;
  ShapleyBatchStats s = summarize_batch(phi, 4, {"current_2", "torque_2"});
  s.alarm[1] = true;
  return s;
}

void round_trip(const EventPayload& payload) {
  const PipelineEvent e{17, 8123, payload};
  const nlohmann::json j = to_json(e);
  CHECK(j.at("type") == event_type(payload));
  const PipelineEvent back = event_from_json(nlohmann::json::parse(j.dump()));
  CHECK(back == e);
}

}  // namespace

TEST_CASE("every event type survives a json round trip") {
  round_trip(KlPoint{0.123456789012345678, -3.5});
  round_trip(ChangepointDetected{2, {0.1, 0.2, 1.0 / 7.0}});
  BatchTrained t;
  t.batch = 3;
  t.segment = 1;
  t.start = 8050;
  t.end = 8100;
  t.loss = {0.5, 0.6, 0.01, 0.2};
  t.epochs = 100;
  t.origin = LabelOrigin::pseudo;
  t.model_hash = 0xfedcba9876543210ULL;
  round_trip(t);
  t.pairing_error = "no same-label source/target pair available";
  round_trip(t);
  BatchPredicted p;
  p.batch = 5;
  p.segment = 2;
  p.start = 8500;
  p.end = 8550;
  p.labels = {0, 1, 1};
  p.scores = {0.1, 0.9, 0.51};
  p.truth = {0, 1, 0};
  p.model_hash = ~0ULL;
  p.source_model = true;
  round_trip(p);
  BatchExplained x;
  x.batch = 6;
  x.segment = 2;
  x.stats = stats();
  x.phi = Matrix::Random(3, 2);
  round_trip(x);
  round_trip(VerdictApplied{1, Verdict::failure, "operator"});
  round_trip(AlarmRaised{1, "failure verdict"});
}

TEST_CASE("stats json keeps feature order and alarms") {
  const ShapleyBatchStats s = stats();
  CHECK(stats_from_json(to_json(s)) == s);
}

TEST_CASE("verdict names") {
  for (Verdict v : {Verdict::pending, Verdict::healthy, Verdict::failure}) CHECK(verdict_from_string(to_string(v)) == v);
  CHECK_THROWS_AS(verdict_from_string("maybe"), InputError);
}

TEST_CASE("malformed events are rejected") {
  CHECK_THROWS_AS(event_from_json({{"type", "Mystery"}, {"sequence", 0}, {"index", 0}, {"payload", nlohmann::json::object()}}), InputError);
  CHECK_THROWS(event_from_json(nlohmann::json::object()));
  nlohmann::json j = to_json(PipelineEvent{0, 0, BatchExplained{0, 0, stats(), Matrix::Zero(2, 2)}});
  j["payload"]["phi"] = nlohmann::json::array({{1.0, 2.0}, {3.0}});
  CHECK_THROWS_AS(event_from_json(j), InputError);
}

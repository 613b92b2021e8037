#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include "shiftwatch/pipeline.hpp"
#include "support.hpp"

using namespace shiftwatch;
using namespace shiftwatch::testing;

namespace {

template <class T>
std::vector<const T*> payloads(std::span<const PipelineEvent> events) {
  std::vector<const T*> out;
  for (const auto& e : events)
    if (const auto* p = std::get_if<T>(&e.payload)) out.push_back(p);
  return out;
}

// Pushes samples until the first changepoint has been emitted; returns the position after it.
std::size_t push_until_changepoint(Pipeline& p, const LoadedStream& s, std::size_t from = 0,
                                   std::size_t wanted = 1) {
  std::size_t i = from;
  while (i < s.stream.size() && p.changepoints().size() < wanted) p.push(s.stream.samples[i++]);
  return i;
}

const LoadedStream& shared_stream() {
  static const LoadedStream s = short_stream(1);
  return s;
}

const ReplayResult& shared_replay() {
  static const ReplayResult r = run_replay(shared_stream(), quick_pipeline(shared_stream().stream.size()));
  return r;
}

}  // namespace

TEST_CASE("an empty run produces no events") {
  Pipeline p(rolling_schema(), quick_pipeline(2400));
  p.finish();
  CHECK(p.event_count() == 0);
  CHECK(p.state()->finished);
  CHECK(p.changepoints().empty());
  CHECK_THROWS_AS(p.push(shared_stream().stream.samples[0]), StateError);
}

TEST_CASE("short stream: changepoints near every segment boundary") {
  const ReplayResult& r = shared_replay();
  REQUIRE(r.report.changepoints.size() == 4);
  for (std::size_t k = 0; k < 4; ++k) {
    const std::size_t boundary = r.segments[k + 1].start;
    CHECK(r.report.changepoints[k] >= boundary);
    CHECK(r.report.changepoints[k] <= boundary + 50);
  }
}

TEST_CASE("event log is ordered by sequence and stream index") {
  const auto& events = shared_replay().events;
  REQUIRE_FALSE(events.empty());
  for (std::size_t i = 0; i < events.size(); ++i) {
    CHECK(events[i].sequence == i);
    if (i) CHECK(events[i].index >= events[i - 1].index);
  }
  const auto predicted = payloads<BatchPredicted>(events);
  for (std::size_t i = 1; i < predicted.size(); ++i) CHECK(predicted[i]->start == predicted[i - 1]->end);
  // Every batch is predicted before it is trained on.
  for (const auto* t : payloads<BatchTrained>(events))
    CHECK(std::any_of(predicted.begin(), predicted.end(), [&](const BatchPredicted* p) { return p->batch == t->batch; }));
}

TEST_CASE("batches never straddle a changepoint") {
  const ReplayResult& r = shared_replay();
  for (const auto* p : payloads<BatchPredicted>(r.events))
    for (std::size_t cp : r.report.changepoints) CHECK_FALSE((p->start < cp && cp < p->end));
}

TEST_CASE("replays are deterministic") {
  const ReplayResult again = run_replay(shared_stream(), quick_pipeline(shared_stream().stream.size()));
  CHECK(again.events == shared_replay().events);
  CHECK(again.report == shared_replay().report);
}

TEST_CASE("verdict errors") {
  const LoadedStream& s = shared_stream();
  Pipeline p(s.stream.schema, quick_pipeline(s.stream.size()));
  CHECK_THROWS_AS(p.submit_verdict(0, Verdict::healthy), NotFoundError);
  push_until_changepoint(p, s);
  REQUIRE(p.changepoints().size() == 1);
  CHECK_THROWS_AS(p.submit_verdict(0, Verdict::pending), InputError);
  const ChangepointRecord r = p.submit_verdict(0, Verdict::healthy, "tester");
  CHECK(r.verdict == Verdict::healthy);
  CHECK(r.verdict_source == "tester");
  CHECK(r.verdict_time.size() == 20);
  CHECK_FALSE(r.applied);
  CHECK_THROWS_AS(p.submit_verdict(0, Verdict::failure), ConflictError);
  CHECK_FALSE(p.changepoints()[0].applied);
}

TEST_CASE("state right after a changepoint has an empty target set") {
  const LoadedStream& s = shared_stream();
  Pipeline p(s.stream.schema, quick_pipeline(s.stream.size()));
  push_until_changepoint(p, s);
  const auto st = p.state();
  REQUIRE(st->session);
  CHECK(st->segment == 1);
  CHECK(st->session->target_size == 0);
  CHECK(st->session->cursor == p.changepoints()[0].index);
  CHECK(st->session->model_hash == st->session->source_hash);
}

TEST_CASE("a failure verdict freezes the current segment on the source model") {
  const LoadedStream& s = shared_stream();
  Pipeline p(s.stream.schema, quick_pipeline(s.stream.size()));
  std::size_t i = push_until_changepoint(p, s, 0, 2);
  p.submit_verdict(1, Verdict::failure);
  const std::size_t mark = p.event_count();
  i = push_until_changepoint(p, s, i, 3);
  const auto events = p.events_since(mark);
  const auto applied = std::find_if(events.begin(), events.end(),
                                    [](const PipelineEvent& e) { return std::holds_alternative<VerdictApplied>(e.payload); });
  REQUIRE(applied != events.end());
  CHECK(std::next(applied) != events.end());
  CHECK(std::holds_alternative<AlarmRaised>(std::next(applied)->payload));
  std::size_t predicted_after = 0;
  for (auto it = std::next(applied); it != events.end(); ++it) {
    CHECK_FALSE(std::holds_alternative<BatchTrained>(it->payload));
    if (const auto* b = std::get_if<BatchPredicted>(&it->payload); b && b->segment == 2) {
      CHECK(b->source_model);
      ++predicted_after;
    }
  }
  CHECK(predicted_after > 0);
  CHECK(p.changepoints()[1].applied);
  // The next segment trains again.
  const std::size_t mark3 = p.event_count();
  while (i < s.stream.size() && p.event_count() < mark3 + 20) p.push(s.stream.samples[i++]);
  CHECK_FALSE(payloads<BatchTrained>(p.events_since(mark3)).empty());
}

TEST_CASE("a healthy verdict keeps training and clears the alarm") {
  const LoadedStream& s = shared_stream();
  Pipeline p(s.stream.schema, quick_pipeline(s.stream.size()));
  std::size_t i = push_until_changepoint(p, s);
  p.submit_verdict(0, Verdict::healthy);
  const std::size_t mark = p.event_count();
  push_until_changepoint(p, s, i, 2);
  const auto events = p.events_since(mark);
  CHECK(payloads<VerdictApplied>(events).size() == 1);
  CHECK(payloads<AlarmRaised>(events).empty());
  CHECK(payloads<BatchTrained>(events).size() >= 2);
  CHECK_FALSE(p.state()->alarm);
}

TEST_CASE("invalid event cursor") {
  Pipeline p(rolling_schema(), quick_pipeline(2400));
  CHECK(p.events_since(0).empty());
  CHECK_THROWS_AS(p.events_since(1), InputError);
}

TEST_CASE("samples must arrive in order with the schema width") {
  const LoadedStream& s = shared_stream();
  Pipeline p(s.stream.schema, quick_pipeline(s.stream.size()));
  p.push(s.stream.samples[1]);
  CHECK_THROWS_AS(p.push(s.stream.samples[0]), InputError);
  LabeledSample narrow{{5, Vector::Zero(3)}, 0};
  CHECK_THROWS_AS(p.push(narrow), SchemaError);
}

TEST_CASE("signals expose raw values, labels and predictions") {
  const LoadedStream& s = shared_stream();
  Pipeline p(s.stream.schema, quick_pipeline(s.stream.size()));
  for (const auto& x : s.stream.samples) p.push(x);
  p.finish();
  const auto points = p.signals("current_2", 1000, 1100);
  REQUIRE(points.size() == 100);
  const auto j = static_cast<Index>(s.stream.schema.index_of("current_2"));
  CHECK(points[0].index == 1000);
  CHECK(points[0].value == s.stream.samples[1000].sample.values(j));
  CHECK(points[0].label == s.stream.samples[1000].label);
  CHECK(p.signals("current_2", 0, 10)[0].flagged == -1);
  CHECK(p.signals("current_2", 2390, 2400).back().flagged >= 0);
  CHECK_THROWS_AS(p.signals("nope", 0, 1), SchemaError);
}

TEST_CASE("live ingestion matches the replay") {
  const LoadedStream& s = shared_stream();
  Pipeline p(s.stream.schema, quick_pipeline(s.stream.size()), PipelineMode::live);
  LiveRunner runner(p, s.stream, 0.0);
  runner.start();
  runner.join();
  CHECK(runner.done());
  CHECK(p.state()->finished);
  CHECK(p.state()->mode == PipelineMode::live);
  CHECK(p.events_since(0) == shared_replay().events);
}

TEST_CASE("concurrent readers see a consistent growing log") {
  const LoadedStream& s = shared_stream();
  Pipeline p(s.stream.schema, quick_pipeline(s.stream.size()), PipelineMode::live);
  std::atomic<bool> stop{false};
  std::atomic<int> problems{0};
  std::vector<std::thread> readers;
  for (int r = 0; r < 4; ++r)
    readers.emplace_back([&] {
      std::size_t cursor = 0, last_samples = 0;
      while (!stop.load()) {
        const auto fresh = p.events_since(cursor);
        for (const auto& e : fresh)
          if (e.sequence != cursor++) ++problems;
        const auto st = p.state();
        if (st->samples < last_samples) ++problems;
        last_samples = st->samples;
        p.changepoints();
        p.signals("torque_2", 0, 100000);
        p.wait_for_events(cursor, std::chrono::milliseconds(1));
      }
    });
  for (const auto& x : s.stream.samples) p.push(x);
  p.finish();
  stop = true;
  for (auto& t : readers) t.join();
  CHECK(problems.load() == 0);
  CHECK(p.events_since(0) == shared_replay().events);
}

TEST_CASE("unlabeled streams are monitored without adaptation") {
  LoadedStream s = shared_stream();
  s.stream.labeled = false;
  const ReplayResult r = run_replay(s, quick_pipeline(s.stream.size()));
  CHECK(r.report.changepoints == shared_replay().report.changepoints);
  CHECK(payloads<BatchTrained>(r.events).empty());
  CHECK(payloads<BatchPredicted>(r.events).empty());
}

TEST_CASE("report files and event reload") {
  const ReplayResult& r = shared_replay();
  const auto dir = std::filesystem::temp_directory_path() / "shiftwatch-test-report";
  std::filesystem::remove_all(dir);
  write_report(dir.string(), r.report, r.events, r.records);
  for (const char* f : {"events.jsonl", "changepoints.csv", "kl.csv", "shap_stats.csv", "shap_iqr.csv",
                        "shap_profiles.csv", "segments.csv"})
    CHECK(std::filesystem::exists(dir / f));
  std::ifstream kl(dir / "kl.csv");
  std::string header;
  std::getline(kl, header);
  CHECK(header == "index,kl,statistic,changepoint");
  const auto events = read_events((dir / "events.jsonl").string());
  CHECK(events == r.events);
  CHECK(aggregate_events(events, r.report.features) == r.report);
  std::filesystem::remove_all(dir);
}

TEST_CASE("segment summaries count predictions against the labels") {
  const ReplayResult& r = shared_replay();
  REQUIRE(r.report.segments.size() == 5);
  // The warm-up is the labeled source set; the rest of the first segment is predicted.
  const std::size_t warmup = warmup_size(quick_config(), shared_stream().stream.size());
  CHECK(r.report.segments[0].predicted == r.report.segments[0].end - warmup);
  for (std::size_t k = 1; k < 5; ++k) {
    const auto& seg = r.report.segments[k];
    CHECK(seg.predicted == seg.end - seg.start);
    CHECK(seg.flagged == seg.true_positives + seg.false_positives);
  }
}

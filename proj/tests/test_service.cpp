#include <doctest.h>

#include "shiftwatch/service.hpp"
#include "support.hpp"

// After Eigen: a system header pulled in by httplib defines macros that clash with it.
#include <httplib.h>

using namespace shiftwatch;
using namespace shiftwatch::testing;
using nlohmann::json;

namespace {

const LoadedStream& stream() {
  static const LoadedStream s = short_stream(2);
  return s;
}

// A pipeline that has consumed the whole stream.
Pipeline& finished_pipeline() {
  static Pipeline* p = [] {
    auto* q = new Pipeline(stream().stream.schema, quick_pipeline(stream().stream.size()));
    for (const auto& x : stream().stream.samples) q->push(x);
    q->finish();
    return q;
  }();
  return *p;
}

json get_json(httplib::Client& c, const std::string& path, int expected = 200) {
  const auto r = c.Get(path);
  REQUIRE(r);
  CHECK(r->status == expected);
  return json::parse(r->body);
}

int post_status(httplib::Client& c, const json& body) {
  const auto r = c.Post("/api/verdict", body.dump(), "application/json");
  REQUIRE(r);
  return r->status;
}

}  // namespace

TEST_CASE("listen address parsing") {
  CHECK(parse_listen("127.0.0.1:8080") == std::pair<std::string, int>{"127.0.0.1", 8080});
  CHECK(parse_listen("0.0.0.0:0").second == 0);
  CHECK_THROWS_AS(parse_listen("localhost"), ConfigError);
  CHECK_THROWS_AS(parse_listen("localhost:http"), ConfigError);
  CHECK_THROWS_AS(parse_listen("localhost:70000"), ConfigError);
}

TEST_CASE("read endpoints and status codes") {
  Pipeline& p = finished_pipeline();
  Service service(p);
  const int port = service.start("127.0.0.1", 0);
  REQUIRE(port > 0);
  httplib::Client c("127.0.0.1", port);

  const json state = get_json(c, "/api/state");
  CHECK(state["finished"] == true);
  CHECK(state["samples"] == stream().stream.size());
  CHECK(state["cursor"] == p.event_count());
  CHECK(state["session"]["model_hash"].get<std::string>().size() == 16);

  const json events = get_json(c, "/api/events?since=" + std::to_string(p.event_count() - 3));
  REQUIRE(events.size() == 3);
  CHECK(events[0]["sequence"] == p.event_count() - 3);
  get_json(c, "/api/events?since=" + std::to_string(p.event_count() + 1), 400);
  get_json(c, "/api/events?since=abc", 400);

  const json cps = get_json(c, "/api/changepoints");
  REQUIRE(cps.size() == p.changepoints().size());
  CHECK(cps[0]["verdict"] == "pending");
  CHECK(cps[0]["verdict_time"].is_null());

  const json sig = get_json(c, "/api/signals?feature=torque_2&from=1000&to=1010");
  CHECK(sig["feature"] == "torque_2");
  CHECK(sig["points"].size() == 10);
  CHECK(sig["points"][0]["index"] == 1000);
  get_json(c, "/api/signals?feature=nope", 404);
  get_json(c, "/api/signals?feature=torque_2&from=10&to=5", 400);
  get_json(c, "/api/shap/batches?feature=nope", 404);

  const json segs = get_json(c, "/api/shap/segments");
  REQUIRE_FALSE(segs.empty());
  CHECK(segs[0]["medians"].contains("current_2"));
  service.stop();
}

TEST_CASE("batch statistics match the pipeline's") {
  Pipeline& p = finished_pipeline();
  Service service(p);
  httplib::Client c("127.0.0.1", service.start("127.0.0.1", 0));
  const json all = get_json(c, "/api/shap/batches");
  std::vector<const BatchExplained*> explained;
  const auto events = p.events_since(0);
  for (const auto& e : events)
    if (const auto* b = std::get_if<BatchExplained>(&e.payload)) explained.push_back(b);
  REQUIRE(all.size() == explained.size());
  for (std::size_t i = 0; i < explained.size(); ++i) {
    CHECK(stats_from_json(all[i]) == explained[i]->stats);
    CHECK(all[i]["segment"] == explained[i]->segment);
  }
  const json one = get_json(c, "/api/shap/batches?feature=torque_2");
  REQUIRE(one.size() == explained.size());
  CHECK(one[0]["features"].size() == 1);
  CHECK(one[0]["features"][0]["feature"] == "torque_2");
}

TEST_CASE("event stream replays the log and ends") {
  Pipeline& p = finished_pipeline();
  Service service(p);
  httplib::Client c("127.0.0.1", service.start("127.0.0.1", 0));
  const std::size_t since = p.event_count() - 5;
  std::string body;
  const auto r = c.Get("/api/stream?since=" + std::to_string(since), [&](const char* data, std::size_t n) {
    body.append(data, n);
    return true;
  });
  REQUIRE(r);
  CHECK(r->status == 200);
  CHECK(r->get_header_value("Content-Type") == "text/event-stream");
  CHECK(body.find("id: " + std::to_string(since) + "\n") != std::string::npos);
  CHECK(body.find("id: " + std::to_string(since - 1) + "\n") == std::string::npos);
  CHECK(body.rfind("event: end\n") != std::string::npos);
  std::size_t count = 0;
  for (std::size_t pos = body.find("\ndata: "); pos != std::string::npos; pos = body.find("\ndata: ", pos + 1)) ++count;
  CHECK(count == 5 + 1);  // five log entries and the end marker

  std::string resumed;
  httplib::Headers h{{"Last-Event-ID", std::to_string(p.event_count() - 2)}};
  c.Get("/api/stream", h, [&](const char* data, std::size_t n) {
    resumed.append(data, n);
    return true;
  });
  CHECK(resumed.find("id: " + std::to_string(p.event_count() - 1) + "\n") != std::string::npos);
  CHECK(resumed.find("id: " + std::to_string(p.event_count() - 2) + "\n") == std::string::npos);
}

TEST_CASE("verdicts over http") {
  const LoadedStream& s = stream();
  Pipeline p(s.stream.schema, quick_pipeline(s.stream.size()), PipelineMode::live);
  std::size_t i = 0;
  while (p.changepoints().size() < 2) p.push(s.stream.samples[i++]);
  Service service(p);
  httplib::Client c("127.0.0.1", service.start("127.0.0.1", 0));

  CHECK(post_status(c, {{"id", 7}, {"verdict", "failure"}}) == 404);
  CHECK(post_status(c, {{"id", 1}, {"verdict", "maybe"}}) == 400);
  CHECK(post_status(c, {{"id", 1}, {"verdict", "pending"}}) == 400);
  CHECK(post_status(c, {{"id", 1}}) == 400);
  const auto bad = c.Post("/api/verdict", "{not json", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);

  CHECK(post_status(c, {{"id", 1}, {"verdict", "failure"}, {"source", "shift lead"}}) == 200);
  CHECK(post_status(c, {{"id", 1}, {"verdict", "healthy"}}) == 409);
  const json cps = get_json(c, "/api/changepoints");
  CHECK(cps[1]["verdict"] == "failure");
  CHECK(cps[1]["verdict_source"] == "shift lead");
  CHECK(cps[1]["applied"] == false);

  // The writer applies the verdict at the next batch boundary.
  const std::size_t mark = p.event_count();
  for (std::size_t k = 0; k < 60; ++k) p.push(s.stream.samples[i++]);
  REQUIRE(p.changepoints().size() == 2);
  bool alarm_event = false;
  for (const auto& e : get_json(c, "/api/events?since=" + std::to_string(mark)))
    alarm_event |= e["type"] == "AlarmRaised";
  CHECK(alarm_event);
  const json state = get_json(c, "/api/state");
  CHECK(state["alarm"] == true);
  CHECK(state["session"]["frozen"] == true);
  CHECK(state["session"]["model_hash"] == state["session"]["source_hash"]);
  CHECK(get_json(c, "/api/changepoints")[1]["applied"] == true);
}

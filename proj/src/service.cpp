#include "shiftwatch/service.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <limits>

#include <httplib.h>

namespace shiftwatch {

using nlohmann::json;

namespace {

json ph_json(const PageHinkleyConfig& c) {
  return {{"delta", c.delta}, {"lambda", c.lambda}, {"min_instances", c.min_instances}};
}

std::size_t index_param(const httplib::Request& req, const char* name, std::size_t fallback) {
  if (!req.has_param(name)) return fallback;
  const std::string text = req.get_param_value(name);
  std::size_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw InputError(std::string("bad value '") + text + "' for " + name);
  return value;
}

void reply(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void fail(httplib::Response& res, int status, const std::string& message) {
  reply(res, {{"error", message}}, status);
}

// Runs a handler and maps library errors onto HTTP statuses.
template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const NotFoundError& e) {
      fail(res, 404, e.what());
    } catch (const ConflictError& e) {
      fail(res, 409, e.what());
    } catch (const SchemaError& e) {
      fail(res, 404, e.what());
    } catch (const Error& e) {
      fail(res, 400, e.what());
    } catch (const json::exception& e) {
      fail(res, 400, e.what());
    }
  };
}

}  // namespace

json to_json(const PipelineState& s) {
  json j = {{"mode", to_string(s.mode)},
            {"segment", s.segment},
            {"samples", s.samples},
            {"alarm", s.alarm},
            {"cursor", s.cursor},
            {"backlog", s.backlog},
            {"pending_verdicts", s.pending_verdicts},
            {"finished", s.finished}};
  j["monitor"] = {{"reference_size", s.monitor.reference_size},
                  {"active", s.monitor.active},
                  {"steps", s.monitor.steps},
                  {"ph", ph_json(s.monitor.ph)},
                  {"statistic", s.monitor.statistic},
                  {"changepoints", s.monitor.changepoints}};
  if (s.session) {
    const auto& z = *s.session;
    char hash[17], source[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(z.model_hash));
    std::snprintf(source, sizeof source, "%016llx", static_cast<unsigned long long>(z.source_hash));
    j["session"] = {{"cursor", z.cursor},
                    {"target_size", z.target_size},
                    {"pseudo_labeled", z.pseudo_labeled},
                    {"trained_batches", z.trained_batches},
                    {"frozen", z.frozen},
                    {"model_hash", hash},
                    {"source_hash", source}};
  } else {
    j["session"] = nullptr;
  }
  return j;
}

json to_json(const ChangepointRecord& r) {
  return {{"id", r.id},
          {"index", r.index},
          {"context", r.context},
          {"verdict", to_string(r.verdict)},
          {"verdict_time", r.verdict_time.empty() ? json(nullptr) : json(r.verdict_time)},
          {"verdict_source", r.verdict_source.empty() ? json(nullptr) : json(r.verdict_source)},
          {"applied", r.applied}};
}

json to_json(const SignalPoint& p) {
  return {{"index", p.index}, {"value", p.value}, {"label", p.label},
          {"flagged", p.flagged < 0 ? json(nullptr) : json(p.flagged)}};
}

std::pair<std::string, int> parse_listen(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos) throw ConfigError("listen address must be host:port, got '" + address + "'");
  int port = 0;
  const char* b = address.data() + colon + 1;
  const char* e = address.data() + address.size();
  const auto [ptr, ec] = std::from_chars(b, e, port);
  if (ec != std::errc() || ptr != e || port < 0 || port > 65535)
    throw ConfigError("bad port in listen address '" + address + "'");
  return {address.substr(0, colon), port};
}

Service::Service(Pipeline& pipeline) : pipeline_(pipeline), server_(std::make_unique<httplib::Server>()) {
  routes();
}

Service::~Service() { stop(); }

void Service::routes() {
  auto& s = *server_;
  Pipeline& p = pipeline_;

  s.Get("/api/state", guarded([&p](const httplib::Request&, httplib::Response& res) { reply(res, to_json(*p.state())); }));

  s.Get("/api/events", guarded([&p](const httplib::Request& req, httplib::Response& res) {
          const auto events = p.events_since(index_param(req, "since", 0));
          json out = json::array();
          for (const auto& e : events) out.push_back(to_json(e));
          reply(res, out);
        }));

  s.Get("/api/changepoints", guarded([&p](const httplib::Request&, httplib::Response& res) {
          json out = json::array();
          for (const auto& r : p.changepoints()) out.push_back(to_json(r));
          reply(res, out);
        }));

  s.Get("/api/shap/batches", guarded([&p](const httplib::Request& req, httplib::Response& res) {
          const std::string feature = req.get_param_value("feature");
          const auto& features = p.shap_features();
          if (!feature.empty() && std::find(features.begin(), features.end(), feature) == features.end())
            throw NotFoundError("feature '" + feature + "' is not explained");
          json out = json::array();
          for (const auto& e : p.events_since(0)) {
            const auto* b = std::get_if<BatchExplained>(&e.payload);
            if (!b) continue;
            json stats = to_json(b->stats);
            stats["segment"] = b->segment;
            stats["index"] = e.index;
            if (!feature.empty()) {
              json kept = json::array();
              for (const auto& f : stats["features"])
                if (f["feature"] == feature) kept.push_back(f);
              stats["features"] = kept;
            }
            out.push_back(std::move(stats));
          }
          reply(res, out);
        }));

  s.Get("/api/shap/segments", guarded([&p](const httplib::Request&, httplib::Response& res) {
          const auto events = p.events_since(0);
          const RunReport report = aggregate_events(events, p.shap_features());
          json out = json::array();
          for (std::size_t i = 0; i < report.profiles.size(); ++i) {
            json medians = json::object();
            for (std::size_t j = 0; j < report.features.size(); ++j)
              medians[report.features[j]] = report.profiles[i](static_cast<Index>(j));
            out.push_back({{"segment", report.profile_segments[i]}, {"medians", medians}});
          }
          reply(res, out);
        }));

  s.Get("/api/signals", guarded([&p](const httplib::Request& req, httplib::Response& res) {
          if (!req.has_param("feature")) throw InputError("missing feature parameter");
          const std::size_t from = index_param(req, "from", 0);
          const std::size_t to = index_param(req, "to", std::numeric_limits<std::size_t>::max());
          if (to < from) throw InputError("'to' precedes 'from'");
          json points = json::array();
          for (const auto& pt : p.signals(req.get_param_value("feature"), from, to)) points.push_back(to_json(pt));
          reply(res, {{"feature", req.get_param_value("feature")}, {"points", points}});
        }));

  s.Post("/api/verdict", guarded([&p](const httplib::Request& req, httplib::Response& res) {
           const json body = json::parse(req.body);
           const auto id = body.at("id").get<std::size_t>();
           const Verdict verdict = verdict_from_string(body.at("verdict").get<std::string>());
           const std::string source = body.contains("source") ? body["source"].get<std::string>() : "operator";
           reply(res, to_json(p.submit_verdict(id, verdict, source)));
         }));

  s.Get("/api/stream", guarded([this, &p](const httplib::Request& req, httplib::Response& res) {
          std::size_t start = index_param(req, "since", 0);
          if (req.has_header("Last-Event-ID")) {
            const std::string last = req.get_header_value("Last-Event-ID");
            std::size_t id = 0;
            if (std::from_chars(last.data(), last.data() + last.size(), id).ec == std::errc()) start = id + 1;
          }
          if (start > p.event_count()) throw InputError("event cursor past the end of the log");
          auto cursor = std::make_shared<std::size_t>(start);
          res.set_header("Cache-Control", "no-cache");
          res.set_chunked_content_provider("text/event-stream", [this, &p, cursor](std::size_t, httplib::DataSink& sink) {
            if (stopping_) return false;
            p.wait_for_events(*cursor, std::chrono::milliseconds(250));
            for (const auto& e : p.events_since(*cursor)) {
              const std::string chunk = "id: " + std::to_string(e.sequence) + "\nevent: " + event_type(e.payload) +
                                        "\ndata: " + to_json(e).dump() + "\n\n";
              if (!sink.write(chunk.data(), chunk.size())) return false;
              *cursor = e.sequence + 1;
            }
            const auto state = p.state();
            if (state->finished && *cursor >= p.event_count()) {
              const std::string end = "event: end\ndata: {}\n\n";
              sink.write(end.data(), end.size());
              sink.done();
            }
            return true;
          });
        }));
}

int Service::start(const std::string& host, int port) {
  port_ = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (port_ < 0) throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void Service::listen(const std::string& host, int port) {
  port_ = port;
  if (!server_->listen(host, port)) throw ConfigError("cannot listen on " + host + ":" + std::to_string(port));
}

void Service::stop() {
  stopping_ = true;
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace shiftwatch

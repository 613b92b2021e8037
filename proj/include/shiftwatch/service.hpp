#pragma once

// HTTP/JSON front end over a Pipeline.
//
//   GET  /api/state
//   GET  /api/events?since=<cursor>
//   GET  /api/changepoints
//   GET  /api/shap/batches?feature=<f>
//   GET  /api/shap/segments
//   GET  /api/signals?feature=<f>&from=<i>&to=<j>
//   POST /api/verdict  {"id": 0, "verdict": "failure"}
//   GET  /api/stream   server-sent events, one per log entry

#include <atomic>
#include <memory>
#include <string>
#include <thread>

#include <json.hpp>

#include "shiftwatch/pipeline.hpp"

namespace httplib {
class Server;
}

namespace shiftwatch {

nlohmann::json to_json(const PipelineState& state);
nlohmann::json to_json(const ChangepointRecord& record);
nlohmann::json to_json(const SignalPoint& point);

// "host:port"; port 0 picks a free port.
std::pair<std::string, int> parse_listen(const std::string& address);

class Service {
 public:
  explicit Service(Pipeline& pipeline);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds and serves on a background thread; returns the bound port.
  int start(const std::string& host, int port);
  // Blocks serving on the calling thread.
  void listen(const std::string& host, int port);
  void stop();
  int port() const { return port_; }

 private:
  void routes();

  Pipeline& pipeline_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::atomic<bool> stopping_{false};
  int port_ = 0;
};

}  // namespace shiftwatch

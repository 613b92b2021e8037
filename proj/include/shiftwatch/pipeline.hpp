#pragma once

// Streaming orchestration: changepoint monitoring, batch adaptation, per-batch explanation
// and median monitoring, with an ordered event log and operator verdicts.
//
// One writer thread drives push()/finish(). Readers (state, events, records, signals)
// may run concurrently from other threads; verdicts are queued and applied by the writer
// at the next batch boundary.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "shiftwatch/ccsa.hpp"
#include "shiftwatch/changepoint.hpp"
#include "shiftwatch/config.hpp"
#include "shiftwatch/events.hpp"
#include "shiftwatch/shap_monitor.hpp"
#include "shiftwatch/shapley.hpp"

namespace shiftwatch {

struct PipelineConfig {
  MonitorConfig monitor;
  CcsaConfig ccsa;
  ShapleyMode explainer = ShapleyMode::permutation;
  int permutations = 100;
  std::uint64_t explainer_seed = 3;
  std::vector<std::string> shap_features;  // empty = all schema features
  PageHinkleyConfig shap_ph{0.0, 1.0, 1, PhDirection::increase};
  PhCalibration shap_calibration{0.5, 5.0};
  std::size_t shap_calibration_batches = 0;  // 0 = the first target segment
  std::size_t kl_context = 25;
};

PipelineConfig pipeline_config(const RunConfig& config, std::size_t stream_length);

struct ChangepointRecord {
  std::size_t id = 0;
  std::size_t index = 0;
  std::vector<double> context;
  Verdict verdict = Verdict::pending;
  std::string verdict_time;  // UTC, ISO 8601
  std::string verdict_source;
  bool applied = false;
};

enum class PipelineMode { replay, live };
const char* to_string(PipelineMode mode);

struct PipelineState {
  PipelineMode mode = PipelineMode::replay;
  std::size_t segment = 0;  // number of changepoints so far
  std::size_t samples = 0;
  MonitorSnapshot monitor;
  std::optional<SessionSnapshot> session;
  bool alarm = false;
  std::size_t cursor = 0;  // events in the log
  std::size_t backlog = 0;  // samples received but not yet processed
  std::size_t pending_verdicts = 0;
  bool finished = false;
};

struct SignalPoint {
  std::size_t index = 0;
  double value = 0.0;
  int label = 0;
  int flagged = -1;  // -1 until predicted
};

class Pipeline {
 public:
  Pipeline(FeatureSchema schema, PipelineConfig config, PipelineMode mode = PipelineMode::replay,
           bool labeled = true);

  void push(const LabeledSample& sample);
  // Scores the trailing partial batch and applies queued verdicts.
  void finish();

  ChangepointRecord submit_verdict(std::size_t id, Verdict verdict, const std::string& source = "operator");

  std::shared_ptr<const PipelineState> state() const;
  std::vector<PipelineEvent> events_since(std::size_t cursor) const;
  std::size_t event_count() const;
  // Blocks until the log grows past `cursor`, the run finishes, or the timeout passes.
  bool wait_for_events(std::size_t cursor, std::chrono::milliseconds timeout) const;
  std::vector<ChangepointRecord> changepoints() const;
  std::optional<ChangepointRecord> changepoint(std::size_t id) const;
  std::vector<SignalPoint> signals(const std::string& feature, std::size_t from, std::size_t to) const;

  const FeatureSchema& schema() const { return schema_; }
  const PipelineConfig& config() const { return config_; }
  const std::vector<std::string>& shap_features() const { return shap_features_; }
  void set_backlog(std::size_t backlog) { backlog_.store(backlog); }

  // Writer-side accessors for tests and tools; not synchronized.
  const AdaptationSession* session() const { return session_ ? &*session_ : nullptr; }
  const ChangepointMonitor& monitor() const { return monitor_; }
  const std::vector<MedianSeries>& median_series() const { return series_; }

 private:
  struct Command {
    std::size_t id;
    Verdict verdict;
    std::string source;
  };

  void emit(std::size_t index, EventPayload payload);
  void publish();
  void apply_commands(std::size_t index);
  void flush_batch(bool full);
  void start_session();

  FeatureSchema schema_;
  PipelineConfig config_;
  PipelineMode mode_;
  bool labeled_;
  std::vector<std::string> shap_features_;
  std::size_t warmup_;

  ChangepointMonitor monitor_;
  std::optional<AdaptationSession> session_;
  std::vector<LabeledSample> source_;
  std::vector<LabeledSample> batch_;
  std::vector<MedianSeries> series_;
  std::deque<double> recent_kl_;
  std::size_t segment_ = 0;
  std::size_t next_batch_ = 0;
  std::size_t samples_ = 0;
  std::optional<std::size_t> last_index_;
  bool alarm_ = false;
  bool finished_ = false;

  mutable std::shared_mutex events_mutex_;
  mutable std::condition_variable_any events_cv_;
  std::vector<PipelineEvent> events_;

  mutable std::mutex records_mutex_;
  std::vector<ChangepointRecord> records_;
  std::deque<Command> commands_;

  mutable std::shared_mutex signals_mutex_;
  std::vector<double> signal_values_;  // row-major
  std::vector<int> signal_labels_;
  std::vector<int> signal_flags_;
  std::vector<std::size_t> signal_index_;

  mutable std::mutex state_mutex_;
  std::shared_ptr<const PipelineState> state_;
  std::atomic<std::size_t> backlog_{0};
};

struct SegmentSummary {
  std::size_t segment = 0;
  std::size_t start = 0;
  std::size_t end = 0;
  std::size_t predicted = 0;
  std::size_t flagged = 0;
  std::size_t positives = 0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t trained_batches = 0;
  std::size_t explained_batches = 0;

  double flagged_rate() const;
  double false_positive_rate() const;  // over true negatives; 0 when there are none
  bool operator==(const SegmentSummary&) const = default;
};

struct RunReport {
  std::size_t samples = 0;
  std::vector<std::string> features;
  std::vector<std::size_t> changepoints;
  std::vector<std::pair<std::size_t, KlPoint>> kl;
  std::vector<SegmentSummary> segments;
  std::vector<ShapleyBatchStats> shap;
  std::vector<std::size_t> profile_segments;
  std::vector<Vector> profiles;  // median attribution per explained segment
  std::vector<std::pair<std::size_t, Verdict>> verdicts;

  bool operator==(const RunReport&) const = default;
};

RunReport aggregate_events(std::span<const PipelineEvent> events, const std::vector<std::string>& features);

struct LoadedStream {
  LabeledStream stream;
  std::vector<SegmentDescriptor> segments;  // ground truth when known
};

// The configured CSV file, or the configured synthetic recipe.
LoadedStream load_stream(const RunConfig& config);

struct ReplayResult {
  RunReport report;
  std::vector<PipelineEvent> events;
  std::vector<ChangepointRecord> records;
  std::vector<SegmentDescriptor> segments;
};

ReplayResult run_replay(const RunConfig& config);
ReplayResult run_replay(const LoadedStream& stream, const PipelineConfig& config);

// Writes events.jsonl, changepoints.csv, kl.csv, shap_stats.csv, shap_iqr.csv,
// shap_profiles.csv and segments.csv into `dir`.
void write_report(const std::string& dir, const RunReport& report, std::span<const PipelineEvent> events,
                  std::span<const ChangepointRecord> records);
std::vector<PipelineEvent> read_events(const std::string& path);

// Feeds a stream into a live pipeline from a producer thread, optionally throttled, with
// a second thread as the pipeline writer.
class LiveRunner {
 public:
  LiveRunner(Pipeline& pipeline, LabeledStream stream, double rate);
  ~LiveRunner();
  void start();
  void stop();
  void join();
  bool done() const { return done_.load(); }

 private:
  void produce();
  void consume();

  Pipeline& pipeline_;
  LabeledStream stream_;
  double rate_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<LabeledSample> queue_;
  bool produced_all_ = false;
  std::atomic<bool> stop_{false};
  std::atomic<bool> done_{false};
  std::thread producer_;
  std::thread consumer_;
};

}  // namespace shiftwatch

#pragma once

// Pipeline event log entries and their JSON form.

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "shiftwatch/ccsa.hpp"
#include "shiftwatch/shap_monitor.hpp"

namespace shiftwatch {

enum class Verdict { pending, healthy, failure };

const char* to_string(Verdict verdict);
Verdict verdict_from_string(const std::string& text);

struct KlPoint {
  double kl = 0.0;
  double statistic = 0.0;
  bool operator==(const KlPoint&) const = default;
};

struct ChangepointDetected {
  std::size_t id = 0;
  std::vector<double> context;  // KL values leading up to the detection
  bool operator==(const ChangepointDetected&) const = default;
};

struct BatchTrained {
  std::size_t batch = 0;
  std::size_t segment = 0;
  std::size_t start = 0;
  std::size_t end = 0;
  LossTerms loss;
  int epochs = 0;
  LabelOrigin origin = LabelOrigin::true_label;
  std::uint64_t model_hash = 0;
  std::optional<std::string> pairing_error;
  bool operator==(const BatchTrained&) const = default;
};

struct BatchPredicted {
  std::size_t batch = 0;
  std::size_t segment = 0;
  std::size_t start = 0;
  std::size_t end = 0;
  std::vector<int> labels;
  std::vector<double> scores;
  std::vector<int> truth;  // empty for unlabeled streams
  std::uint64_t model_hash = 0;
  bool source_model = false;  // scored by the source snapshot
  bool operator==(const BatchPredicted&) const = default;
};

struct BatchExplained {
  std::size_t batch = 0;
  std::size_t segment = 0;
  ShapleyBatchStats stats;
  Matrix phi;  // one row per explained instance
  bool operator==(const BatchExplained& other) const {
    return batch == other.batch && segment == other.segment && stats == other.stats && phi == other.phi;
  }
};

struct VerdictApplied {
  std::size_t id = 0;
  Verdict verdict = Verdict::pending;
  std::string source;
  bool operator==(const VerdictApplied&) const = default;
};

struct AlarmRaised {
  std::size_t id = 0;
  std::string reason;
  bool operator==(const AlarmRaised&) const = default;
};

using EventPayload =
    std::variant<KlPoint, ChangepointDetected, BatchTrained, BatchPredicted, BatchExplained, VerdictApplied, AlarmRaised>;

struct PipelineEvent {
  std::size_t sequence = 0;  // position in the log
  std::size_t index = 0;     // stream index the event refers to
  EventPayload payload;
  bool operator==(const PipelineEvent&) const = default;
};

const char* event_type(const EventPayload& payload);

nlohmann::json to_json(const ShapleyBatchStats& stats);
ShapleyBatchStats stats_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PipelineEvent& event);
PipelineEvent event_from_json(const nlohmann::json& j);

}  // namespace shiftwatch

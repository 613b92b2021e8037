#include "shiftwatch/events.hpp"

#include <cstdio>

namespace shiftwatch {

using nlohmann::json;

const char* to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::pending: return "pending";
    case Verdict::healthy: return "healthy";
    case Verdict::failure: return "failure";
  }
  return "pending";
}

Verdict verdict_from_string(const std::string& text) {
  if (text == "pending") return Verdict::pending;
  if (text == "healthy") return Verdict::healthy;
  if (text == "failure") return Verdict::failure;
  throw InputError("unknown verdict '" + text + "'");
}

namespace {

std::string hex(std::uint64_t value) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::uint64_t from_hex(const std::string& text) { return std::stoull(text, nullptr, 16); }

json loss_json(const LossTerms& t) {
  return {{"total", t.total}, {"classification", t.classification}, {"alignment", t.alignment},
          {"separation", t.separation}};
}

LossTerms loss_from(const json& j) {
  return {j.at("total").get<double>(), j.at("classification").get<double>(), j.at("alignment").get<double>(),
          j.at("separation").get<double>()};
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from(const json& j) {
  const auto rows = static_cast<Index>(j.size());
  const auto cols = rows ? static_cast<Index>(j[0].size()) : Index{0};
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    if (static_cast<Index>(j[static_cast<std::size_t>(i)].size()) != cols) throw InputError("ragged matrix");
    for (Index c = 0; c < cols; ++c) m(i, c) = j[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

struct PayloadJson {
  json operator()(const KlPoint& p) const { return {{"kl", p.kl}, {"statistic", p.statistic}}; }
  json operator()(const ChangepointDetected& p) const { return {{"id", p.id}, {"context", p.context}}; }
  json operator()(const BatchTrained& p) const {
    json j = {{"batch", p.batch},   {"segment", p.segment},
              {"start", p.start},   {"end", p.end},
              {"loss", loss_json(p.loss)}, {"epochs", p.epochs},
              {"origin", p.origin == LabelOrigin::true_label ? "true-label" : "pseudo"},
              {"model_hash", hex(p.model_hash)}};
    j["pairing_error"] = p.pairing_error ? json(*p.pairing_error) : json(nullptr);
    return j;
  }
  json operator()(const BatchPredicted& p) const {
    return {{"batch", p.batch},   {"segment", p.segment}, {"start", p.start},
            {"end", p.end},       {"labels", p.labels},   {"scores", p.scores},
            {"truth", p.truth},   {"model_hash", hex(p.model_hash)}, {"source_model", p.source_model}};
  }
  json operator()(const BatchExplained& p) const {
    return {{"batch", p.batch}, {"segment", p.segment}, {"stats", to_json(p.stats)}, {"phi", matrix_json(p.phi)}};
  }
  json operator()(const VerdictApplied& p) const {
    return {{"id", p.id}, {"verdict", to_string(p.verdict)}, {"source", p.source}};
  }
  json operator()(const AlarmRaised& p) const { return {{"id", p.id}, {"reason", p.reason}}; }
};

}  // namespace

const char* event_type(const EventPayload& payload) {
  static constexpr const char* names[] = {"KlPoint",        "ChangepointDetected", "BatchTrained", "BatchPredicted",
                                          "BatchExplained", "VerdictApplied",      "AlarmRaised"};
  return names[payload.index()];
}

json to_json(const ShapleyBatchStats& stats) {
  json features = json::array();
  for (std::size_t j = 0; j < stats.features.size(); ++j) {
    const auto& f = stats.summary[j];
    features.push_back({{"feature", stats.features[j]},
                        {"min", f.min},
                        {"q1", f.q1},
                        {"median", f.median},
                        {"q3", f.q3},
                        {"max", f.max},
                        {"alarm", j < stats.alarm.size() && stats.alarm[j]}});
  }
  return {{"batch", stats.batch}, {"features", features}};
}

ShapleyBatchStats stats_from_json(const json& j) {
  ShapleyBatchStats s;
  s.batch = j.at("batch").get<std::size_t>();
  for (const auto& f : j.at("features")) {
    s.features.push_back(f.at("feature").get<std::string>());
    s.summary.push_back({f.at("min").get<double>(), f.at("q1").get<double>(), f.at("median").get<double>(),
                         f.at("q3").get<double>(), f.at("max").get<double>()});
    s.alarm.push_back(f.at("alarm").get<bool>());
  }
  return s;
}

json to_json(const PipelineEvent& event) {
  return {{"sequence", event.sequence},
          {"index", event.index},
          {"type", event_type(event.payload)},
          {"payload", std::visit(PayloadJson{}, event.payload)}};
}

PipelineEvent event_from_json(const json& j) {
  PipelineEvent e;
  e.sequence = j.at("sequence").get<std::size_t>();
  e.index = j.at("index").get<std::size_t>();
  const auto type = j.at("type").get<std::string>();
  const json& p = j.at("payload");
  if (type == "KlPoint") {
    e.payload = KlPoint{p.at("kl").get<double>(), p.at("statistic").get<double>()};
  } else if (type == "ChangepointDetected") {
    e.payload = ChangepointDetected{p.at("id").get<std::size_t>(), p.at("context").get<std::vector<double>>()};
  } else if (type == "BatchTrained") {
    BatchTrained b;
    b.batch = p.at("batch").get<std::size_t>();
    b.segment = p.at("segment").get<std::size_t>();
    b.start = p.at("start").get<std::size_t>();
    b.end = p.at("end").get<std::size_t>();
    b.loss = loss_from(p.at("loss"));
    b.epochs = p.at("epochs").get<int>();
    b.origin = p.at("origin").get<std::string>() == "pseudo" ? LabelOrigin::pseudo : LabelOrigin::true_label;
    b.model_hash = from_hex(p.at("model_hash").get<std::string>());
    if (!p.at("pairing_error").is_null()) b.pairing_error = p.at("pairing_error").get<std::string>();
    e.payload = std::move(b);
  } else if (type == "BatchPredicted") {
    BatchPredicted b;
    b.batch = p.at("batch").get<std::size_t>();
    b.segment = p.at("segment").get<std::size_t>();
    b.start = p.at("start").get<std::size_t>();
    b.end = p.at("end").get<std::size_t>();
    b.labels = p.at("labels").get<std::vector<int>>();
    b.scores = p.at("scores").get<std::vector<double>>();
    b.truth = p.at("truth").get<std::vector<int>>();
    b.model_hash = from_hex(p.at("model_hash").get<std::string>());
    b.source_model = p.at("source_model").get<bool>();
    e.payload = std::move(b);
  } else if (type == "BatchExplained") {
    e.payload = BatchExplained{p.at("batch").get<std::size_t>(), p.at("segment").get<std::size_t>(),
                               stats_from_json(p.at("stats")), matrix_from(p.at("phi"))};
  } else if (type == "VerdictApplied") {
    e.payload = VerdictApplied{p.at("id").get<std::size_t>(), verdict_from_string(p.at("verdict").get<std::string>()),
                               p.at("source").get<std::string>()};
  } else if (type == "AlarmRaised") {
    e.payload = AlarmRaised{p.at("id").get<std::size_t>(), p.at("reason").get<std::string>()};
  } else {
    throw InputError("unknown event type '" + type + "'");
  }
  return e;
}

}  // namespace shiftwatch

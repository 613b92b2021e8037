#include "shiftwatch/pipeline.hpp"

#include <algorithm>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>

#include "shiftwatch/datagen.hpp"

namespace shiftwatch {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

const char* to_string(PipelineMode mode) { return mode == PipelineMode::replay ? "replay" : "live"; }

PipelineConfig pipeline_config(const RunConfig& config, std::size_t stream_length) {
  config.validate();
  PipelineConfig p;
  p.monitor = monitor_config(config, stream_length);
  p.ccsa = ccsa_config(config);
  p.explainer = config.explainer;
  p.permutations = config.permutations;
  p.explainer_seed = config.explainer_seed;
  p.shap_features = config.shap_features;
  p.shap_ph = {config.shap_ph_delta, config.shap_ph_lambda, config.shap_ph_min_instances, PhDirection::increase};
  p.shap_calibration = {config.shap_delta_sigmas, config.shap_lambda_sigmas};
  p.shap_calibration_batches = config.shap_calibration_batches;
  p.kl_context = config.kl_context;
  return p;
}

Pipeline::Pipeline(FeatureSchema schema, PipelineConfig config, PipelineMode mode, bool labeled)
    : schema_(std::move(schema)),
      config_(std::move(config)),
      mode_(mode),
      labeled_(labeled),
      shap_features_(config_.shap_features.empty() ? schema_.names() : config_.shap_features),
      warmup_(config_.monitor.min_ref_size),
      monitor_(schema_, config_.monitor) {
  config_.ccsa.validate();
  for (const auto& f : shap_features_)
    if (!schema_.contains(f)) throw SchemaError("unknown explanation feature '" + f + "'");
  const std::size_t calibration = config_.shap_calibration_batches == 0
                                      ? std::numeric_limits<std::size_t>::max()
                                      : config_.shap_calibration_batches;
  for (const auto& f : shap_features_) series_.emplace_back(f, config_.shap_ph, calibration, config_.shap_calibration);
  publish();
}

void Pipeline::emit(std::size_t index, EventPayload payload) {
  {
    std::unique_lock lock(events_mutex_);
    events_.push_back({events_.size(), index, std::move(payload)});
  }
  events_cv_.notify_all();
}

void Pipeline::publish() {
  auto s = std::make_shared<PipelineState>();
  s->mode = mode_;
  s->segment = segment_;
  s->samples = samples_;
  s->monitor = monitor_.snapshot();
  if (session_) s->session = session_->snapshot();
  s->alarm = alarm_;
  s->cursor = event_count();
  s->backlog = backlog_.load();
  {
    std::lock_guard lock(records_mutex_);
    s->pending_verdicts = commands_.size();
  }
  s->finished = finished_;
  std::lock_guard lock(state_mutex_);
  state_ = std::move(s);
}

std::shared_ptr<const PipelineState> Pipeline::state() const {
  std::lock_guard lock(state_mutex_);
  return state_;
}

std::size_t Pipeline::event_count() const {
  std::shared_lock lock(events_mutex_);
  return events_.size();
}

std::vector<PipelineEvent> Pipeline::events_since(std::size_t cursor) const {
  std::shared_lock lock(events_mutex_);
  if (cursor > events_.size())
    throw InputError("event cursor " + std::to_string(cursor) + " is past the end of the log (" +
                     std::to_string(events_.size()) + ")");
  return {events_.begin() + static_cast<std::ptrdiff_t>(cursor), events_.end()};
}

bool Pipeline::wait_for_events(std::size_t cursor, std::chrono::milliseconds timeout) const {
  std::shared_lock lock(events_mutex_);
  return events_cv_.wait_for(lock, timeout, [&] { return events_.size() > cursor || finished_; });
}

std::vector<ChangepointRecord> Pipeline::changepoints() const {
  std::lock_guard lock(records_mutex_);
  return records_;
}

std::optional<ChangepointRecord> Pipeline::changepoint(std::size_t id) const {
  std::lock_guard lock(records_mutex_);
  if (id >= records_.size()) return std::nullopt;
  return records_[id];
}

ChangepointRecord Pipeline::submit_verdict(std::size_t id, Verdict verdict, const std::string& source) {
  if (verdict == Verdict::pending) throw InputError("a verdict must be healthy or failure");
  ChangepointRecord out;
  {
    std::lock_guard lock(records_mutex_);
    if (id >= records_.size()) throw NotFoundError("no changepoint with id " + std::to_string(id));
    auto& r = records_[id];
    if (r.verdict != Verdict::pending)
      throw ConflictError("changepoint " + std::to_string(id) + " already has verdict " + to_string(r.verdict));
    r.verdict = verdict;
    r.verdict_time = utc_now();
    r.verdict_source = source;
    commands_.push_back({id, verdict, source});
    out = r;
  }
  return out;
}

void Pipeline::apply_commands(std::size_t index) {
  std::deque<Command> pending;
  {
    std::lock_guard lock(records_mutex_);
    pending.swap(commands_);
  }
  for (const auto& c : pending) {
    emit(index, VerdictApplied{c.id, c.verdict, c.source});
    if (c.verdict == Verdict::failure) {
      // Only the segment opened by this changepoint is still adapting.
      if (session_ && c.id + 1 == segment_) session_->freeze();
      alarm_ = true;
      emit(index, AlarmRaised{c.id, "failure verdict on changepoint " + std::to_string(c.id)});
    } else {
      alarm_ = false;
    }
    std::lock_guard lock(records_mutex_);
    records_[c.id].applied = true;
  }
}

void Pipeline::start_session() {
  session_.emplace(config_.ccsa, source_, source_.back().sample.index + 1);
  source_.clear();
  source_.shrink_to_fit();
}

void Pipeline::flush_batch(bool full) {
  if (batch_.empty()) return;
  const std::size_t start = batch_.front().sample.index;
  const std::size_t last = batch_.back().sample.index;
  apply_commands(last);
  if (!session_) {
    batch_.clear();
    return;
  }
  const std::size_t batch_no = next_batch_++;
  std::vector<Sample> samples;
  samples.reserve(batch_.size());
  for (const auto& s : batch_) samples.push_back(s.sample);

  const bool adapting = segment_ > 0 && !session_->frozen();
  const Prediction pred = adapting ? session_->predict_batch(samples) : session_->classify(samples);
  BatchPredicted bp;
  bp.batch = batch_no;
  bp.segment = segment_;
  bp.start = start;
  bp.end = last + 1;
  bp.labels = pred.labels;
  bp.scores.assign(pred.scores.data(), pred.scores.data() + pred.scores.size());
  if (labeled_)
    for (const auto& s : batch_) bp.truth.push_back(s.label);
  bp.model_hash = pred.model_hash;
  bp.source_model = pred.model_hash == session_->source_model().hash();
  {
    std::unique_lock lock(signals_mutex_);
    for (std::size_t i = 0; i < batch_.size(); ++i) {
      const auto pos = std::lower_bound(signal_index_.begin(), signal_index_.end(), batch_[i].sample.index);
      signal_flags_[static_cast<std::size_t>(pos - signal_index_.begin())] = pred.labels[i];
    }
  }
  emit(last, std::move(bp));

  if (adapting && full && labeled_) {
    std::vector<LabeledSample> train = batch_;
    LabelOrigin origin = LabelOrigin::true_label;
    if (config_.ccsa.label_source == LabelSource::pseudo_labels) {
      origin = LabelOrigin::pseudo;
      for (std::size_t i = 0; i < train.size(); ++i) train[i].label = pred.labels[i];
    }
    const TrainMetrics metrics = session_->train_on_batch(train, origin);
    emit(last, BatchTrained{batch_no, segment_, start, last + 1, metrics.final_loss, metrics.epochs, origin,
                            session_->model().hash(), metrics.pairing_error});

    // Background and explained instances are both the training batch.
    const CcsaModel& model = session_->model();
    const Matrix rows = stack_rows(std::span<const Sample>(samples));
    ShapleyExplainer explainer([&model](const Matrix& x) { return model.score(x); }, rows, config_.explainer,
                               config_.permutations, mix(config_.explainer_seed, batch_no));
    const auto attributions = explainer.explain_rows(rows);
    Matrix phi(rows.rows(), static_cast<Index>(shap_features_.size()));
    const auto columns = schema_.indices_of(shap_features_);
    for (Index i = 0; i < rows.rows(); ++i)
      for (std::size_t j = 0; j < columns.size(); ++j)
        phi(i, static_cast<Index>(j)) = attributions[static_cast<std::size_t>(i)].phi(columns[j]);
    ShapleyBatchStats stats = summarize_batch(phi, batch_no, shap_features_);
    for (std::size_t j = 0; j < series_.size(); ++j)
      if (median_drift(series_[j], stats)) stats.alarm[j] = true;
    emit(last, BatchExplained{batch_no, segment_, std::move(stats), std::move(phi)});
  }
  batch_.clear();
}

void Pipeline::push(const LabeledSample& sample) {
  if (finished_) throw StateError("pipeline already finished");
  if (last_index_ && sample.sample.index <= *last_index_)
    throw InputError("sample " + std::to_string(sample.sample.index) + " arrives out of order");
  validate_sample(schema_, sample.sample);
  last_index_ = sample.sample.index;
  ++samples_;
  {
    std::unique_lock lock(signals_mutex_);
    signal_index_.push_back(sample.sample.index);
    signal_values_.insert(signal_values_.end(), sample.sample.values.data(),
                          sample.sample.values.data() + sample.sample.values.size());
    signal_labels_.push_back(labeled_ ? sample.label : 0);
    signal_flags_.push_back(-1);
  }

  const MonitorStep step = monitor_.step(sample.sample);
  if (step.changepoint) {
    flush_batch(false);
    if (segment_ == 1 && config_.shap_calibration_batches == 0)
      for (auto& s : series_) s.finish_calibration();
    ++segment_;
    if (session_) session_->restart(sample.sample.index);
  }
  if (step.active) {
    emit(sample.sample.index, KlPoint{step.kl, step.statistic});
    recent_kl_.push_back(step.kl);
    while (recent_kl_.size() > config_.kl_context) recent_kl_.pop_front();
  }
  if (step.changepoint) {
    ChangepointRecord r;
    {
      std::lock_guard lock(records_mutex_);
      r.id = records_.size();
      r.index = *step.changepoint;
      r.context.assign(recent_kl_.begin(), recent_kl_.end());
      records_.push_back(r);
    }
    emit(sample.sample.index, ChangepointDetected{r.id, r.context});
  }

  if (!session_) {
    if (labeled_) {
      source_.push_back(sample);
      if (source_.size() == warmup_) start_session();
    }
  } else {
    batch_.push_back(sample);
    if (batch_.size() == config_.ccsa.batch_size) flush_batch(true);
  }
  publish();
}

void Pipeline::finish() {
  if (finished_) return;
  flush_batch(false);
  if (last_index_) apply_commands(*last_index_);
  {
    std::unique_lock lock(events_mutex_);
    finished_ = true;
  }
  events_cv_.notify_all();
  publish();
}

std::vector<SignalPoint> Pipeline::signals(const std::string& feature, std::size_t from, std::size_t to) const {
  const auto j = schema_.index_of(feature);
  const std::size_t n = schema_.dimension();
  std::shared_lock lock(signals_mutex_);
  std::vector<SignalPoint> out;
  auto it = std::lower_bound(signal_index_.begin(), signal_index_.end(), from);
  for (; it != signal_index_.end() && *it < to; ++it) {
    const auto row = static_cast<std::size_t>(it - signal_index_.begin());
    out.push_back({*it, signal_values_[row * n + j], signal_labels_[row], signal_flags_[row]});
  }
  return out;
}

// Report

double SegmentSummary::flagged_rate() const {
  return predicted ? static_cast<double>(flagged) / static_cast<double>(predicted) : 0.0;
}

double SegmentSummary::false_positive_rate() const {
  const std::size_t negatives = predicted - positives;
  return negatives ? static_cast<double>(false_positives) / static_cast<double>(negatives) : 0.0;
}

RunReport aggregate_events(std::span<const PipelineEvent> events, const std::vector<std::string>& features) {
  RunReport r;
  r.features = features;
  std::map<std::size_t, SegmentSummary> segments;
  std::map<std::size_t, std::vector<const Matrix*>> phi_by_segment;
  auto segment = [&](std::size_t id) -> SegmentSummary& {
    auto& s = segments[id];
    s.segment = id;
    return s;
  };
  for (const auto& e : events) {
    r.samples = std::max(r.samples, e.index + 1);
    if (const auto* p = std::get_if<KlPoint>(&e.payload)) {
      r.kl.emplace_back(e.index, *p);
    } else if (std::get_if<ChangepointDetected>(&e.payload)) {
      r.changepoints.push_back(e.index);
    } else if (const auto* p = std::get_if<BatchPredicted>(&e.payload)) {
      auto& s = segment(p->segment);
      if (s.predicted == 0) s.start = p->start;
      s.end = p->end;
      s.predicted += p->labels.size();
      for (std::size_t i = 0; i < p->labels.size(); ++i) {
        s.flagged += p->labels[i] != 0;
        if (i < p->truth.size()) {
          s.positives += p->truth[i] != 0;
          s.true_positives += p->labels[i] != 0 && p->truth[i] != 0;
          s.false_positives += p->labels[i] != 0 && p->truth[i] == 0;
        }
      }
    } else if (const auto* p = std::get_if<BatchTrained>(&e.payload)) {
      ++segment(p->segment).trained_batches;
    } else if (const auto* p = std::get_if<BatchExplained>(&e.payload)) {
      ++segment(p->segment).explained_batches;
      r.shap.push_back(p->stats);
      phi_by_segment[p->segment].push_back(&p->phi);
    } else if (const auto* p = std::get_if<VerdictApplied>(&e.payload)) {
      r.verdicts.emplace_back(p->id, p->verdict);
    }
  }
  for (auto& [id, s] : segments) r.segments.push_back(s);
  for (const auto& [id, list] : phi_by_segment) {
    Index rows = 0;
    for (const Matrix* m : list) rows += m->rows();
    Matrix all(rows, list.front()->cols());
    Index at = 0;
    for (const Matrix* m : list) {
      all.middleRows(at, m->rows()) = *m;
      at += m->rows();
    }
    r.profile_segments.push_back(id);
    r.profiles.push_back(segment_median_profile(std::span<const Matrix>(&all, 1)).front());
  }
  return r;
}

LoadedStream load_stream(const RunConfig& config) {
  LoadedStream out;
  if (!config.stream.empty()) {
    out.stream = load_csv(config.stream);
    if (out.stream.size() == 10000) out.segments = paper_segments();
    return out;
  }
  const ProductOptions options{config.noise_fraction, config.shift_scale};
  const StreamRecipe recipe = config.recipe == "stationary"
                                  ? stationary_recipe(config.seed, config.recipe_length, options)
                                  : paper_recipe(config.seed, options);
  auto generated = generate_stream(recipe);
  out.stream = std::move(generated.stream);
  out.segments = std::move(generated.segments);
  return out;
}

ReplayResult run_replay(const LoadedStream& stream, const PipelineConfig& config) {
  Pipeline pipeline(stream.stream.schema, config, PipelineMode::replay, stream.stream.labeled);
  for (const auto& s : stream.stream.samples) pipeline.push(s);
  pipeline.finish();
  ReplayResult out;
  out.events = pipeline.events_since(0);
  out.report = aggregate_events(out.events, pipeline.shap_features());
  out.records = pipeline.changepoints();
  out.segments = stream.segments;
  return out;
}

ReplayResult run_replay(const RunConfig& config) {
  const LoadedStream stream = load_stream(config);
  return run_replay(stream, pipeline_config(config, stream.stream.size()));
}

void write_report(const std::string& dir, const RunReport& report, std::span<const PipelineEvent> events,
                  std::span<const ChangepointRecord> records) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream f(fs::path(dir) / name);
    if (!f) throw InputError("cannot write " + (fs::path(dir) / name).string());
    return f;
  };
  {
    auto f = open("events.jsonl");
    for (const auto& e : events) f << to_json(e).dump() << '\n';
  }
  {
    auto f = open("changepoints.csv");
    f << "id,index,verdict\n";
    for (const auto& c : records) f << c.id << ',' << c.index << ',' << to_string(c.verdict) << '\n';
  }
  {
    auto f = open("kl.csv");
    f << "index,kl,statistic,changepoint\n";
    std::size_t next = 0;
    for (const auto& [index, p] : report.kl) {
      const bool cp = next < report.changepoints.size() && report.changepoints[next] == index;
      if (cp) ++next;
      f << index << ',' << format_double(p.kl) << ',' << format_double(p.statistic) << ',' << (cp ? 1 : 0) << '\n';
    }
  }
  {
    auto f = open("shap_stats.csv");
    write_stats_csv(f, report.shap);
  }
  {
    auto f = open("shap_iqr.csv");
    write_iqr_csv(f, report.shap);
  }
  {
    auto f = open("shap_profiles.csv");
    f << "segment,feature,median\n";
    for (std::size_t s = 0; s < report.profiles.size(); ++s)
      for (std::size_t j = 0; j < report.features.size(); ++j)
        f << report.profile_segments[s] << ',' << report.features[j] << ','
          << format_double(report.profiles[s](static_cast<Index>(j))) << '\n';
  }
  {
    auto f = open("segments.csv");
    f << "segment,start,end,predicted,flagged,flagged_rate,positives,true_positives,false_positives,"
         "false_positive_rate,trained_batches\n";
    for (const auto& s : report.segments)
      f << s.segment << ',' << s.start << ',' << s.end << ',' << s.predicted << ',' << s.flagged << ','
        << format_double(s.flagged_rate()) << ',' << s.positives << ',' << s.true_positives << ','
        << s.false_positives << ',' << format_double(s.false_positive_rate()) << ',' << s.trained_batches << '\n';
  }
}

std::vector<PipelineEvent> read_events(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::vector<PipelineEvent> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(event_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw InputError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// Live mode

LiveRunner::LiveRunner(Pipeline& pipeline, LabeledStream stream, double rate)
    : pipeline_(pipeline), stream_(std::move(stream)), rate_(rate) {}

LiveRunner::~LiveRunner() {
  stop();
  join();
}

void LiveRunner::start() {
  producer_ = std::thread([this] { produce(); });
  consumer_ = std::thread([this] { consume(); });
}

void LiveRunner::stop() {
  stop_ = true;
  cv_.notify_all();
}

void LiveRunner::join() {
  if (producer_.joinable()) producer_.join();
  if (consumer_.joinable()) consumer_.join();
}

void LiveRunner::produce() {
  const auto begin = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < stream_.samples.size() && !stop_; ++i) {
    if (rate_ > 0.0) std::this_thread::sleep_until(begin + std::chrono::duration<double>(static_cast<double>(i) / rate_));
    std::lock_guard lock(mutex_);
    queue_.push_back(stream_.samples[i]);
    pipeline_.set_backlog(queue_.size());
    cv_.notify_one();
  }
  std::lock_guard lock(mutex_);
  produced_all_ = true;
  cv_.notify_one();
}

void LiveRunner::consume() {
  for (;;) {
    LabeledSample next;
    {
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [&] { return !queue_.empty() || produced_all_ || stop_; });
      if (stop_ || (queue_.empty() && produced_all_)) break;
      next = std::move(queue_.front());
      queue_.pop_front();
      pipeline_.set_backlog(queue_.size());
    }
    pipeline_.push(next);
  }
  if (!stop_) pipeline_.finish();
  done_ = true;
}

}  // namespace shiftwatch

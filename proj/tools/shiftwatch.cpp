// shiftwatch command-line front end.

#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <thread>

#include <CLI11.hpp>

#include "shiftwatch/baselines.hpp"
#include "shiftwatch/datagen.hpp"
#include "shiftwatch/pipeline.hpp"
#include "shiftwatch/service.hpp"

using namespace shiftwatch;
namespace fs = std::filesystem;

namespace {

std::atomic<bool> interrupted{false};

struct Options {
  std::string config;
  std::map<std::string, std::string> flags;  // setting key -> value
  std::vector<std::string> sets;             // extra key=value pairs
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "key = value config file");
  auto flag = [&](const char* name, const char* key, const char* help) {
    cmd->add_option_function<std::string>(name, [&o, key](const std::string& v) { o.flags[key] = v; }, help);
  };
  flag("--stream", "stream", "CSV stream (default: synthetic recipe)");
  flag("--recipe", "recipe", "synthetic recipe: paper | stationary");
  flag("--seed", "seed", "generator seed");
  flag("--batch-size", "batch_size", "adaptation batch size");
  flag("--knn", "knn", "k for the nearest-neighbour KL estimate");
  flag("--ph-delta", "ph_delta", "Page-Hinkley delta (lower bound when calibrating)");
  flag("--ph-lambda", "ph_lambda", "Page-Hinkley lambda (used when ph_calibrate = false)");
  flag("--warmup", "warmup", "warm-up sample count (overrides warmup_fraction)");
  flag("--features", "features", "comma-separated monitor features");
  flag("--out", "out", "output path");
  flag("--listen", "listen", "host:port for serve");
  cmd->add_option("--set", o.sets, "extra config setting key=value (repeatable)");
}

RunConfig resolve(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
  for (const auto& [k, v] : o.flags) apply_setting(c, k, v);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_setting(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  c.validate();
  return c;
}

int cmd_generate(const RunConfig& c) {
  if (!c.stream.empty()) throw ConfigError("generate writes a synthetic recipe; drop --stream");
  const LoadedStream s = load_stream(c);
  const std::string path = c.out == "run" ? "stream.csv" : c.out;
  write_stream_csv(path, s.stream);
  std::ofstream seg(path + ".segments.csv");
  seg << "start,end,kind\n";
  for (const auto& d : s.segments) seg << d.start << ',' << d.end << ',' << to_string(d.kind) << '\n';
  std::cout << "wrote " << s.stream.size() << " samples to " << path << "\n";
  return 0;
}

int cmd_detect(const RunConfig& c) {
  const LoadedStream s = load_stream(c);
  ChangepointMonitor monitor(s.stream.schema, monitor_config(c, s.stream.size()));
  std::ofstream kl;
  if (c.out != "run") {
    kl.open(c.out);
    if (!kl) throw InputError("cannot write " + c.out);
    kl << "index,kl,statistic,changepoint\n";
  }
  for (const auto& x : s.stream.samples) {
    const MonitorStep step = monitor.step(x.sample);
    if (kl.is_open() && step.active)
      kl << x.sample.index << ',' << format_double(step.kl) << ',' << format_double(step.statistic) << ','
         << (step.changepoint ? 1 : 0) << '\n';
  }
  std::cout << "changepoints:";
  for (auto i : monitor.changepoints()) std::cout << ' ' << i;
  std::cout << "\n";
  return 0;
}

void print_summary(const RunReport& r) {
  std::cout << "samples " << r.samples << ", changepoints:";
  for (auto i : r.changepoints) std::cout << ' ' << i;
  std::cout << "\nsegment\tstart\tend\tflagged\tfpr\ttrained\n";
  for (const auto& s : r.segments)
    std::cout << s.segment << "\t" << s.start << "\t" << s.end << "\t" << format_double(s.flagged_rate()) << "\t"
              << format_double(s.false_positive_rate()) << "\t" << s.trained_batches << "\n";
}

int cmd_replay(const RunConfig& c) {
  const ReplayResult r = run_replay(c);
  write_report(c.out, r.report, r.events, r.records);
  std::ofstream(fs::path(c.out) / "config.txt") << to_text(c);
  print_summary(r.report);
  std::cout << "report written to " << c.out << "\n";
  return 0;
}

int cmd_serve(const RunConfig& c) {
  const LoadedStream s = load_stream(c);
  Pipeline pipeline(s.stream.schema, pipeline_config(c, s.stream.size()), PipelineMode::live, s.stream.labeled);
  Service service(pipeline);
  const auto [host, port] = parse_listen(c.listen);
  const int bound = service.start(host, port);
  std::cout << "serving on http://" << host << ':' << bound << "/api/state" << std::endl;
  LiveRunner runner(pipeline, s.stream, c.rate);
  runner.start();
  std::signal(SIGINT, [](int) { interrupted = true; });
  std::signal(SIGTERM, [](int) { interrupted = true; });
  bool reported = false;
  while (!interrupted) {
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
    if (runner.done() && !reported) {
      std::cout << "stream finished: " << pipeline.changepoints().size() << " changepoints, "
                << pipeline.event_count() << " events" << std::endl;
      reported = true;
    }
  }
  runner.stop();
  runner.join();
  service.stop();
  return 0;
}

int cmd_bench(const RunConfig& c) {
  const LoadedStream s = load_stream(c);
  if (!s.stream.labeled) throw InputError("baseline evaluation needs a labeled stream");
  std::vector<SegmentDescriptor> segments = s.segments;
  if (segments.empty()) segments.push_back({0, s.stream.size(), SegmentKind::source_product, {}});
  const std::size_t train_end = segments.front().kind == SegmentKind::source_product
                                    ? segments.front().end
                                    : warmup_size(c, s.stream.size());
  const Matrix train = stack_rows(std::span<const LabeledSample>(s.stream.samples.data(), train_end));
  std::ofstream file;
  if (c.out != "run") file.open(c.out);
  std::ostream& out = file.is_open() ? file : std::cout;
  bool header = true;
  for (const char* name : {"if", "lof", "ae"}) {
    auto detector = make_detector(name, c.contamination, c.seed);
    detector->fit(train);
    write_evaluation_csv(out, name, evaluate_on_stream(*detector, s.stream, segments), header);
    header = false;
  }
  return 0;
}

int cmd_report(const std::string& dir, const std::string& out) {
  const auto events = read_events((fs::path(dir) / "events.jsonl").string());
  std::vector<std::string> features;
  for (const auto& e : events)
    if (const auto* b = std::get_if<BatchExplained>(&e.payload)) {
      features = b->stats.features;
      break;
    }
  std::vector<ChangepointRecord> records;
  for (const auto& e : events)
    if (const auto* d = std::get_if<ChangepointDetected>(&e.payload)) {
      ChangepointRecord r;
      r.id = d->id;
      r.index = e.index;
      r.context = d->context;
      records.push_back(r);
    }
  for (const auto& e : events)
    if (const auto* v = std::get_if<VerdictApplied>(&e.payload); v && v->id < records.size()) {
      records[v->id].verdict = v->verdict;
      records[v->id].verdict_source = v->source;
      records[v->id].applied = true;
    }
  const RunReport report = aggregate_events(events, features);
  const std::string target = out.empty() ? dir : out;
  write_report(target, report, events, records);
  print_summary(report);
  std::cout << "figure data written to " << target << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Changepoint-aware streaming anomaly detection with explanation monitoring"};
  app.require_subcommand(1);

  Options o;
  auto* generate = app.add_subcommand("generate", "write a synthetic stream as CSV");
  auto* detect = app.add_subcommand("detect", "run the changepoint monitor and print changepoints");
  auto* replay = app.add_subcommand("replay", "run the full pipeline and write a report directory");
  auto* serve = app.add_subcommand("serve", "run the pipeline live behind the HTTP API");
  auto* bench = app.add_subcommand("bench-baselines", "evaluate IF, LOF and AE trained on the source product");
  auto* report = app.add_subcommand("report", "rebuild figure CSVs from a run directory");
  for (auto* cmd : {generate, detect, replay, serve, bench}) add_common(cmd, o);
  std::string run_dir, report_out;
  report->add_option("run", run_dir, "run directory holding events.jsonl")->required();
  report->add_option("--out", report_out, "output directory (default: the run directory)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*report) return cmd_report(run_dir, report_out);
    const RunConfig c = resolve(o);
    if (*generate) return cmd_generate(c);
    if (*detect) return cmd_detect(c);
    if (*replay) return cmd_replay(c);
    if (*serve) return cmd_serve(c);
    if (*bench) return cmd_bench(c);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

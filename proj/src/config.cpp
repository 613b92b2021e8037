#include "shiftwatch/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "shiftwatch/datagen.hpp"

namespace shiftwatch {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename T>
T number(const std::string& key, const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ConfigError("bad value '" + text + "' for " + key);
  return value;
}

bool boolean(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("bad value '" + text + "' for " + key);
}

std::vector<std::string> list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (auto t = trim(item); !t.empty()) out.push_back(t);
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ",") + s;
  return out;
}

const char* normalizer_name(KlNormalizer n) { return n == KlNormalizer::set_size ? "set-size" : "last-index"; }

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SW_TEXT(name)                                                                         \
  {#name, {[](RunConfig& c, const std::string&, const std::string& v) { c.name = v; },      \
           [](const RunConfig& c) { return c.name; }}}
#define SW_NUMBER(name)                                                                            \
  {#name, {[](RunConfig& c, const std::string& k, const std::string& v) {                          \
             c.name = number<decltype(c.name)>(k, v);                                              \
           },                                                                                      \
           [](const RunConfig& c) {                                                                \
             if constexpr (std::is_floating_point_v<decltype(c.name)>) return format_double(c.name); \
             else return std::to_string(c.name);                                                   \
           }}}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      SW_TEXT(stream),
      SW_TEXT(recipe),
      SW_NUMBER(recipe_length),
      SW_NUMBER(noise_fraction),
      SW_NUMBER(shift_scale),
      SW_NUMBER(seed),
      {"features", {[](RunConfig& c, const std::string&, const std::string& v) { c.features = list(v); },
                    [](const RunConfig& c) { return join(c.features); }}},
      SW_NUMBER(warmup_fraction),
      SW_NUMBER(warmup),
      SW_NUMBER(knn),
      {"kl_form", {[](RunConfig& c, const std::string&, const std::string& v) { c.kl_form = kl_form_from_string(v); },
                   [](const RunConfig& c) { return std::string(to_string(c.kl_form)); }}},
      {"kl_normalizer",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "set-size") c.kl_normalizer = KlNormalizer::set_size;
          else if (v == "last-index") c.kl_normalizer = KlNormalizer::last_index;
          else throw ConfigError("bad value '" + v + "' for " + k);
        },
        [](const RunConfig& c) { return std::string(normalizer_name(c.kl_normalizer)); }}},
      SW_NUMBER(ph_delta),
      SW_NUMBER(ph_lambda),
      SW_NUMBER(ph_min_instances),
      {"ph_calibrate", {[](RunConfig& c, const std::string& k, const std::string& v) { c.ph_calibrate = boolean(k, v); },
                        [](const RunConfig& c) { return std::string(c.ph_calibrate ? "true" : "false"); }}},
      SW_NUMBER(ph_delta_sigmas),
      SW_NUMBER(ph_lambda_sigmas),
      SW_NUMBER(post_change_min_ref),
      SW_NUMBER(approx_window),
      SW_NUMBER(kl_context),
      SW_NUMBER(batch_size),
      SW_NUMBER(epochs),
      SW_NUMBER(alpha),
      SW_NUMBER(margin),
      SW_NUMBER(threshold),
      SW_NUMBER(pairs),
      SW_NUMBER(learning_rate),
      SW_NUMBER(pretrain_epochs),
      {"encoder_hidden",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.encoder_hidden.clear();
          for (const auto& item : list(v)) c.encoder_hidden.push_back(number<int>(k, item));
        },
        [](const RunConfig& c) {
          std::vector<std::string> items;
          for (int h : c.encoder_hidden) items.push_back(std::to_string(h));
          return join(items);
        }}},
      SW_NUMBER(embedding),
      {"label_source",
       {[](RunConfig& c, const std::string&, const std::string& v) { c.label_source = label_source_from_string(v); },
        [](const RunConfig& c) { return std::string(to_string(c.label_source)); }}},
      SW_NUMBER(model_seed),
      {"explainer",
       {[](RunConfig& c, const std::string&, const std::string& v) { c.explainer = shapley_mode_from_string(v); },
        [](const RunConfig& c) { return std::string(to_string(c.explainer)); }}},
      SW_NUMBER(permutations),
      SW_NUMBER(explainer_seed),
      {"shap_features", {[](RunConfig& c, const std::string&, const std::string& v) { c.shap_features = list(v); },
                         [](const RunConfig& c) { return join(c.shap_features); }}},
      SW_NUMBER(shap_ph_delta),
      SW_NUMBER(shap_ph_lambda),
      SW_NUMBER(shap_ph_min_instances),
      SW_NUMBER(shap_delta_sigmas),
      SW_NUMBER(shap_lambda_sigmas),
      SW_NUMBER(shap_calibration_batches),
      SW_NUMBER(contamination),
      SW_TEXT(listen),
      SW_NUMBER(rate),
      SW_TEXT(out),
  };
  return table;
}

#undef SW_TEXT
#undef SW_NUMBER

}  // namespace

void RunConfig::validate() const {
  if (stream.empty() && recipe != "paper" && recipe != "stationary")
    throw ConfigError("unknown recipe '" + recipe + "'");
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) throw ConfigError("warmup_fraction must be in (0, 1)");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(rate >= 0.0)) throw ConfigError("rate must be non-negative");
  if (!(shap_ph_lambda > 0.0) || shap_ph_delta < 0.0) throw ConfigError("invalid median-drift thresholds");
  if (!(contamination >= 0.0 && contamination < 1.0)) throw ConfigError("contamination must be in [0, 1)");
  ccsa_config(*this).validate();
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown setting '" + key + "'");
  it->second.set(config, key, trim(value));
}

RunConfig parse_config(std::istream& in) {
  RunConfig config;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    try {
      apply_setting(config, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return parse_config(in);
}

std::string to_text(const RunConfig& config) {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(config) + "\n";
  return out;
}

std::size_t warmup_size(const RunConfig& config, std::size_t stream_length) {
  if (config.warmup > 0) return config.warmup;
  return std::max<std::size_t>(
      200, static_cast<std::size_t>(config.warmup_fraction * static_cast<double>(stream_length)));
}

MonitorConfig monitor_config(const RunConfig& config, std::size_t stream_length) {
  MonitorConfig m;
  m.features = config.features.empty() ? current_torque_features() : config.features;
  m.kl = {config.knn, config.kl_form, 1e-12, config.kl_normalizer};
  m.ph = {config.ph_delta, config.ph_lambda, config.ph_min_instances, PhDirection::increase};
  m.calibrate = config.ph_calibrate;
  m.calibration = {config.ph_delta_sigmas, config.ph_lambda_sigmas};
  m.min_ref_size = warmup_size(config, stream_length);
  m.post_change_min_ref = config.post_change_min_ref;
  m.approx_window = config.approx_window;
  return m;
}

CcsaConfig ccsa_config(const RunConfig& config) {
  CcsaConfig c;
  c.encoder_hidden = config.encoder_hidden;
  c.embedding_dim = config.embedding;
  c.alpha = config.alpha;
  c.margin = config.margin;
  c.threshold = config.threshold;
  c.epochs = config.epochs;
  c.pairs_per_kind = config.pairs;
  c.optimizer.learning_rate = config.learning_rate;
  c.pretrain_epochs = config.pretrain_epochs;
  c.batch_size = config.batch_size;
  c.label_source = config.label_source;
  c.seed = config.model_seed;
  return c;
}

}  // namespace shiftwatch

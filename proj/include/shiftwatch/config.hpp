#pragma once

// Run configuration: a `key = value` text file (one setting per line, `#` starts a
// comment) whose values can be overridden from the command line.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "shiftwatch/ccsa.hpp"
#include "shiftwatch/changepoint.hpp"
#include "shiftwatch/shapley.hpp"

namespace shiftwatch {

struct RunConfig {
  // stream source: a CSV file, or a synthetic recipe when `stream` is empty
  std::string stream;
  std::string recipe = "paper";  // paper | stationary
  std::size_t recipe_length = 10000;
  double noise_fraction = 0.01;
  double shift_scale = 0.1;
  std::uint64_t seed = 1;

  // changepoint monitor
  std::vector<std::string> features;  // empty = current and torque of every stand
  double warmup_fraction = 0.4;
  std::size_t warmup = 0;  // absolute count, overrides the fraction when > 0
  int knn = 1;
  KlForm kl_form = KlForm::wang_standard;
  KlNormalizer kl_normalizer = KlNormalizer::set_size;
  double ph_delta = 0.005;
  double ph_lambda = 50.0;
  std::size_t ph_min_instances = 30;
  bool ph_calibrate = true;
  double ph_delta_sigmas = 1.0;
  double ph_lambda_sigmas = 10.0;
  std::size_t post_change_min_ref = 100;
  std::size_t approx_window = 1;
  std::size_t kl_context = 25;

  // adaptation
  std::size_t batch_size = 50;
  int epochs = 100;
  double alpha = 0.25;
  double margin = 1.0;
  double threshold = 0.5;
  int pairs = 128;
  double learning_rate = 1e-3;
  int pretrain_epochs = 500;
  std::vector<int> encoder_hidden{16};
  int embedding = 8;
  LabelSource label_source = LabelSource::true_labels;
  std::uint64_t model_seed = 7;

  // explanations
  ShapleyMode explainer = ShapleyMode::permutation;
  int permutations = 100;
  std::uint64_t explainer_seed = 3;
  std::vector<std::string> shap_features;  // median series; empty = all features
  double shap_ph_delta = 0.0;
  double shap_ph_lambda = 1.0;
  std::size_t shap_ph_min_instances = 1;
  double shap_delta_sigmas = 0.5;
  double shap_lambda_sigmas = 5.0;
  std::size_t shap_calibration_batches = 0;  // 0 = the first target segment

  // baselines and service
  double contamination = 0.085;
  std::string listen = "127.0.0.1:8080";
  double rate = 0.0;  // live ingestion in samples per second, 0 = unthrottled
  std::string out = "run";

  void validate() const;
};

// Applies one setting; throws ConfigError for unknown keys or bad values.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);
RunConfig parse_config(std::istream& in);
RunConfig load_config(const std::string& path);
// Every key with its current value, in the file format.
std::string to_text(const RunConfig& config);

std::size_t warmup_size(const RunConfig& config, std::size_t stream_length);
MonitorConfig monitor_config(const RunConfig& config, std::size_t stream_length);
CcsaConfig ccsa_config(const RunConfig& config);

}  // namespace shiftwatch

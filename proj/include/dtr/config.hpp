#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "dtr/calendar.hpp"
#include "dtr/clustering.hpp"
#include "dtr/dataset.hpp"
#include "dtr/error.hpp"
#include "dtr/evaluation.hpp"
#include "dtr/features.hpp"
#include "dtr/forecaster.hpp"
#include "dtr/io.hpp"
#include "dtr/labeler.hpp"
#include "dtr/thermal.hpp"

namespace dtr {

using Json = nlohmann::json;

/// One experiment. Every field has a default; a config file overrides any subset.
struct Config {
  std::uint64_t seed = 7;
  std::filesystem::path out_dir = "run";

  int n_transformers = 50;
  int n_days = 183;
  SynthConfig synth;
  SplitSpec split;

  DayWindow window;
  std::chrono::minutes utc_offset{0};
  LabelerConfig labeler;
  double ewma_alpha = kDefaultEwmaAlpha;

  double ridge_lambda = 1.0;
  ClusteringOptions clustering;

  std::vector<double> percentiles = default_percentiles();
  std::vector<double> selection_percentiles{0.05, 0.95};
  BoostingParams boosting;
  int update_rounds = 5;
  int multi_temp_replicas = 5;
  double multi_temp_radius = 2.0;
  double validation_fraction = kValidationFraction;

  double noise_sigma = 1.12;
  double fixed_k = kFixedScaleFactor;
  SensitivityOptions sensitivity;

  void validate() const {
    if (n_transformers < 1) throw ConfigError("fleet.n_transformers must be positive");
    if (n_days < 9) throw ConfigError("fleet.n_days must allow at least a week of lags");
    if (split.train_validation_days < 1 || split.holdout_days < 1) throw ConfigError("split sizes must be positive");
    try {
      window.validate();
      synth.thermal.validate();
    } catch (const ParameterError& e) {
      throw ConfigError(e.what());
    }
    labeler.validate();
    if (!(ewma_alpha > 0.0 && ewma_alpha <= 1.0)) throw ConfigError("features.ewma_alpha must lie in (0, 1]");
    if (!(ridge_lambda >= 0.0)) throw ConfigError("clustering.ridge_lambda must be non-negative");
    if (clustering.k_min < 2 || clustering.k_max < clustering.k_min) throw ConfigError("invalid cluster-count range");
    validate_percentiles(percentiles);
    validate_percentiles(selection_percentiles);
    boosting.validate();
    if (update_rounds < 0) throw ConfigError("forecaster.update_rounds must be non-negative");
    if (multi_temp_replicas < 1) throw ConfigError("forecaster.multi_temp_replicas must be at least 1");
    if (!(multi_temp_radius >= 0.0)) throw ConfigError("forecaster.multi_temp_radius must be non-negative");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) throw ConfigError("validation_fraction must lie in (0, 1)");
    if (!(noise_sigma >= 0.0)) throw ConfigError("evaluation.noise_sigma must be non-negative");
    if (!(fixed_k > 0.0)) throw ConfigError("evaluation.fixed_k must be positive");
  }
};

namespace detail {

inline std::string clock_text(std::chrono::minutes m) { return fmt::format("{:02}:{:02}", m.count() / 60, m.count() % 60); }

inline std::chrono::minutes parse_clock(const std::string& s) {
  if (s.size() != 5 || s[2] != ':') throw ConfigError(fmt::format("expected HH:MM, got '{}'", s));
  try {
    return std::chrono::minutes{detail::parse_int(s.substr(0, 2), "hour") * 60 + detail::parse_int(s.substr(3, 2), "minute")};
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

/// Reads the keys of one section, rejecting any it does not know.
class Section {
 public:
  Section(const Json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("config section '{}' must be an object", name_));
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(fmt::format("unknown config key '{}.{}'", name_, key));
    }
  }
  Section(const Section&) = delete;
  Section& operator=(const Section&) = delete;

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const Json::exception& e) {
      throw ConfigError(fmt::format("config key '{}.{}': {}", name_, key, e.what()));
    }
  }
  const Json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const Json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline Json config_to_json(const Config& c) {
  const auto& t = c.synth.thermal;
  const auto& b = c.boosting;
  return Json{
      {"seed", c.seed},
      {"out_dir", c.out_dir.generic_string()},
      {"fleet", {{"n_transformers", c.n_transformers}, {"n_days", c.n_days}, {"start_date", format_date(c.synth.start_date)}}},
      {"split", {{"train_validation_days", c.split.train_validation_days}, {"holdout_days", c.split.holdout_days}}},
      {"thermal",
       {{"rated_top_oil_rise", t.rated_top_oil_rise},
        {"rated_hotspot_rise", t.rated_hotspot_rise},
        {"loss_ratio", t.loss_ratio},
        {"oil_exponent", t.oil_exponent},
        {"winding_exponent", t.winding_exponent},
        {"tau_oil_min", t.tau_oil},
        {"tau_winding_min", t.tau_winding}}},
      {"window",
       {{"peak_start", detail::clock_text(c.window.peak_start)},
        {"peak_end", detail::clock_text(c.window.peak_end)},
        {"utc_offset_minutes", c.utc_offset.count()}}},
      {"labeler",
       {{"k_min", c.labeler.k_min},
        {"k_max", c.labeler.k_max},
        {"hotspot_limit", c.labeler.hotspot_limit},
        {"tolerance", c.labeler.tolerance}}},
      {"features", {{"ewma_alpha", c.ewma_alpha}}},
      {"clustering",
       {{"ridge_lambda", c.ridge_lambda},
        {"k_min", c.clustering.k_min},
        {"k_max", c.clustering.k_max},
        {"pca_variance", c.clustering.pca_variance},
        {"restarts", c.clustering.restarts},
        {"max_iterations", c.clustering.max_iterations}}},
      {"forecaster",
       {{"percentiles", c.percentiles},
        {"selection_percentiles", c.selection_percentiles},
        {"learning_rate", b.learning_rate},
        {"max_leaves", b.max_leaves},
        {"feature_fraction", b.feature_fraction},
        {"bagging_fraction", b.bagging_fraction},
        {"n_rounds", b.n_rounds},
        {"early_stopping_rounds", b.early_stopping_rounds},
        {"min_data_in_leaf", b.min_data_in_leaf},
        {"max_bins", b.max_bins},
        {"category_smoothing", b.category_smoothing},
        {"update_rounds", c.update_rounds},
        {"multi_temp_replicas", c.multi_temp_replicas},
        {"multi_temp_radius", c.multi_temp_radius},
        {"validation_fraction", c.validation_fraction}}},
      {"evaluation",
       {{"noise_sigma", c.noise_sigma},
        {"fixed_k", c.fixed_k},
        {"sensitivity_grid_min", c.sensitivity.grid_min},
        {"sensitivity_grid_max", c.sensitivity.grid_max},
        {"sensitivity_grid_step", c.sensitivity.grid_step},
        {"sensitivity_difference_step", c.sensitivity.difference_step}}},
  };
}

inline Config config_from_json(const Json& j) {
  Config c;
  detail::Section root(j, "config");
  root.get("seed", c.seed);
  std::string out_dir = c.out_dir.generic_string();
  root.get("out_dir", out_dir);
  c.out_dir = out_dir;
  if (const auto* s = root.sub("fleet")) {
    detail::Section f(*s, "fleet");
    f.get("n_transformers", c.n_transformers);
    f.get("n_days", c.n_days);
    std::string start = format_date(c.synth.start_date);
    f.get("start_date", start);
    try {
      c.synth.start_date = parse_date(start);
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }
  if (const auto* s = root.sub("split")) {
    detail::Section f(*s, "split");
    f.get("train_validation_days", c.split.train_validation_days);
    f.get("holdout_days", c.split.holdout_days);
  }
  if (const auto* s = root.sub("thermal")) {
    detail::Section f(*s, "thermal");
    auto& t = c.synth.thermal;
    f.get("rated_top_oil_rise", t.rated_top_oil_rise);
    f.get("rated_hotspot_rise", t.rated_hotspot_rise);
    f.get("loss_ratio", t.loss_ratio);
    f.get("oil_exponent", t.oil_exponent);
    f.get("winding_exponent", t.winding_exponent);
    f.get("tau_oil_min", t.tau_oil);
    f.get("tau_winding_min", t.tau_winding);
  }
  if (const auto* s = root.sub("window")) {
    detail::Section f(*s, "window");
    std::string start = detail::clock_text(c.window.peak_start), end = detail::clock_text(c.window.peak_end);
    int offset = 0;
    f.get("peak_start", start);
    f.get("peak_end", end);
    f.get("utc_offset_minutes", offset);
    c.window.peak_start = detail::parse_clock(start);
    c.window.peak_end = detail::parse_clock(end);
    c.utc_offset = std::chrono::minutes{offset};
  }
  if (const auto* s = root.sub("labeler")) {
    detail::Section f(*s, "labeler");
    f.get("k_min", c.labeler.k_min);
    f.get("k_max", c.labeler.k_max);
    f.get("hotspot_limit", c.labeler.hotspot_limit);
    f.get("tolerance", c.labeler.tolerance);
  }
  if (const auto* s = root.sub("features")) {
    detail::Section f(*s, "features");
    f.get("ewma_alpha", c.ewma_alpha);
  }
  if (const auto* s = root.sub("clustering")) {
    detail::Section f(*s, "clustering");
    f.get("ridge_lambda", c.ridge_lambda);
    f.get("k_min", c.clustering.k_min);
    f.get("k_max", c.clustering.k_max);
    f.get("pca_variance", c.clustering.pca_variance);
    f.get("restarts", c.clustering.restarts);
    f.get("max_iterations", c.clustering.max_iterations);
  }
  if (const auto* s = root.sub("forecaster")) {
    detail::Section f(*s, "forecaster");
    auto& b = c.boosting;
    f.get("percentiles", c.percentiles);
    f.get("selection_percentiles", c.selection_percentiles);
    f.get("learning_rate", b.learning_rate);
    f.get("max_leaves", b.max_leaves);
    f.get("feature_fraction", b.feature_fraction);
    f.get("bagging_fraction", b.bagging_fraction);
    f.get("n_rounds", b.n_rounds);
    f.get("early_stopping_rounds", b.early_stopping_rounds);
    f.get("min_data_in_leaf", b.min_data_in_leaf);
    f.get("max_bins", b.max_bins);
    f.get("category_smoothing", b.category_smoothing);
    f.get("update_rounds", c.update_rounds);
    f.get("multi_temp_replicas", c.multi_temp_replicas);
    f.get("multi_temp_radius", c.multi_temp_radius);
    f.get("validation_fraction", c.validation_fraction);
  }
  if (const auto* s = root.sub("evaluation")) {
    detail::Section f(*s, "evaluation");
    f.get("noise_sigma", c.noise_sigma);
    f.get("fixed_k", c.fixed_k);
    f.get("sensitivity_grid_min", c.sensitivity.grid_min);
    f.get("sensitivity_grid_max", c.sensitivity.grid_max);
    f.get("sensitivity_grid_step", c.sensitivity.grid_step);
    f.get("sensitivity_difference_step", c.sensitivity.difference_step);
  }
  c.synth.forecast_sigma = c.noise_sigma;
  c.validate();
  return c;
}

inline Config load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError(fmt::format("config file {} not found", path.string()));
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return config_from_json(j);
}

/// Hash of the canonical form, so equivalent files hash equally.
// output location does not change results
inline std::uint64_t config_hash(const Config& c) {
  auto j = config_to_json(c);
  j.erase("out_dir");
  return fnv1a(j.dump());
}

}  // namespace dtr

#pragma once

#include <algorithm>
#include <array>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "dtr/calendar.hpp"
#include "dtr/dataset.hpp"
#include "dtr/error.hpp"
#include "dtr/labeler.hpp"
#include "dtr/random.hpp"
#include "dtr/table.hpp"

namespace dtr {

inline constexpr double kDefaultEwmaAlpha = 0.05;

/// Recursive EWMA seeded with the first value; returns the value after the last element.
inline double ewma_temperature(std::span<const double> history, double alpha = kDefaultEwmaAlpha) {
  if (history.empty()) throw InsufficientDataError("EWMA of an empty history");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ParameterError("EWMA smoothing factor must lie in (0, 1]");
  double s = history.front();
  for (std::size_t i = 1; i < history.size(); ++i) s += alpha * (history[i] - s);
  return s;
}

/// Range of the three phase values over their mean.
inline double unbalance_ratio(const PhaseCurrents& c) {
  const double mean = mean_phase(c);
  if (!(mean > 0.0)) throw DataValidationError("unbalance undefined for zero mean load");
  return (std::max({c[0], c[1], c[2]}) - std::min({c[0], c[1], c[2]})) / mean;
}

/// Stable numeric code for a categorical transformer id (exactly representable as a double).
inline double category_code(std::string_view id) { return static_cast<double>(fnv1a(id) >> 12); }

/// Predictors for one (transformer, day). Only the target day's temperature comes from the
/// target day; everything else is lagged.
struct FeatureVector {
  std::string transformer_id;
  Date date{};
  PhaseCurrents lag1_peak_mean{};
  PhaseCurrents lag1_offpeak_mean{};
  PhaseCurrents lag7_peak_mean{};
  PhaseCurrents lag7_offpeak_mean{};
  double lag1_peak_unbalance = 0.0;
  double lag1_offpeak_unbalance = 0.0;
  double lag7_peak_unbalance = 0.0;
  double lag7_offpeak_unbalance = 0.0;
  double lag1_k_opt = 0.0;
  double lag7_k_opt = 0.0;
  int day_of_week = 0;
  bool is_weekend = false;
  bool is_holiday = false;
  double peak_ambient = 0.0;
  double ewma_ambient = 0.0;
  double rated_power = 0.0;
  double num_customers = 0.0;

  /// Column order of the feature table; `transformer_id` is the single categorical column.
  static const std::vector<std::string>& names() {
    static const std::vector<std::string> n{
        "lag1_peak_mean_a",      "lag1_peak_mean_b",       "lag1_peak_mean_c",    "lag1_offpeak_mean_a",
        "lag1_offpeak_mean_b",   "lag1_offpeak_mean_c",    "lag7_peak_mean_a",    "lag7_peak_mean_b",
        "lag7_peak_mean_c",      "lag7_offpeak_mean_a",    "lag7_offpeak_mean_b", "lag7_offpeak_mean_c",
        "lag1_peak_unbalance",   "lag1_offpeak_unbalance", "lag7_peak_unbalance", "lag7_offpeak_unbalance",
        "lag1_k_opt",            "lag7_k_opt",             "day_of_week",         "is_weekend",
        "is_holiday",            "peak_ambient",           "ewma_ambient",        "rated_power",
        "num_customers",         "transformer_id"};
    return n;
  }
  static std::vector<bool> categorical_flags() {
    std::vector<bool> flags(names().size(), false);
    flags.back() = true;
    return flags;
  }

  [[nodiscard]] std::vector<double> values() const {
    std::vector<double> v;
    v.reserve(names().size());
    for (const auto* block : {&lag1_peak_mean, &lag1_offpeak_mean, &lag7_peak_mean, &lag7_offpeak_mean}) {
      v.insert(v.end(), block->begin(), block->end());
    }
    v.insert(v.end(), {lag1_peak_unbalance, lag1_offpeak_unbalance, lag7_peak_unbalance, lag7_offpeak_unbalance,
                       lag1_k_opt, lag7_k_opt, static_cast<double>(day_of_week), is_weekend ? 1.0 : 0.0,
                       is_holiday ? 1.0 : 0.0, peak_ambient, ewma_ambient, rated_power, num_customers,
                       category_code(transformer_id)});
    return v;
  }
};

enum class TemperatureSource { truth, forecast };

struct FeatureOptions {
  double ewma_alpha = kDefaultEwmaAlpha;
  TemperatureSource temperature = TemperatureSource::truth;
};

/// Read-only view of one transformer's observed history.
struct TransformerHistory {
  const TransformerMeta* meta = nullptr;
  const WeatherSeries* weather = nullptr;
  std::map<Date, DayRecord> days;
  std::map<Date, LabelRecord> labels;
};

inline double target_day_ambient(const WeatherSeries& ws, Date date, TemperatureSource source) {
  const auto& day = ws.at(date);
  if (source == TemperatureSource::forecast) {
    if (!day.ambient_forecast) {
      throw DataValidationError(fmt::format("no forecast ambient for site {} on {}", ws.site_id, format_date(date)));
    }
    return *day.ambient_forecast;
  }
  return day.ambient_true;
}

/// Assembles the feature vector for `date`. `ambient_override`, when given, replaces the target
/// day's temperature (used for perturbed-forecast runs).
inline FeatureVector build_features(const TransformerHistory& h, Date date, const std::set<Date>& holidays,
                                    const FeatureOptions& opt = {}, std::optional<double> ambient_override = {}) {
  if (h.meta == nullptr || h.weather == nullptr) throw ParameterError("history lacks metadata or weather");
  const Date lag1 = date - std::chrono::days{1};
  const Date lag7 = date - std::chrono::days{7};
  auto day_at = [&](Date d) -> const DayRecord& {
    const auto it = h.days.find(d);
    if (it == h.days.end()) {
      throw InsufficientDataError(fmt::format("{}: no complete load day {}", h.meta->transformer_id, format_date(d)));
    }
    return it->second;
  };
  auto label_at = [&](Date d) -> const LabelRecord& {
    const auto it = h.labels.find(d);
    if (it == h.labels.end()) {
      throw InsufficientDataError(fmt::format("{}: no label for {}", h.meta->transformer_id, format_date(d)));
    }
    return it->second;
  };
  const auto& d1 = day_at(lag1);
  const auto& d7 = day_at(lag7);

  FeatureVector f;
  f.transformer_id = h.meta->transformer_id;
  f.date = date;
  f.lag1_peak_mean = d1.peak_mean;
  f.lag1_offpeak_mean = d1.offpeak_mean;
  f.lag7_peak_mean = d7.peak_mean;
  f.lag7_offpeak_mean = d7.offpeak_mean;
  f.lag1_peak_unbalance = unbalance_ratio(d1.peak_mean);
  f.lag1_offpeak_unbalance = unbalance_ratio(d1.offpeak_mean);
  f.lag7_peak_unbalance = unbalance_ratio(d7.peak_mean);
  f.lag7_offpeak_unbalance = unbalance_ratio(d7.offpeak_mean);
  f.lag1_k_opt = label_at(lag1).k_opt;
  f.lag7_k_opt = label_at(lag7).k_opt;
  f.day_of_week = day_of_week(date);
  f.is_weekend = is_weekend(date);
  f.is_holiday = holidays.count(date) > 0;

  const double today = ambient_override ? *ambient_override : target_day_ambient(*h.weather, date, opt.temperature);
  std::vector<double> temps;
  for (const auto& [d, w] : h.weather->days) {
    if (d >= date) break;
    temps.push_back(w.ambient_true);
  }
  temps.push_back(today);
  f.peak_ambient = today;
  f.ewma_ambient = ewma_temperature(temps, opt.ewma_alpha);
  f.rated_power = h.meta->rated_kva;
  f.num_customers = h.meta->num_customers;
  return f;
}

/// Realised quantities of the target day used as regression targets.
struct DayTargets {
  double k_opt = 0.0;
  PhaseCurrents peak_mean{};
  PhaseCurrents offpeak_mean{};
};

struct FeatureRow {
  FeatureVector features;
  DayTargets targets;
};

inline std::uint64_t row_key(std::string_view transformer_id, Date date, std::uint64_t replica = 0) {
  return mix_seed(fnv1a(transformer_id) ^ static_cast<std::uint64_t>(date.time_since_epoch().count()), replica);
}

/// Direct-model table (target = optimal scale factor) restricted to `columns`.
inline TrainingTable make_table(std::span<const FeatureRow> rows, const std::vector<std::string>& columns) {
  TrainingTable full(FeatureVector::names(), FeatureVector::categorical_flags());
  for (const auto& r : rows) {
    full.add_row(r.features.values(), r.targets.k_opt, row_key(r.features.transformer_id, r.features.date));
  }
  return columns == FeatureVector::names() ? full : full.select(columns);
}

// ---------------------------------------------------------------------------------------------
// Feature table CSV

inline std::vector<std::string> feature_table_header() {
  std::vector<std::string> h{"transformer_id", "date"};
  for (const auto& n : FeatureVector::names()) {
    if (n != "transformer_id") h.push_back(n);
  }
  for (const char* t : {"target_k_opt", "target_peak_mean_a", "target_peak_mean_b", "target_peak_mean_c",
                        "target_offpeak_mean_a", "target_offpeak_mean_b", "target_offpeak_mean_c"}) {
    h.emplace_back(t);
  }
  return h;
}

inline std::string feature_table_csv(std::span<const FeatureRow> rows) {
  CsvWriter w(feature_table_header());
  for (const auto& r : rows) {
    const auto v = r.features.values();
    std::vector<std::string> fields{r.features.transformer_id, format_date(r.features.date)};
    for (std::size_t i = 0; i + 1 < v.size(); ++i) fields.push_back(fmt_double(v[i]));
    fields.push_back(fmt_double(r.targets.k_opt));
    for (double x : r.targets.peak_mean) fields.push_back(fmt_double(x));
    for (double x : r.targets.offpeak_mean) fields.push_back(fmt_double(x));
    w.row(fields);
  }
  return w.str();
}

inline std::vector<FeatureRow> parse_feature_table(const CsvTable& table) {
  require_header(table, feature_table_header(), "feature table");
  std::vector<FeatureRow> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    std::size_t i = 2;
    auto next = [&] { return parse_double(row[i++]); };
    FeatureRow r;
    auto& f = r.features;
    f.transformer_id = row[0];
    f.date = parse_date(row[1]);
    for (auto* block : {&f.lag1_peak_mean, &f.lag1_offpeak_mean, &f.lag7_peak_mean, &f.lag7_offpeak_mean}) {
      for (auto& x : *block) x = next();
    }
    f.lag1_peak_unbalance = next();
    f.lag1_offpeak_unbalance = next();
    f.lag7_peak_unbalance = next();
    f.lag7_offpeak_unbalance = next();
    f.lag1_k_opt = next();
    f.lag7_k_opt = next();
    f.day_of_week = static_cast<int>(next());
    f.is_weekend = next() != 0.0;
    f.is_holiday = next() != 0.0;
    f.peak_ambient = next();
    f.ewma_ambient = next();
    f.rated_power = next();
    f.num_customers = next();
    r.targets.k_opt = next();
    for (auto& x : r.targets.peak_mean) x = next();
    for (auto& x : r.targets.offpeak_mean) x = next();
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// Noise-based pruning

/// Trains a pilot model on a table and reports one importance value per column.
using ImportanceFn = std::function<std::vector<double>(const TrainingTable&)>;

inline constexpr std::string_view kNoiseColumn = "__uniform_noise__";

/// Appends a uniform-noise column, scores every column with `importance`, and keeps the columns
/// whose importance is at least the noise column's. The noise column is never retained.
inline std::vector<std::string> prune_features(const TrainingTable& table, const ImportanceFn& importance,
                                               std::uint64_t seed) {
  if (table.n_rows() < 100) throw InsufficientDataError("feature pruning needs at least 100 rows");
  const auto [lo, hi] = std::minmax_element(table.target.begin(), table.target.end());
  if (*lo == *hi) throw DataValidationError("feature pruning on a constant target");

  auto cols = table.columns;
  cols.emplace_back(kNoiseColumn);
  auto cats = table.categorical;
  cats.push_back(false);
  TrainingTable noisy(cols, cats);
  Rng rng(mix_seed(seed, 0x9e15eULL));
  std::vector<double> row(cols.size());
  for (std::size_t r = 0; r < table.n_rows(); ++r) {
    const auto src = table.row(r);
    std::copy(src.begin(), src.end(), row.begin());
    row.back() = rng.uniform();
    noisy.add_row(row, table.target[r], table.keys[r]);
  }
  const auto imp = importance(noisy);
  if (imp.size() != cols.size()) throw InvariantViolation("importance function returned the wrong number of values");
  const double noise_importance = imp.back();
  std::vector<std::string> kept;
  for (std::size_t c = 0; c + 1 < cols.size(); ++c) {
    if (imp[c] >= noise_importance) kept.push_back(cols[c]);
  }
  return kept;
}

}  // namespace dtr

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "dtr/calendar.hpp"
#include "dtr/error.hpp"
#include "dtr/forecaster.hpp"
#include "dtr/io.hpp"
#include "dtr/labeler.hpp"
#include "dtr/relay.hpp"

namespace dtr {

using DayKey = std::pair<std::string, Date>;

/// A realised holdout day: the inputs needed to re-evaluate any scale factor, plus its label.
struct TruthDay {
  std::string transformer_id;
  Date date{};
  DayInputs inputs;
  double k_opt = 0.0;
  BoundaryFlag flag = BoundaryFlag::interior_root;
};

inline constexpr double kFixedScaleFactor = 1.05;
inline constexpr double kNominalCoverage = 90.0;

/// Percent of truths inside [lower, upper], endpoints included.
inline double coverage_percent(std::span<const double> lower, std::span<const double> upper, std::span<const double> truth) {
  if (lower.size() != upper.size() || lower.size() != truth.size()) throw ParameterError("coverage inputs must be aligned");
  if (truth.empty()) throw InsufficientDataError("coverage of an empty set");
  std::size_t inside = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) inside += (truth[i] >= lower[i] && truth[i] <= upper[i]) ? 1 : 0;
  return 100.0 * static_cast<double>(inside) / static_cast<double>(truth.size());
}

struct CoverageSummary {
  std::map<std::string, double> per_transformer;
  double fleet_mean = 0.0;
};

/// Per-transformer 5-95 (or any lo-hi) coverage and its fleet mean.
inline CoverageSummary coverage(const std::vector<PredictionSet>& predictions, const std::map<DayKey, double>& truth,
                                double lo = 0.05, double hi = 0.95) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;  // inside, total
  for (const auto& p : predictions) {
    const auto it = truth.find({p.transformer_id, p.date});
    if (it == truth.end()) {
      throw DataValidationError(fmt::format("no realised label for {} on {}", p.transformer_id, format_date(p.date)));
    }
    auto& c = counts[p.transformer_id];
    c.first += (it->second >= p.at(lo) && it->second <= p.at(hi)) ? 1 : 0;
    ++c.second;
  }
  if (counts.empty()) throw InsufficientDataError("coverage of an empty prediction set");
  CoverageSummary s;
  double sum = 0.0;
  for (const auto& [id, c] : counts) {
    const double pct = 100.0 * static_cast<double>(c.first) / static_cast<double>(c.second);
    s.per_transformer[id] = pct;
    sum += pct;
  }
  s.fleet_mean = sum / static_cast<double>(counts.size());
  return s;
}

/// Trip current at scale factor `k` for the day's pre-load and peak duration, per unit of rating.
inline double capacity_pu(double k, const DayInputs& day) { return trip_current_at_k(k, day) / day.rated_phase_current; }

struct RiskRow {
  std::string setting;                 // "p02", "p50", ... or "fixed_1.05"
  std::optional<double> percentile;    // empty for the fixed baseline
  double mean_capacity_pu = 0.0;
  double capacity_std = 0.0;
  double mean_hotspot = 0.0;
  double exceedance_fraction = 0.0;    // share of days with hotspot strictly above the limit
  std::vector<double> capacities;
  std::vector<double> hotspots;
};

inline std::string percentile_label(double p) { return fmt::format("p{:02.0f}", p * 100.0); }

namespace detail {

inline RiskRow summarise_risk(std::string setting, std::optional<double> percentile, std::vector<double> capacities,
                              std::vector<double> hotspots, double limit) {
  RiskRow r;
  r.setting = std::move(setting);
  r.percentile = percentile;
  const auto n = static_cast<double>(capacities.size());
  if (capacities.empty()) throw InsufficientDataError("risk row over no days");
  r.mean_capacity_pu = std::accumulate(capacities.begin(), capacities.end(), 0.0) / n;
  double ss = 0.0;
  for (double c : capacities) ss += (c - r.mean_capacity_pu) * (c - r.mean_capacity_pu);
  r.capacity_std = std::sqrt(ss / n);
  r.mean_hotspot = std::accumulate(hotspots.begin(), hotspots.end(), 0.0) / n;
  r.exceedance_fraction =
      static_cast<double>(std::count_if(hotspots.begin(), hotspots.end(), [&](double h) { return h > limit; })) / n;
  r.capacities = std::move(capacities);
  r.hotspots = std::move(hotspots);
  return r;
}

}  // namespace detail

/// Applies each percentile's predicted scale factor to its realised day and aggregates capacity and
/// hotspot. The last row is the fixed-setting baseline.
inline std::vector<RiskRow> risk_table(const std::vector<PredictionSet>& predictions, const std::map<DayKey, TruthDay>& truth,
                                       const std::vector<double>& percentiles, double fixed_k = kFixedScaleFactor,
                                       double hotspot_limit = 140.0) {
  std::vector<RiskRow> rows;
  for (double p : percentiles) {
    std::vector<double> cap, hot;
    for (const auto& pred : predictions) {
      const auto it = truth.find({pred.transformer_id, pred.date});
      if (it == truth.end()) {
        throw DataValidationError(fmt::format("no realised day for {} on {}", pred.transformer_id, format_date(pred.date)));
      }
      const double k = pred.at(p);
      cap.push_back(capacity_pu(k, it->second.inputs));
      hot.push_back(hotspot_at_k(k, it->second.inputs));
    }
    rows.push_back(detail::summarise_risk(percentile_label(p), p, std::move(cap), std::move(hot), hotspot_limit));
  }
  std::vector<double> cap, hot;
  for (const auto& pred : predictions) {
    const auto& day = truth.at({pred.transformer_id, pred.date}).inputs;
    cap.push_back(capacity_pu(fixed_k, day));
    hot.push_back(hotspot_at_k(fixed_k, day));
  }
  rows.push_back(detail::summarise_risk(fmt::format("fixed_{:.2f}", fixed_k), std::nullopt, std::move(cap), std::move(hot),
                                        hotspot_limit));
  return rows;
}

// ---------------------------------------------------------------------------------------------
// Temperature sensitivity

struct SensitivityOptions {
  double grid_min = -20.0;
  double grid_max = 40.0;
  double grid_step = 5.0;
  double difference_step = 1.0;  // half-width of the central difference, degC
};

struct SensitivityResult {
  std::map<std::string, double> per_transformer;  // mean dk*/dtheta over usable points
  std::map<std::string, double> per_transformer_half_step;
  double min = 0.0, mean = 0.0, max = 0.0;
  double mean_half_step = 0.0;
  double step_halving_change = 0.0;  // |mean(h) - mean(h/2)| / |mean(h)|
  std::size_t n_points = 0;
  std::size_t n_non_negative = 0;  // individual differences >= 0
  std::size_t n_excluded = 0;      // points touching a clamped label
};

/// Central differences of the optimal scale factor with respect to ambient temperature, holding
/// each day's loads fixed, over a temperature grid. Differences touching a clamped label are skipped.
inline SensitivityResult temperature_sensitivity(const std::vector<TruthDay>& days, const SensitivityOptions& opt = {},
                                                 const LabelerConfig& cfg = {}) {
  if (!(opt.grid_step > 0.0 && opt.difference_step > 0.0 && opt.grid_max >= opt.grid_min)) {
    throw ParameterError("invalid sensitivity grid");
  }
  SensitivityResult res;
  std::map<std::string, std::pair<double, std::size_t>> acc, acc_half;
  auto derivative = [&](DayInputs day, double theta, double h) -> std::optional<double> {
    day.ambient = theta + h;
    const auto up = optimal_scale_factor(day, cfg);
    day.ambient = theta - h;
    const auto down = optimal_scale_factor(day, cfg);
    if (up.flag != BoundaryFlag::interior_root || down.flag != BoundaryFlag::interior_root) return std::nullopt;
    return (up.k_opt - down.k_opt) / (2.0 * h);
  };
  const int n_grid = static_cast<int>(std::floor((opt.grid_max - opt.grid_min) / opt.grid_step + 1e-9)) + 1;
  for (const auto& d : days) {
    for (int g = 0; g < n_grid; ++g) {
      const double theta = opt.grid_min + g * opt.grid_step;
      const auto full = derivative(d.inputs, theta, opt.difference_step);
      const auto half = derivative(d.inputs, theta, 0.5 * opt.difference_step);
      if (!full || !half) {
        ++res.n_excluded;
        continue;
      }
      ++res.n_points;
      if (*full >= 0.0) ++res.n_non_negative;
      auto& a = acc[d.transformer_id];
      a.first += *full;
      ++a.second;
      auto& b = acc_half[d.transformer_id];
      b.first += *half;
      ++b.second;
    }
  }
  if (acc.empty()) throw InsufficientDataError("no interior labels to difference");
  res.min = std::numeric_limits<double>::infinity();
  res.max = -res.min;
  double sum = 0.0, sum_half = 0.0;
  for (const auto& [id, a] : acc) {
    const double m = a.first / static_cast<double>(a.second);
    const double mh = acc_half[id].first / static_cast<double>(acc_half[id].second);
    res.per_transformer[id] = m;
    res.per_transformer_half_step[id] = mh;
    res.min = std::min(res.min, m);
    res.max = std::max(res.max, m);
    sum += m;
    sum_half += mh;
  }
  res.mean = sum / static_cast<double>(acc.size());
  res.mean_half_step = sum_half / static_cast<double>(acc.size());
  res.step_halving_change = std::abs(res.mean - res.mean_half_step) / std::abs(res.mean);
  return res;
}

// ---------------------------------------------------------------------------------------------
// Figure tables

/// Empirical CDF points (value, cumulative fraction) of a sample.
inline std::vector<std::pair<double, double>> cdf_points(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  std::vector<std::pair<double, double>> out;
  const auto n = static_cast<double>(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out.emplace_back(values[i], static_cast<double>(i + 1) / n);
  return out;
}

inline std::string coverage_cdf_csv(const CoverageSummary& s) {
  CsvWriter w({"coverage_percent", "cumulative_fraction"});
  std::vector<double> v;
  for (const auto& [id, c] : s.per_transformer) v.push_back(c);
  for (const auto& [x, f] : cdf_points(v)) w.row({fmt_double(x), fmt_double(f)});
  return w.str();
}

/// One row per transformer, one column per method.
inline std::string coverage_by_method_csv(const std::vector<std::pair<std::string, const CoverageSummary*>>& methods) {
  std::vector<std::string> header{"transformer_id"};
  for (const auto& [name, s] : methods) header.push_back(name);
  CsvWriter w(header);
  if (methods.empty()) return w.str();
  for (const auto& [id, c] : methods.front().second->per_transformer) {
    std::vector<std::string> row{id};
    for (const auto& [name, s] : methods) {
      const auto it = s->per_transformer.find(id);
      row.push_back(it == s->per_transformer.end() ? "" : fmt_double(it->second));
    }
    w.row(row);
  }
  return w.str();
}

inline std::string risk_cdf_csv(const std::vector<RiskRow>& rows, bool capacity) {
  CsvWriter w({"setting", capacity ? "capacity_pu" : "hotspot_c", "cumulative_fraction"});
  for (const auto& r : rows) {
    for (const auto& [x, f] : cdf_points(capacity ? r.capacities : r.hotspots)) w.row({r.setting, fmt_double(x), fmt_double(f)});
  }
  return w.str();
}

inline std::string tradeoff_csv(const std::vector<RiskRow>& rows) {
  CsvWriter w({"setting", "mean_capacity_pu", "capacity_std_pu", "mean_hotspot_c", "exceedance_percent"});
  for (const auto& r : rows) {
    w.row({r.setting, fmt_double(r.mean_capacity_pu), fmt_double(r.capacity_std), fmt_double(r.mean_hotspot),
           fmt_double(100.0 * r.exceedance_fraction)});
  }
  return w.str();
}

inline std::string sensitivity_csv(const SensitivityResult& s) {
  CsvWriter w({"transformer_id", "mean_dk_dtheta", "mean_dk_dtheta_half_step"});
  for (const auto& [id, v] : s.per_transformer) w.row({id, fmt_double(v), fmt_double(s.per_transformer_half_step.at(id))});
  return w.str();
}

}  // namespace dtr

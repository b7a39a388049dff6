#pragma once

#include <catch_amalgamated.hpp>

#include "dtr/dtr.hpp"

namespace test {

using namespace dtr;

inline Date day0() { return make_date(2024, 11, 4); }  // a Monday

/// Half-hourly samples for `n_days` whole days starting at `first`, each phase constant.
inline LoadSeries constant_series(Date first, int n_days, const PhaseCurrents& c, std::string id = "T1") {
  LoadSeries s;
  s.transformer_id = std::move(id);
  for (int i = 0; i < 48 * n_days; ++i) s.push_back(Timestamp{first} + kSampleInterval * i, c);
  return s;
}

/// A day with balanced per-unit pre-load and peak equivalents on a 100 A rating.
inline DayInputs balanced_day(double preload_pu, double peak_pu, double ambient, double rated = 100.0) {
  DayInputs d;
  d.equivalents.offpeak = {preload_pu * rated, preload_pu * rated, preload_pu * rated};
  d.equivalents.peak = {peak_pu * rated, peak_pu * rated, peak_pu * rated};
  d.ambient = ambient;
  d.rated_phase_current = rated;
  return d;
}

/// Integrates the two first-order rise equations with classical RK4 on 1-minute steps, starting
/// from the off-peak steady state.
inline double rk4_hotspot(const LoadFactors& f, double ambient, const ThermalParams& p, double minutes) {
  auto oil_target = [&](double k) {
    return p.rated_top_oil_rise * std::pow((k * k * p.loss_ratio + 1.0) / (p.loss_ratio + 1.0), p.oil_exponent);
  };
  auto hs_target = [&](double k) { return p.rated_hotspot_rise * std::pow(k, 2.0 * p.winding_exponent); };
  double oil = oil_target(f.k_oil_offpeak);
  double hs = hs_target(f.k_winding_offpeak);
  const double oil_u = oil_target(f.k_oil_peak);
  const double hs_u = hs_target(f.k_winding_peak);
  auto step = [](double y, double target, double tau, double h) {
    auto d = [&](double v) { return (target - v) / tau; };
    const double k1 = d(y), k2 = d(y + 0.5 * h * k1), k3 = d(y + 0.5 * h * k2), k4 = d(y + h * k3);
    return y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  };
  const int n = static_cast<int>(std::floor(minutes));
  for (int i = 0; i < n; ++i) {
    oil = step(oil, oil_u, p.tau_oil, 1.0);
    hs = step(hs, hs_u, p.tau_winding, 1.0);
  }
  const double rest = minutes - n;
  if (rest > 0.0) {
    oil = step(oil, oil_u, p.tau_oil, rest);
    hs = step(hs, hs_u, p.tau_winding, rest);
  }
  return ambient + oil + hs;
}

/// Plain bisection on a bracket with f(lo) < 0 < f(hi).
template <class F>
double bisect(F f, double lo, double hi, int iterations = 60) {
  for (int i = 0; i < iterations; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) > 0.0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

inline TrainingTable one_feature_table(const std::vector<double>& x, const std::vector<double>& y) {
  TrainingTable t({"x"}, {false});
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double row[] = {x[i]};
    t.add_row(row, y[i], i + 1);
  }
  return t;
}

/// FleetData built directly from a generated fleet, without the CSV round trip.
inline FleetData in_memory_fleet(const Fleet& fleet, const Config& cfg) {
  FleetData f;
  for (const auto& m : fleet.metas) f.metas.emplace(m.transformer_id, m);
  f.weather = fleet.weather;
  f.holidays = fleet.holidays;
  for (const auto& s : fleet.loads) {
    auto& dm = f.days[s.transformer_id];
    for (auto& rec : summarise_days(s, cfg.window, cfg.utc_offset)) dm.emplace(rec.date, rec);
  }
  return f;
}

inline std::map<std::string, std::map<Date, LabelRecord>> label_fleet(const FleetData& fleet, const Config& cfg) {
  std::vector<LabelRecord> labels;
  for (const auto& [id, days] : fleet.days) {
    const auto& ws = fleet.weather.at(id);
    for (const auto& [date, rec] : days) {
      if (!ws.days.count(date)) continue;
      try {
        labels.push_back(label_day(id, date, fleet.day_inputs(id, date, ws.at(date).ambient_true, cfg.window), cfg.labeler));
      } catch (const AlreadyTrippingError&) {
      }
    }
  }
  return index_labels(labels);
}

}  // namespace test

#pragma once

#include <string>
#include <string_view>

#include <fmt/format.h>

#include "dtr/calendar.hpp"
#include "dtr/error.hpp"
#include "dtr/relay.hpp"
#include "dtr/root_finding.hpp"
#include "dtr/thermal.hpp"

namespace dtr {

/// Everything needed to evaluate one transformer-day.
struct DayInputs {
  PeriodEquivalents equivalents;
  double ambient = 0.0;  // daily ambient, degC
  ThermalParams params;
  DayWindow window;
  double rated_phase_current = 1.0;

  [[nodiscard]] double preload() const { return max_phase(equivalents.offpeak); }
};

struct LabelerConfig {
  double k_min = 0.5;
  double k_max = 2.5;
  double hotspot_limit = 140.0;  // degC
  double tolerance = 0.01;       // degC

  void validate() const {
    if (!(k_min > 0.0 && k_min < k_max)) throw ConfigError("labeler bounds must satisfy 0 < k_min < k_max");
    if (!(tolerance > 0.0)) throw ConfigError("labeler tolerance must be positive");
  }
};

/// Peak-period factors when the relay is allowed to carry its trip current: the largest phase runs
/// at I_trip and the other phases scale by the same ratio. Off-peak factors are as observed.
inline LoadFactors factors_at_trip(double trip, const DayInputs& day) {
  PeriodEquivalents scaled = day.equivalents;
  const double observed_max = max_phase(day.equivalents.peak);
  if (observed_max > 0.0) {
    const double ratio = trip / observed_max;
    for (double& c : scaled.peak) c *= ratio;
  } else {
    scaled.peak = {trip, trip, trip};
  }
  return load_factors(scaled, day.rated_phase_current);
}

inline double trip_current_at_k(double k, const DayInputs& day) {
  return trip_current(RelaySettings{k, day.rated_phase_current}, day.preload(), day.window.peak_minutes(),
                      day.params.tau_winding, day.params.tau_oil);
}

/// Maximum hotspot over the peak window if the relay is set to scale factor `k` and the load sits
/// exactly on the trip boundary.
inline double hotspot_at_k(double k, const DayInputs& day) {
  const double trip = trip_current_at_k(k, day);
  return hotspot_temperature(factors_at_trip(trip, day), day.ambient, day.params, day.window.peak_minutes());
}

enum class BoundaryFlag { interior_root, clamped_low, clamped_high };

inline std::string_view to_string(BoundaryFlag f) {
  switch (f) {
    case BoundaryFlag::interior_root: return "interior_root";
    case BoundaryFlag::clamped_low: return "clamped_low";
    case BoundaryFlag::clamped_high: return "clamped_high";
  }
  return "?";
}

inline BoundaryFlag parse_boundary_flag(std::string_view s) {
  if (s == "interior_root") return BoundaryFlag::interior_root;
  if (s == "clamped_low") return BoundaryFlag::clamped_low;
  if (s == "clamped_high") return BoundaryFlag::clamped_high;
  throw DataValidationError(fmt::format("unknown boundary flag '{}'", s));
}

struct ScaleFactorSolution {
  double k_opt = 0.0;
  BoundaryFlag flag = BoundaryFlag::interior_root;
  double hotspot = 0.0;  // hotspot_at_k(k_opt)
  int iterations = 0;
};

/// Largest scale factor whose boundary hotspot stays at the limit. Interior roots are returned on
/// the safe side: limit - tolerance <= hotspot <= limit.
inline ScaleFactorSolution optimal_scale_factor(const DayInputs& day, const LabelerConfig& cfg = {}) {
  cfg.validate();
  day.params.validate();
  auto excess = [&](double k) { return hotspot_at_k(k, day) - cfg.hotspot_limit; };

  // Below this the pre-load trips on its own and the trip current is undefined.
  const double feasible = min_feasible_scale_factor(day.rated_phase_current, day.preload(),
                                                    day.window.peak_minutes(), day.params.tau_winding,
                                                    day.params.tau_oil);
  double lo = cfg.k_min;
  if (lo <= feasible) {
    lo = feasible * (1.0 + 1e-9) + 1e-12;
    if (lo >= cfg.k_max) {
      throw AlreadyTrippingError("preload trips the relay at every scale factor within the search bounds");
    }
  }
  const double f_hi = excess(cfg.k_max);
  if (f_hi < 0.0) return {cfg.k_max, BoundaryFlag::clamped_high, f_hi + cfg.hotspot_limit, 0};
  const double f_lo = excess(lo);
  if (f_lo > 0.0) return {lo, BoundaryFlag::clamped_low, f_lo + cfg.hotspot_limit, 0};
  if (f_lo == 0.0) return {lo, BoundaryFlag::interior_root, cfg.hotspot_limit, 0};

  const auto r = brent_root(excess, lo, cfg.k_max, f_lo, f_hi, 1e-12);
  ScaleFactorSolution out{r.root, BoundaryFlag::interior_root, r.f_root + cfg.hotspot_limit, r.iterations};
  if (r.f_root > 0.0) out = {r.other, BoundaryFlag::interior_root, r.f_other + cfg.hotspot_limit, r.iterations};
  if (!(out.hotspot <= cfg.hotspot_limit && out.hotspot >= cfg.hotspot_limit - cfg.tolerance)) {
    throw InvariantViolation(fmt::format("scale factor search ended {:.4f} degC from the limit",
                                         out.hotspot - cfg.hotspot_limit));
  }
  return out;
}

/// One (transformer, day) training label.
struct LabelRecord {
  std::string transformer_id;
  Date date{};
  double ambient = 0.0;
  LoadFactors factors;
  double k_opt = 0.0;
  BoundaryFlag boundary_flag = BoundaryFlag::interior_root;
};

inline LabelRecord label_day(std::string transformer_id, Date date, const DayInputs& day,
                             const LabelerConfig& cfg = {}) {
  const auto sol = optimal_scale_factor(day, cfg);
  return LabelRecord{std::move(transformer_id), date, day.ambient,
                     load_factors(day.equivalents, day.rated_phase_current), sol.k_opt, sol.flag};
}

}  // namespace dtr

#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <numeric>
#include <span>

#include <fmt/format.h>

#include "dtr/error.hpp"
#include "dtr/series.hpp"

namespace dtr {

/// Nameplate thermal parameters of an oil-immersed transformer. Defaults are typical ONAN
/// distribution-transformer figures.
struct ThermalParams {
  double rated_top_oil_rise = 55.0;  // K over ambient at rated load
  double rated_hotspot_rise = 23.0;  // K of hotspot over top oil at rated load
  double loss_ratio = 5.0;           // load loss / no-load loss at rated load
  double oil_exponent = 0.8;
  double winding_exponent = 0.8;
  double tau_oil = 180.0;     // minutes
  double tau_winding = 7.0;   // minutes

  void validate() const {
    const double all[] = {rated_top_oil_rise, rated_hotspot_rise, loss_ratio, oil_exponent,
                          winding_exponent,   tau_oil,            tau_winding};
    for (double v : all) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ParameterError("thermal parameters must be positive");
    }
    if (!(tau_winding < tau_oil)) throw ParameterError("winding time constant must be below oil time constant");
    if (oil_exponent > 1.0 || winding_exponent > 1.0) throw ParameterError("thermal exponents must lie in (0, 1]");
  }

  friend bool operator==(const ThermalParams&, const ThermalParams&) = default;
};

/// Per-unit load factors of the two-step equivalent load. The oil factors use the mean of the
/// phase equivalents and the winding factors the largest phase.
struct LoadFactors {
  double k_oil_offpeak = 0.0;
  double k_oil_peak = 0.0;
  double k_winding_offpeak = 0.0;
  double k_winding_peak = 0.0;

  void validate() const {
    if (!(k_oil_offpeak >= 0 && k_oil_peak >= 0 && k_winding_offpeak >= 0 && k_winding_peak >= 0)) {
      throw ParameterError("load factors must be non-negative");
    }
    constexpr double slack = 1e-12;
    if (k_winding_offpeak + slack < k_oil_offpeak || k_winding_peak + slack < k_oil_peak) {
      throw ParameterError("winding load factor must be at least the oil load factor");
    }
  }
};

/// Daily peak window plus the fixed 12 h off-peak window that precedes it. Times are minutes
/// after local midnight; `peak_end` may exceed 24 h when the window wraps past midnight.
struct DayWindow {
  std::chrono::minutes peak_start{17 * 60};
  std::chrono::minutes peak_end{20 * 60};
  static constexpr std::chrono::minutes offpeak_duration{12 * 60};

  [[nodiscard]] std::chrono::minutes peak_duration() const { return peak_end - peak_start; }
  [[nodiscard]] double peak_minutes() const { return static_cast<double>(peak_duration().count()); }

  void validate() const {
    using namespace std::chrono;
    if (peak_start < minutes{0} || peak_start >= minutes{24 * 60}) {
      throw ParameterError("peak start must lie within the day");
    }
    if (peak_duration() <= minutes{0} || peak_duration() > minutes{24 * 60}) {
      throw ParameterError("peak window duration must be in (0, 24 h]");
    }
    if (peak_start.count() % kSampleInterval.count() != 0 || peak_end.count() % kSampleInterval.count() != 0) {
      throw ParameterError("peak window boundaries must fall on half-hour marks");
    }
  }

  /// [begin, end) of the peak window on `date`, shifted from local clock to UTC by `utc_offset`.
  [[nodiscard]] std::pair<Timestamp, Timestamp> peak_span(Date date, std::chrono::minutes utc_offset = {}) const {
    const Timestamp begin = Timestamp{date} + peak_start - utc_offset;
    return {begin, begin + peak_duration()};
  }

  [[nodiscard]] std::pair<Timestamp, Timestamp> offpeak_span(Date date, std::chrono::minutes utc_offset = {}) const {
    const auto peak = peak_span(date, utc_offset);
    return {peak.first - offpeak_duration, peak.first};
  }
};

/// Per-phase equivalent currents (amperes) of the off-peak and peak periods.
struct PeriodEquivalents {
  PhaseCurrents offpeak{};
  PhaseCurrents peak{};
};

inline constexpr double kPeakFloorFraction = 0.9;

inline double rms(std::span<const double> samples) {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (double s : samples) acc += s * s;
  return std::sqrt(acc / static_cast<double>(samples.size()));
}

inline double max_phase(const PhaseCurrents& c) { return std::max({c[0], c[1], c[2]}); }
inline double mean_phase(const PhaseCurrents& c) { return (c[0] + c[1] + c[2]) / 3.0; }

/// RMS equivalents per phase; the peak equivalent of each phase is floored at 90% of that phase's
/// largest half-hourly sample.
inline PeriodEquivalents equivalent_currents(const LoadSeries& series, Date date, const DayWindow& window,
                                             std::chrono::minutes utc_offset = {}) {
  window.validate();
  const auto [off_begin, off_end] = window.offpeak_span(date, utc_offset);
  const auto [peak_begin, peak_end] = window.peak_span(date, utc_offset);
  if (!series.covers(off_begin, off_end)) {
    throw GapError(fmt::format("{} {}: missing samples in off-peak window", series.transformer_id, format_date(date)));
  }
  if (!series.covers(peak_begin, peak_end)) {
    throw GapError(fmt::format("{} {}: missing samples in peak window", series.transformer_id, format_date(date)));
  }
  const auto [off_lo, off_hi] = series.range(off_begin, off_end);
  const auto [pk_lo, pk_hi] = series.range(peak_begin, peak_end);
  PeriodEquivalents eq;
  for (int p = 0; p < 3; ++p) {
    eq.offpeak[p] = rms(series.phase(p, off_lo, off_hi));
    const auto peak = series.phase(p, pk_lo, pk_hi);
    const double largest = *std::max_element(peak.begin(), peak.end());
    eq.peak[p] = std::max(rms(peak), kPeakFloorFraction * largest);
  }
  return eq;
}

inline LoadFactors load_factors(const PeriodEquivalents& eq, double rated_phase_current) {
  if (!(rated_phase_current > 0.0)) throw ParameterError("rated phase current must be positive");
  return LoadFactors{
      .k_oil_offpeak = mean_phase(eq.offpeak) / rated_phase_current,
      .k_oil_peak = mean_phase(eq.peak) / rated_phase_current,
      .k_winding_offpeak = max_phase(eq.offpeak) / rated_phase_current,
      .k_winding_peak = max_phase(eq.peak) / rated_phase_current,
  };
}

inline LoadFactors equivalent_load_factors(const LoadSeries& series, Date date, const DayWindow& window,
                                           double rated_phase_current, std::chrono::minutes utc_offset = {}) {
  if (!(rated_phase_current > 0.0)) throw ParameterError("rated phase current must be positive");
  return load_factors(equivalent_currents(series, date, window, utc_offset), rated_phase_current);
}

/// Ultimate top-oil rise over ambient for a steady oil load factor.
inline double steady_top_oil_rise(double k_oil, const ThermalParams& p) {
  return p.rated_top_oil_rise *
         std::pow((k_oil * k_oil * p.loss_ratio + 1.0) / (p.loss_ratio + 1.0), p.oil_exponent);
}

/// Ultimate hotspot rise over top oil for a steady winding load factor.
inline double steady_hotspot_rise(double k_winding, const ThermalParams& p) {
  return p.rated_hotspot_rise * std::pow(k_winding, 2.0 * p.winding_exponent);
}

struct HotspotBreakdown {
  double ambient = 0.0;
  double top_oil_rise = 0.0;
  double hotspot_rise = 0.0;
  [[nodiscard]] double hotspot() const { return ambient + top_oil_rise + hotspot_rise; }
};

/// Hotspot after `peak_minutes` of peak loading, starting from the off-peak steady state. Each rise
/// moves exponentially from its off-peak value towards its peak value.
inline HotspotBreakdown hotspot_breakdown(const LoadFactors& f, double ambient, const ThermalParams& p,
                                          double peak_minutes) {
  if (!(peak_minutes > 0.0)) throw ParameterError("peak duration must be positive");
  const double oil_initial = steady_top_oil_rise(f.k_oil_offpeak, p);
  const double oil_ultimate = steady_top_oil_rise(f.k_oil_peak, p);
  const double hs_initial = steady_hotspot_rise(f.k_winding_offpeak, p);
  const double hs_ultimate = steady_hotspot_rise(f.k_winding_peak, p);
  return HotspotBreakdown{
      .ambient = ambient,
      .top_oil_rise = oil_initial + (oil_ultimate - oil_initial) * -std::expm1(-peak_minutes / p.tau_oil),
      .hotspot_rise = hs_initial + (hs_ultimate - hs_initial) * -std::expm1(-peak_minutes / p.tau_winding),
  };
}

inline double hotspot_temperature(const LoadFactors& f, double ambient, const ThermalParams& p, double peak_minutes) {
  return hotspot_breakdown(f, ambient, p, peak_minutes).hotspot();
}

}  // namespace dtr

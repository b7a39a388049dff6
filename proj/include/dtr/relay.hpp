#pragma once

#include <cmath>

#include <fmt/format.h>

#include "dtr/error.hpp"

namespace dtr {

/// Thermal (ANSI 49) element settings: the scale factor multiplies the rated phase current.
struct RelaySettings {
  double scale_factor = 1.0;
  double rated_phase_current = 1.0;  // amperes

  void validate() const {
    if (!(scale_factor > 0.0)) throw ParameterError("scale factor must be positive");
    if (!(rated_phase_current > 0.0)) throw ParameterError("rated phase current must be positive");
  }
};

// Winding and oil weights of the relay's dual time-constant thermal image.
inline constexpr double kRelayWindingWeight = 0.4;
inline constexpr double kRelayOilWeight = 0.6;

inline double scaled_rating(const RelaySettings& s) {
  s.validate();
  return s.scale_factor * s.rated_phase_current;
}

/// Fraction of the pre-load heating still present after `t` minutes.
inline double relay_memory(double t, double tau_winding, double tau_oil) {
  return kRelayWindingWeight * std::exp(-t / tau_winding) + kRelayOilWeight * std::exp(-t / tau_oil);
}

/// Steady current that trips the dual time-constant element exactly `time_to_trip` minutes after
/// stepping up from `preload`:
///
///   I_trip^2 = (0.4 I_i^2 e^(-t/tw) + 0.6 I_i^2 e^(-t/to) - Î^2) / (0.4 e^(-t/tw) + 0.6 e^(-t/to) - 1)
///
/// Evaluated with numerator and denominator negated, which is the same quotient. Throws
/// AlreadyTrippingError when the pre-load alone reaches the boundary by `time_to_trip`.
inline double trip_current(const RelaySettings& s, double preload, double time_to_trip, double tau_winding,
                           double tau_oil) {
  const double rating = scaled_rating(s);
  if (!(time_to_trip > 0.0)) throw ParameterError("time to trip must be positive");
  if (!(preload >= 0.0)) throw ParameterError("preload must be non-negative");
  if (!(tau_winding > 0.0 && tau_oil > 0.0)) throw ParameterError("relay time constants must be positive");
  const double memory = relay_memory(time_to_trip, tau_winding, tau_oil);
  const double numerator = rating * rating - memory * preload * preload;
  const double denominator = 1.0 - memory;
  if (!(numerator > 0.0)) {
    throw AlreadyTrippingError(fmt::format(
        "preload {:.3f} A already exceeds the thermal boundary of {:.3f} A at t = {} min", preload, rating,
        time_to_trip));
  }
  return std::sqrt(numerator / denominator);
}

/// Smallest scale factor at which `preload` does not trip on its own within `time_to_trip`.
inline double min_feasible_scale_factor(double rated_phase_current, double preload, double time_to_trip,
                                        double tau_winding, double tau_oil) {
  return std::sqrt(relay_memory(time_to_trip, tau_winding, tau_oil)) * preload / rated_phase_current;
}

}  // namespace dtr

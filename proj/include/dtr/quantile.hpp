#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "dtr/error.hpp"

namespace dtr {

/// Pinball (quantile) loss of predicting `y_pred` for `y_true` at level `q`.
inline double pinball_loss(double y_true, double y_pred, double q) {
  if (!(q > 0.0 && q < 1.0)) throw ParameterError("quantile level must lie in (0, 1)");
  return y_true >= y_pred ? q * (y_true - y_pred) : (1.0 - q) * (y_pred - y_true);
}

inline double mean_pinball_loss(std::span<const double> y_true, std::span<const double> y_pred, double q) {
  if (y_true.size() != y_pred.size() || y_true.empty()) throw ParameterError("pinball loss needs aligned non-empty inputs");
  double acc = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) acc += pinball_loss(y_true[i], y_pred[i], q);
  return acc / static_cast<double>(y_true.size());
}

/// Linear-interpolation sample quantile (the usual "type 7" definition). Reorders `values`.
inline double sample_quantile(std::span<double> values, double q) {
  if (values.empty()) throw ParameterError("quantile of an empty sample");
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(lo);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double a = values[lo];
  if (frac == 0.0 || lo + 1 >= values.size()) return a;
  const double b = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
  return a + frac * (b - a);
}

inline double sample_quantile(std::vector<double> values, double q) {
  return sample_quantile(std::span<double>(values), q);
}

}  // namespace dtr

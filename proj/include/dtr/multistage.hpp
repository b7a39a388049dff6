#pragma once

#include <algorithm>
#include <array>
#include <span>
#include <string>
#include <vector>

#include "dtr/error.hpp"
#include "dtr/features.hpp"
#include "dtr/forecaster.hpp"
#include "dtr/labeler.hpp"

namespace dtr {

/// The six per-period, per-phase load targets, in model order.
enum class LoadTarget { peak_a, peak_b, peak_c, offpeak_a, offpeak_b, offpeak_c };
inline constexpr std::size_t kLoadTargets = 6;

inline double load_target(const DayTargets& t, std::size_t which) {
  return which < 3 ? t.peak_mean[which] : t.offpeak_mean[which - 3];
}

/// Scale-factor percentile p is derived from load percentile 1 - p.
inline std::vector<double> inverted_percentiles(const std::vector<double>& k_percentiles) {
  std::vector<double> out;
  for (auto it = k_percentiles.rbegin(); it != k_percentiles.rend(); ++it) out.push_back(1.0 - *it);
  return out;
}

/// Load-table twin of make_table: same features, one target per load model.
inline TrainingTable make_load_table(std::span<const FeatureRow> rows, const std::vector<std::string>& columns,
                                     std::size_t which) {
  TrainingTable full(FeatureVector::names(), FeatureVector::categorical_flags());
  for (const auto& r : rows) {
    full.add_row(r.features.values(), load_target(r.targets, which), row_key(r.features.transformer_id, r.features.date));
  }
  return columns == FeatureVector::names() ? full : full.select(columns);
}

struct LoadModels {
  std::array<QuantileModelSet, kLoadTargets> models;
  std::vector<double> k_percentiles;  // scale-factor percentiles these models serve
};

/// Trains the six load models for one cluster at the load percentiles implied by `k_percentiles`.
inline LoadModels train_load_models(int cluster_id, std::span<const FeatureRow> train_rows,
                                    std::span<const FeatureRow> validation_rows, const std::vector<std::string>& columns,
                                    const std::vector<double>& k_percentiles, const BoostingParams& params,
                                    std::uint64_t seed) {
  validate_percentiles(k_percentiles);
  if (train_rows.size() + validation_rows.size() < kMinTrainingRows) {
    throw InsufficientDataError(fmt::format("cluster {}: load models need at least {} rows", cluster_id, kMinTrainingRows));
  }
  LoadModels out;
  out.k_percentiles = k_percentiles;
  const auto load_p = inverted_percentiles(k_percentiles);
  for (std::size_t t = 0; t < kLoadTargets; ++t) {
    const auto train = make_load_table(train_rows, columns, t);
    const auto val = make_load_table(validation_rows, columns, t);
    out.models[t] = QuantileModelSet::train(cluster_id, load_p, params, mix_seed(seed, 0x10adULL + t), train, &val);
  }
  return out;
}

/// Per-target load predictions at each load percentile: loads[target][i] pairs with load percentile i.
using LoadPredictions = std::array<std::vector<double>, kLoadTargets>;

inline LoadPredictions predict_loads(const LoadModels& m, std::span<const double> x) {
  LoadPredictions out;
  for (std::size_t t = 0; t < kLoadTargets; ++t) out[t] = m.models[t].predict(x);
  return out;
}

/// Converts predicted loads into scale-factor percentiles. The k at percentile p runs the labeler on
/// a synthetic day whose equivalents are the predicted loads at percentile 1 - p (sorted outputs, so
/// index i at load percentile order maps to index n-1-i at scale-factor order).
inline std::vector<double> scale_factor_from_loads(const LoadPredictions& loads, const DayInputs& day_template,
                                                   const LabelerConfig& cfg = {}) {
  const std::size_t n = loads[0].size();
  for (const auto& v : loads) {
    if (v.size() != n) throw ParameterError("load predictions must cover the same percentiles");
  }
  std::vector<double> k(n);
  for (std::size_t i = 0; i < n; ++i) {
    DayInputs day = day_template;
    for (std::size_t ph = 0; ph < 3; ++ph) {
      day.equivalents.peak[ph] = std::max(0.0, loads[ph][i]);
      day.equivalents.offpeak[ph] = std::max(0.0, loads[3 + ph][i]);
    }
    k[n - 1 - i] = optimal_scale_factor(day, cfg).k_opt;
  }
  std::sort(k.begin(), k.end());
  return k;
}

}  // namespace dtr

#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "dtr/calendar.hpp"
#include "dtr/error.hpp"
#include "dtr/gbdt.hpp"
#include "dtr/io.hpp"
#include "dtr/quantile.hpp"
#include "dtr/random.hpp"
#include "dtr/table.hpp"

namespace dtr {

inline constexpr std::size_t kMinTrainingRows = 50;
inline constexpr double kValidationFraction = 0.2;

inline const std::vector<double>& default_percentiles() {
  static const std::vector<double> p{0.02, 0.05, 0.5, 0.95};
  return p;
}

inline void validate_percentiles(const std::vector<double>& p) {
  if (p.empty()) throw ConfigError("percentile grid is empty");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] > 0.0 && p[i] < 1.0)) throw ConfigError(fmt::format("percentile {} outside (0, 1)", p[i]));
    if (i > 0 && !(p[i] > p[i - 1])) throw ConfigError("percentiles must be strictly increasing");
  }
}

/// Fits one quantile ensemble. When `validation` is non-empty the round count is chosen by early
/// stopping on it and the model is then refitted on training plus validation rows.
inline QuantileBooster train_quantile_model(const TrainingTable& train, double percentile, const BoostingParams& params,
                                            std::uint64_t seed, const TrainingTable* validation = nullptr) {
  const std::size_t total = train.n_rows() + (validation ? validation->n_rows() : 0);
  if (total < kMinTrainingRows) {
    throw InsufficientDataError(fmt::format("quantile model needs at least {} rows, got {}", kMinTrainingRows, total));
  }
  if (validation == nullptr || validation->n_rows() == 0) {
    QuantileBooster b(percentile, params, seed);
    b.fit(train);
    return b;
  }
  QuantileBooster pilot(percentile, params, seed);
  const int best = pilot.fit(train, validation);
  BoostingParams refit = params;
  refit.n_rounds = std::max(best, 1);
  TrainingTable all = train;
  all.append(*validation);
  QuantileBooster b(percentile, refit, seed);
  b.fit(all);
  return b;
}

/// Ensembles for one cluster, one per percentile, sharing a feature schema.
class QuantileModelSet {
 public:
  QuantileModelSet() = default;

  /// Trains every percentile on `train`; `validation` (may be null) drives early stopping.
  static QuantileModelSet train(int cluster_id, const std::vector<double>& percentiles, const BoostingParams& params,
                                std::uint64_t seed, const TrainingTable& train, const TrainingTable* validation = nullptr) {
    validate_percentiles(percentiles);
    QuantileModelSet s;
    s.cluster_id_ = cluster_id;
    s.percentiles_ = percentiles;
    s.params_ = params;
    s.columns_ = train.columns;
    s.categorical_ = train.categorical;
    for (std::size_t i = 0; i < percentiles.size(); ++i) {
      s.boosters_.push_back(train_quantile_model(train, percentiles[i], params, mix_seed(seed, i), validation));
    }
    return s;
  }

  /// Rebuilds trainable state from stored ensembles and the rows they were trained on.
  static QuantileModelSet resume(int cluster_id, std::vector<QuantileEnsemble> models, const BoostingParams& params,
                                 const TrainingTable& data) {
    QuantileModelSet s;
    s.cluster_id_ = cluster_id;
    s.params_ = params;
    s.columns_ = data.columns;
    s.categorical_ = data.categorical;
    for (auto& m : models) {
      s.percentiles_.push_back(m.quantile);
      BoostingParams p = params;
      p.n_rounds = std::max<int>(1, static_cast<int>(m.trees.size()));
      s.boosters_.emplace_back(std::move(m), p, data);
    }
    validate_percentiles(s.percentiles_);
    return s;
  }

  [[nodiscard]] int cluster_id() const { return cluster_id_; }
  [[nodiscard]] const std::vector<double>& percentiles() const { return percentiles_; }
  [[nodiscard]] const std::vector<std::string>& columns() const { return columns_; }
  [[nodiscard]] const QuantileEnsemble& model(std::size_t i) const { return boosters_.at(i).model(); }
  [[nodiscard]] std::size_t size() const { return boosters_.size(); }

  [[nodiscard]] std::uint64_t schema_hash() const {
    TrainingTable t(columns_, categorical_);
    return t.schema_hash();
  }

  void check_schema(const std::vector<std::string>& columns) const {
    if (columns != columns_) throw ParameterError("feature schema does not match the trained models");
  }

  /// Raw per-percentile outputs, in percentile order (may cross).
  [[nodiscard]] std::vector<double> predict_raw(std::span<const double> x) const {
    if (x.size() != columns_.size()) {
      throw ParameterError(fmt::format("feature row has {} values, models expect {}", x.size(), columns_.size()));
    }
    std::vector<double> out;
    out.reserve(boosters_.size());
    for (const auto& b : boosters_) out.push_back(b.model().predict(x));
    return out;
  }

  /// Outputs sorted ascending so they never cross.
  [[nodiscard]] std::vector<double> predict(std::span<const double> x) const {
    auto v = predict_raw(x);
    std::sort(v.begin(), v.end());
    return v;
  }

  /// Appends realised rows and adds `rounds` boosting rounds to every ensemble.
  void incremental_update(const TrainingTable& rows, int rounds) {
    if (rows.n_rows() == 0 || rounds <= 0) return;
    check_schema(rows.columns);
    for (auto& b : boosters_) b.append_and_boost(rows, rounds);
  }

  [[nodiscard]] double training_loss(std::size_t i) const { return boosters_.at(i).training_loss(); }

  void write(std::ostream& out) const {
    out << "dtr-quantile-models 1\n";
    out << "cluster " << cluster_id_ << '\n';
    out << "schema " << hex64(schema_hash()) << '\n';
    out << "models " << boosters_.size() << '\n';
    for (const auto& b : boosters_) write_ensemble(out, b.model());
  }

  struct Stored {
    int cluster_id = 0;
    std::uint64_t schema = 0;
    std::vector<QuantileEnsemble> models;
  };

  static Stored read(std::istream& in) {
    std::string word, version;
    Stored s;
    std::string schema;
    std::size_t n = 0;
    in >> word >> version;
    if (word != "dtr-quantile-models" || version != "1") throw DataValidationError("not a quantile model store");
    in >> word >> s.cluster_id >> word >> schema >> word >> n;
    if (!in) throw DataValidationError("model store: malformed header");
    s.schema = std::stoull(schema, nullptr, 16);
    for (std::size_t i = 0; i < n; ++i) s.models.push_back(read_ensemble(in));
    return s;
  }

 private:
  int cluster_id_ = 0;
  std::vector<double> percentiles_;
  BoostingParams params_;
  std::vector<std::string> columns_;
  std::vector<bool> categorical_;
  std::vector<QuantileBooster> boosters_;
};

/// Day-ahead quantile predictions for one (transformer, day).
struct PredictionSet {
  std::string transformer_id;
  Date date{};
  std::vector<double> percentiles;
  std::vector<double> k;  // non-decreasing

  [[nodiscard]] double at(double percentile) const {
    for (std::size_t i = 0; i < percentiles.size(); ++i) {
      if (std::abs(percentiles[i] - percentile) < 1e-12) return k[i];
    }
    throw ParameterError(fmt::format("no prediction at percentile {}", percentile));
  }
  [[nodiscard]] bool non_crossing() const { return std::is_sorted(k.begin(), k.end()); }
};

inline PredictionSet predict_quantiles(const QuantileModelSet& models, std::string transformer_id, Date date,
                                       std::span<const double> x) {
  return PredictionSet{std::move(transformer_id), date, models.percentiles(), models.predict(x)};
}

/// Replicates each row `n_replicas` times; replica 0 is the original and the others have their
/// `peak_ambient` shifted uniformly within +-radius. Targets are unchanged.
inline TrainingTable expand_multi_temperature(const TrainingTable& rows, int n_replicas, double radius, std::uint64_t seed,
                                              std::string_view temperature_column = "peak_ambient") {
  if (n_replicas < 1) throw ParameterError("need at least one replica");
  if (!(radius >= 0.0)) throw ParameterError("radius must be non-negative");
  if (n_replicas == 1) return rows;
  const std::size_t tc = rows.column_index(temperature_column);
  TrainingTable out(rows.columns, rows.categorical);
  std::vector<double> x(rows.n_cols());
  for (std::size_t r = 0; r < rows.n_rows(); ++r) {
    Rng rng(mix_seed(seed, rows.keys[r]));
    const auto src = rows.row(r);
    for (int rep = 0; rep < n_replicas; ++rep) {
      std::copy(src.begin(), src.end(), x.begin());
      if (rep > 0) x[tc] += rng.uniform(-radius, radius);
      out.add_row(x, rows.target[r], rep == 0 ? rows.keys[r] : mix_seed(rows.keys[r], static_cast<std::uint64_t>(rep)));
    }
  }
  return out;
}

/// Chronological split: the last `fraction` of distinct dates go to validation.
template <class DateOf>
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> chronological_split(std::size_t n_rows, DateOf date_of,
                                                                                   double fraction = kValidationFraction) {
  std::vector<Date> dates;
  for (std::size_t i = 0; i < n_rows; ++i) dates.push_back(date_of(i));
  std::vector<Date> distinct = dates;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::pair<std::vector<std::size_t>, std::vector<std::size_t>> out;
  if (distinct.size() < 2) {
    for (std::size_t i = 0; i < n_rows; ++i) out.first.push_back(i);
    return out;
  }
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(fraction * static_cast<double>(distinct.size())));
  const Date cutoff = distinct[distinct.size() - n_val];
  for (std::size_t i = 0; i < n_rows; ++i) (dates[i] < cutoff ? out.first : out.second).push_back(i);
  return out;
}

}  // namespace dtr

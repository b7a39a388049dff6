#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "dtr/clustering.hpp"
#include "dtr/config.hpp"
#include "dtr/dataset.hpp"
#include "dtr/evaluation.hpp"
#include "dtr/features.hpp"
#include "dtr/forecaster.hpp"
#include "dtr/io.hpp"
#include "dtr/labeler.hpp"
#include "dtr/multistage.hpp"

namespace dtr {

namespace fs = std::filesystem;

/// Artifact locations under one output directory.
struct Paths {
  fs::path root;

  [[nodiscard]] fs::path data() const { return root / "data"; }
  [[nodiscard]] fs::path meta() const { return data() / "meta.csv"; }
  [[nodiscard]] fs::path loads() const { return data() / "loads.csv"; }
  [[nodiscard]] fs::path weather() const { return data() / "weather.csv"; }
  [[nodiscard]] fs::path holidays() const { return data() / "holidays.txt"; }
  [[nodiscard]] fs::path labels() const { return root / "labels.csv"; }
  [[nodiscard]] fs::path features() const { return root / "features.csv"; }
  [[nodiscard]] fs::path assignments() const { return root / "assignments.csv"; }
  [[nodiscard]] fs::path models() const { return root / "models"; }
  [[nodiscard]] fs::path retained() const { return models() / "retained_features.txt"; }
  [[nodiscard]] fs::path selection() const { return models() / "selection.json"; }
  [[nodiscard]] fs::path predictions() const { return root / "predictions"; }
  [[nodiscard]] fs::path prediction_file(std::string_view method) const {
    return predictions() / fmt::format("{}.csv", method);
  }
  [[nodiscard]] fs::path reports() const { return root / "reports"; }
  [[nodiscard]] fs::path report() const { return reports() / "report.json"; }
  [[nodiscard]] fs::path manifests() const { return root / "manifests"; }
};

using LogFn = std::function<void(std::string_view)>;

struct StageContext {
  Config config;
  Paths paths;
  LogFn log = [](std::string_view) {};
};

// ---------------------------------------------------------------------------------------------
// Manifests

/// Records what a stage read and wrote. Paths are stored relative to the output root.
inline void write_manifest(const StageContext& ctx, std::string_view stage, const std::vector<fs::path>& inputs,
                           const std::vector<fs::path>& outputs) {
  auto rel = [&](const fs::path& p) { return fs::relative(p, ctx.paths.root).generic_string(); };
  Json j;
  j["stage"] = stage;
  j["seed"] = ctx.config.seed;
  j["config_hash"] = hex64(config_hash(ctx.config));
  j["inputs"] = Json::object();
  for (const auto& p : inputs) j["inputs"][rel(p)] = hex64(hash_file(p));
  j["outputs"] = Json::object();
  for (const auto& p : outputs) j["outputs"][rel(p)] = hex64(hash_file(p));
  write_file_atomic(ctx.paths.manifests() / fmt::format("{}.json", stage), j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------------------------
// Fleet data as read back from disk

struct FleetData {
  std::map<std::string, TransformerMeta> metas;
  std::map<std::string, WeatherSeries> weather;
  std::set<Date> holidays;
  std::map<std::string, std::map<Date, DayRecord>> days;
  std::vector<std::string> warnings;

  [[nodiscard]] DayInputs day_inputs(const std::string& id, Date date, double ambient, const DayWindow& window) const {
    const auto& meta = metas.at(id);
    return DayInputs{days.at(id).at(date).equivalents, ambient, meta.thermal, window, meta.rated_phase_current};
  }
};

inline FleetData load_fleet(const Paths& paths, const Config& cfg) {
  for (const auto& p : {paths.meta(), paths.loads(), paths.weather(), paths.holidays()}) require_artifact(p);
  FleetData f;
  for (auto& m : ingest_meta(paths.meta())) f.metas.emplace(m.transformer_id, std::move(m));
  f.weather = ingest_weather(paths.weather());
  f.holidays = ingest_holidays(paths.holidays());
  auto loads = ingest_loads(paths.loads());
  f.warnings = std::move(loads.warnings);
  for (const auto& s : loads.series) {
    if (!f.metas.count(s.transformer_id)) {
      throw DataValidationError(fmt::format("loads reference unknown transformer {}", s.transformer_id));
    }
    auto& dm = f.days[s.transformer_id];
    for (auto& rec : summarise_days(s, cfg.window, cfg.utc_offset)) dm.emplace(rec.date, rec);
  }
  for (const auto& [id, m] : f.metas) {
    if (!f.weather.count(id)) throw DataValidationError(fmt::format("no weather for site {}", id));
    f.days[id];
  }
  return f;
}

// ---------------------------------------------------------------------------------------------
// Labels CSV

inline const std::vector<std::string>& labels_header() {
  static const std::vector<std::string> h{"transformer_id",    "date",          "ambient_c",
                                          "k_oil_offpeak",     "k_oil_peak",    "k_winding_offpeak",
                                          "k_winding_peak",    "k_opt",         "boundary_flag"};
  return h;
}

inline std::string labels_csv(const std::vector<LabelRecord>& labels) {
  CsvWriter w(labels_header());
  for (const auto& l : labels) {
    w.row({l.transformer_id, format_date(l.date), fmt_double(l.ambient), fmt_double(l.factors.k_oil_offpeak),
           fmt_double(l.factors.k_oil_peak), fmt_double(l.factors.k_winding_offpeak), fmt_double(l.factors.k_winding_peak),
           fmt_double(l.k_opt), std::string(to_string(l.boundary_flag))});
  }
  return w.str();
}

inline std::vector<LabelRecord> parse_labels(const CsvTable& t) {
  require_header(t, labels_header(), "labels");
  std::vector<LabelRecord> out;
  for (const auto& r : t.rows) {
    LabelRecord l;
    l.transformer_id = r[0];
    l.date = parse_date(r[1]);
    l.ambient = parse_double(r[2]);
    l.factors = {parse_double(r[3]), parse_double(r[4]), parse_double(r[5]), parse_double(r[6])};
    l.k_opt = parse_double(r[7]);
    l.boundary_flag = parse_boundary_flag(r[8]);
    out.push_back(std::move(l));
  }
  return out;
}

inline std::map<std::string, std::map<Date, LabelRecord>> index_labels(const std::vector<LabelRecord>& labels) {
  std::map<std::string, std::map<Date, LabelRecord>> out;
  for (const auto& l : labels) out[l.transformer_id][l.date] = l;
  return out;
}

// ---------------------------------------------------------------------------------------------
// Assignments CSV

inline const std::vector<std::string>& assignments_header() {
  static const std::vector<std::string> h{"transformer_id", "cluster_id", "pipeline", "n_clusters"};
  return h;
}

inline std::string assignments_csv(const std::vector<ClusterAssignment>& all) {
  CsvWriter w(assignments_header());
  for (const auto& a : all) {
    for (const auto& [id, c] : a.cluster_of) {
      w.row({id, std::to_string(c), std::string(to_string(a.pipeline)), std::to_string(a.n_clusters)});
    }
  }
  return w.str();
}

inline std::map<Pipeline, ClusterAssignment> parse_assignments(const CsvTable& t) {
  require_header(t, assignments_header(), "assignments");
  std::map<Pipeline, ClusterAssignment> out;
  for (const auto& r : t.rows) {
    const auto p = parse_pipeline(r[2]);
    auto& a = out[p];
    a.pipeline = p;
    a.n_clusters = static_cast<int>(parse_double(r[3]));
    a.cluster_of[r[0]] = static_cast<int>(parse_double(r[1]));
  }
  for (const auto& [p, a] : out) a.validate();
  return out;
}

// ---------------------------------------------------------------------------------------------
// Predictions CSV

inline const std::vector<std::string>& predictions_header() {
  static const std::vector<std::string> h{"transformer_id", "date", "method", "percentile", "k_pred"};
  return h;
}

inline std::string predictions_csv(const std::vector<PredictionSet>& preds, std::string_view method) {
  CsvWriter w(predictions_header());
  for (const auto& p : preds) {
    for (std::size_t i = 0; i < p.percentiles.size(); ++i) {
      w.row({p.transformer_id, format_date(p.date), std::string(method), fmt_double(p.percentiles[i]), fmt_double(p.k[i])});
    }
  }
  return w.str();
}

inline std::vector<PredictionSet> parse_predictions(const CsvTable& t) {
  require_header(t, predictions_header(), "predictions");
  std::map<DayKey, PredictionSet> sets;
  for (const auto& r : t.rows) {
    const DayKey key{r[0], parse_date(r[1])};
    auto& s = sets[key];
    s.transformer_id = key.first;
    s.date = key.second;
    s.percentiles.push_back(parse_double(r[3]));
    s.k.push_back(parse_double(r[4]));
  }
  std::vector<PredictionSet> out;
  for (auto& [k, s] : sets) out.push_back(std::move(s));
  return out;
}

// ---------------------------------------------------------------------------------------------
// Feature rows

/// Realised feature rows (true temperatures) for every labelled day with a week of history.
inline std::vector<FeatureRow> build_feature_rows(const FleetData& fleet,
                                                  const std::map<std::string, std::map<Date, LabelRecord>>& labels,
                                                  const Config& cfg) {
  std::vector<FeatureRow> rows;
  for (const auto& [id, meta] : fleet.metas) {
    TransformerHistory h{&meta, &fleet.weather.at(id), fleet.days.at(id), {}};
    if (const auto it = labels.find(id); it != labels.end()) h.labels = it->second;
    for (const auto& [date, label] : h.labels) {
      const auto lag7 = date - std::chrono::days{7};
      const auto lag1 = date - std::chrono::days{1};
      if (!h.labels.count(lag1) || !h.labels.count(lag7) || !h.days.count(lag1) || !h.days.count(lag7)) continue;
      FeatureRow r;
      r.features = build_features(h, date, fleet.holidays, FeatureOptions{cfg.ewma_alpha, TemperatureSource::truth});
      const auto& day = h.days.at(date);
      r.targets = DayTargets{label.k_opt, day.peak_mean, day.offpeak_mean};
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

/// Dates of every label, split chronologically into training and holdout.
inline DateSplit split_dates(const std::map<std::string, std::map<Date, LabelRecord>>& labels, const SplitSpec& spec) {
  std::vector<Date> dates;
  for (const auto& [id, m] : labels) {
    for (const auto& [d, l] : m) dates.push_back(d);
  }
  return split(std::move(dates), spec);
}

/// Maps full feature vectors onto a retained column subset.
struct ColumnMap {
  std::vector<std::string> names;
  std::vector<std::size_t> index;

  explicit ColumnMap(std::vector<std::string> columns) : names(std::move(columns)) {
    const auto& all = FeatureVector::names();
    for (const auto& n : names) {
      const auto it = std::find(all.begin(), all.end(), n);
      if (it == all.end()) throw DataValidationError(fmt::format("unknown feature column '{}'", n));
      index.push_back(static_cast<std::size_t>(it - all.begin()));
    }
  }
  [[nodiscard]] std::vector<double> apply(const FeatureVector& f) const {
    const auto v = f.values();
    std::vector<double> out;
    out.reserve(index.size());
    for (auto i : index) out.push_back(v[i]);
    return out;
  }
};

inline std::vector<std::string> read_retained(const fs::path& path) {
  std::vector<std::string> out;
  std::istringstream in(read_file(path));
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(line);
  }
  if (out.empty()) throw DataValidationError("retained feature list is empty");
  return out;
}

// ---------------------------------------------------------------------------------------------
// Clustering descriptors

/// Features fed to the per-transformer ridge models: everything except the lagged labels, the id
/// and metadata that is constant within a transformer.
inline std::vector<std::string> ridge_columns() {
  std::vector<std::string> out;
  for (const auto& n : FeatureVector::names()) {
    if (n == "lag1_k_opt" || n == "lag7_k_opt" || n == "transformer_id" || n == "rated_power" || n == "num_customers") continue;
    out.push_back(n);
  }
  return out;
}

inline std::vector<std::string> descriptor_columns() {
  std::vector<std::string> out;
  for (const auto& n : FeatureVector::names()) {
    if (n != "transformer_id") out.push_back(n);
  }
  return out;
}

struct Descriptors {
  std::vector<std::string> ids;
  Matrix ridge;   // one row of ridge weights per transformer
  Matrix scaled;  // one row of mean feature values per transformer
};

inline Descriptors clustering_descriptors(const std::vector<FeatureRow>& train_rows, double lambda) {
  Descriptors d;
  std::map<std::string, std::vector<const FeatureRow*>> by_id;
  for (const auto& r : train_rows) by_id[r.features.transformer_id].push_back(&r);
  for (const auto& [id, v] : by_id) d.ids.push_back(id);

  const ColumnMap rc(ridge_columns());
  Matrix all(static_cast<Eigen::Index>(train_rows.size()), static_cast<Eigen::Index>(rc.names.size()));
  for (std::size_t i = 0; i < train_rows.size(); ++i) {
    const auto x = rc.apply(train_rows[i].features);
    for (std::size_t c = 0; c < x.size(); ++c) all(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = x[c];
  }
  const auto scaling = fit_scaling(all);
  std::map<std::string, RidgeData> data;
  std::map<std::string, std::vector<Eigen::Index>> rows_of;
  for (std::size_t i = 0; i < train_rows.size(); ++i) rows_of[train_rows[i].features.transformer_id].push_back(static_cast<Eigen::Index>(i));
  const Matrix z = scaling.apply(all);
  for (const auto& [id, idx] : rows_of) {
    RidgeData rd;
    rd.x.resize(static_cast<Eigen::Index>(idx.size()), z.cols());
    rd.y.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      rd.x.row(static_cast<Eigen::Index>(i)) = z.row(idx[i]);
      rd.y(static_cast<Eigen::Index>(i)) = train_rows[static_cast<std::size_t>(idx[i])].targets.k_opt;
    }
    data.emplace(id, std::move(rd));
  }
  const auto weights = per_transformer_ridge_weights(data, lambda);
  d.ridge.resize(static_cast<Eigen::Index>(d.ids.size()), z.cols());
  for (std::size_t i = 0; i < d.ids.size(); ++i) d.ridge.row(static_cast<Eigen::Index>(i)) = weights.at(d.ids[i]).transpose();

  const ColumnMap sc(descriptor_columns());
  d.scaled = Matrix::Zero(static_cast<Eigen::Index>(d.ids.size()), static_cast<Eigen::Index>(sc.names.size()));
  for (std::size_t i = 0; i < d.ids.size(); ++i) {
    const auto& rows = by_id.at(d.ids[i]);
    for (const auto* r : rows) {
      const auto x = sc.apply(r->features);
      for (std::size_t c = 0; c < x.size(); ++c) d.scaled(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) += x[c];
    }
    d.scaled.row(static_cast<Eigen::Index>(i)) /= static_cast<double>(rows.size());
  }
  return d;
}

// ---------------------------------------------------------------------------------------------
// Model training helpers

struct TrainingRows {
  std::vector<FeatureRow> fit;         // early-stopping training part
  std::vector<FeatureRow> validation;  // chronologically last part of the training period
  [[nodiscard]] std::vector<FeatureRow> all() const {
    auto v = fit;
    v.insert(v.end(), validation.begin(), validation.end());
    return v;
  }
};

inline TrainingRows training_rows(const std::vector<FeatureRow>& rows, const DateSplit& split, double validation_fraction) {
  const std::set<Date> train(split.train_validation.begin(), split.train_validation.end());
  std::vector<FeatureRow> in_train;
  for (const auto& r : rows) {
    if (train.count(r.features.date)) in_train.push_back(r);
  }
  const auto parts = chronological_split(in_train.size(), [&](std::size_t i) { return in_train[i].features.date; },
                                         validation_fraction);
  TrainingRows out;
  for (auto i : parts.first) out.fit.push_back(in_train[i]);
  for (auto i : parts.second) out.validation.push_back(in_train[i]);
  return out;
}

inline std::vector<FeatureRow> cluster_rows(const std::vector<FeatureRow>& rows, const ClusterAssignment& a, int cluster) {
  std::vector<FeatureRow> out;
  for (const auto& r : rows) {
    if (a.at(r.features.transformer_id) == cluster) out.push_back(r);
  }
  return out;
}

enum class DirectVariant { single_temperature, multi_temperature };

struct DirectSpec {
  DirectVariant variant = DirectVariant::single_temperature;
  std::vector<double> percentiles;
  std::vector<std::string> columns;
};

inline std::uint64_t model_seed(const Config& cfg, std::string_view family, int cluster) {
  return mix_seed(mix_seed(cfg.seed, fnv1a(family)), static_cast<std::uint64_t>(cluster));
}

inline TrainingTable direct_table(std::span<const FeatureRow> rows, const DirectSpec& spec, const Config& cfg) {
  auto t = make_table(rows, spec.columns);
  if (spec.variant == DirectVariant::multi_temperature) {
    t = expand_multi_temperature(t, cfg.multi_temp_replicas, cfg.multi_temp_radius, mix_seed(cfg.seed, fnv1a("multi-temp")));
  }
  return t;
}

inline std::string_view family_name(DirectVariant v) {
  return v == DirectVariant::single_temperature ? "direct" : "multitemp";
}

inline QuantileModelSet train_direct(const TrainingRows& rows, const ClusterAssignment& a, int cluster,
                                     const DirectSpec& spec, const Config& cfg) {
  const auto fit = cluster_rows(rows.fit, a, cluster);
  const auto val = cluster_rows(rows.validation, a, cluster);
  const auto tf = direct_table(fit, spec, cfg);
  const auto tv = direct_table(val, spec, cfg);
  return QuantileModelSet::train(cluster, spec.percentiles, cfg.boosting, model_seed(cfg, family_name(spec.variant), cluster),
                                 tf, &tv);
}

// ---------------------------------------------------------------------------------------------
// Holdout replay: predict each holdout day, then retrain on its realised rows

struct DirectModels {
  DirectSpec spec;
  const ClusterAssignment* assignment = nullptr;
  std::map<int, QuantileModelSet> clusters;
};

struct MultistageModels {
  std::vector<std::string> columns;
  const ClusterAssignment* assignment = nullptr;
  std::map<int, LoadModels> clusters;
};

struct ReplayOutput {
  std::vector<PredictionSet> clean;
  std::vector<PredictionSet> noisy;
};

/// Noisy-temperature feature row: the target day's ambient replaced by its forecast.
inline FeatureVector forecast_features(const FleetData& fleet, const std::map<std::string, std::map<Date, LabelRecord>>& labels,
                                       const FeatureVector& realised, const Config& cfg) {
  const auto& id = realised.transformer_id;
  TransformerHistory h{&fleet.metas.at(id), &fleet.weather.at(id), fleet.days.at(id), labels.at(id)};
  return build_features(h, realised.date, fleet.holidays, FeatureOptions{cfg.ewma_alpha, TemperatureSource::forecast});
}

struct ReplayInputs {
  const FleetData* fleet = nullptr;
  const Config* config = nullptr;
  std::vector<Date> holdout;
  std::vector<FeatureRow> realised;  // holdout rows with true temperatures and realised targets
  std::map<DayKey, FeatureVector> noisy;  // prediction-time features under forecast temperatures (optional)
};

/// Runs the day-by-day holdout simulation for direct models and/or multi-stage models.
inline void replay_holdout(const ReplayInputs& in, std::vector<DirectModels*> direct, std::vector<ReplayOutput*> direct_out,
                           MultistageModels* multistage, ReplayOutput* multistage_out) {
  const auto& cfg = *in.config;
  std::map<Date, std::vector<const FeatureRow*>> by_date;
  for (const auto& r : in.realised) by_date[r.features.date].push_back(&r);
  for (auto& [d, v] : by_date) {
    std::sort(v.begin(), v.end(), [](const auto* a, const auto* b) { return a->features.transformer_id < b->features.transformer_id; });
  }
  for (const Date date : in.holdout) {
    const auto it = by_date.find(date);
    if (it == by_date.end()) continue;
    const auto& day_rows = it->second;

    for (std::size_t m = 0; m < direct.size(); ++m) {
      auto& dm = *direct[m];
      const ColumnMap cols(dm.spec.columns);
      for (const auto* r : day_rows) {
        const auto& id = r->features.transformer_id;
        const auto& models = dm.clusters.at(dm.assignment->at(id));
        direct_out[m]->clean.push_back(predict_quantiles(models, id, date, cols.apply(r->features)));
        if (const auto n = in.noisy.find({id, date}); n != in.noisy.end()) {
          direct_out[m]->noisy.push_back(predict_quantiles(models, id, date, cols.apply(n->second)));
        }
      }
    }
    if (multistage != nullptr) {
      const ColumnMap cols(multistage->columns);
      for (const auto* r : day_rows) {
        const auto& id = r->features.transformer_id;
        const auto& lm = multistage->clusters.at(multistage->assignment->at(id));
        auto run = [&](const FeatureVector& f) {
          auto day = in.fleet->day_inputs(id, date, f.peak_ambient, cfg.window);
          const auto loads = predict_loads(lm, cols.apply(f));
          return PredictionSet{id, date, lm.k_percentiles, scale_factor_from_loads(loads, day, cfg.labeler)};
        };
        multistage_out->clean.push_back(run(r->features));
        if (const auto n = in.noisy.find({id, date}); n != in.noisy.end()) multistage_out->noisy.push_back(run(n->second));
      }
    }

    if (cfg.update_rounds <= 0) continue;
    std::vector<FeatureRow> realised;
    for (const auto* r : day_rows) realised.push_back(*r);
    for (auto* dm : direct) {
      for (auto& [c, models] : dm->clusters) {
        const auto rows = cluster_rows(realised, *dm->assignment, c);
        if (rows.empty()) continue;
        models.incremental_update(direct_table(rows, dm->spec, cfg), cfg.update_rounds);
      }
    }
    if (multistage != nullptr) {
      for (auto& [c, lm] : multistage->clusters) {
        const auto rows = cluster_rows(realised, *multistage->assignment, c);
        if (rows.empty()) continue;
        for (std::size_t t = 0; t < kLoadTargets; ++t) {
          lm.models[t].incremental_update(make_load_table(rows, multistage->columns, t), cfg.update_rounds);
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------------------------
// Stages

inline void stage_synth(const StageContext& ctx) {
  const auto& cfg = ctx.config;
  ctx.log(fmt::format("synth: {} transformers x {} days, seed {}", cfg.n_transformers, cfg.n_days, cfg.seed));
  const auto fleet = generate_synthetic_fleet(cfg.seed, cfg.n_transformers, cfg.n_days, cfg.synth);
  const auto& p = ctx.paths;
  write_file_atomic(p.meta(), meta_csv(fleet.metas));
  write_file_atomic(p.loads(), loads_csv(fleet.loads));
  write_file_atomic(p.weather(), weather_csv(fleet.weather));
  write_file_atomic(p.holidays(), holidays_text(fleet.holidays));
  write_manifest(ctx, "synth", {}, {p.meta(), p.loads(), p.weather(), p.holidays()});
}

inline void stage_label(const StageContext& ctx) {
  const auto& cfg = ctx.config;
  const auto& p = ctx.paths;
  const auto fleet = load_fleet(p, cfg);
  for (const auto& w : fleet.warnings) ctx.log(fmt::format("warning: {}", w));
  std::vector<LabelRecord> labels;
  for (const auto& [id, days] : fleet.days) {
    const auto& ws = fleet.weather.at(id);
    for (const auto& [date, rec] : days) {
      if (!ws.days.count(date)) continue;
      const auto day = fleet.day_inputs(id, date, ws.at(date).ambient_true, cfg.window);
      try {
        labels.push_back(label_day(id, date, day, cfg.labeler));
      } catch (const AlreadyTrippingError& e) {
        ctx.log(fmt::format("warning: {} {} not labelled: {}", id, format_date(date), e.what()));
      }
    }
  }
  write_file_atomic(p.labels(), labels_csv(labels));
  ctx.log(fmt::format("label: {} labels", labels.size()));
  write_manifest(ctx, "label", {p.meta(), p.loads(), p.weather(), p.holidays()}, {p.labels()});
}

inline std::vector<LabelRecord> read_labels(const Paths& p) {
  require_artifact(p.labels());
  return parse_labels(read_csv(p.labels()));
}

inline std::vector<FeatureRow> read_features(const Paths& p) {
  require_artifact(p.features());
  return parse_feature_table(read_csv(p.features()));
}

inline std::map<Pipeline, ClusterAssignment> read_assignments(const Paths& p) {
  require_artifact(p.assignments());
  return parse_assignments(read_csv(p.assignments()));
}

inline void stage_cluster(const StageContext& ctx) {
  const auto& cfg = ctx.config;
  const auto& p = ctx.paths;
  const auto fleet = load_fleet(p, cfg);
  const auto labels = index_labels(read_labels(p));
  const auto rows = build_feature_rows(fleet, labels, cfg);
  write_file_atomic(p.features(), feature_table_csv(rows));

  const auto dates = split_dates(labels, cfg.split);
  const auto train = training_rows(rows, dates, cfg.validation_fraction).all();
  const auto desc = clustering_descriptors(train, cfg.ridge_lambda);
  std::vector<ClusterAssignment> all;
  for (auto pipeline : kAllPipelines) {
    const auto& m = uses_ridge(pipeline) ? desc.ridge : desc.scaled;
    all.push_back(cluster_descriptors(pipeline, desc.ids, m, mix_seed(cfg.seed, fnv1a(to_string(pipeline))), cfg.clustering));
    ctx.log(fmt::format("cluster: {} -> {} clusters", to_string(pipeline), all.back().n_clusters));
  }
  write_file_atomic(p.assignments(), assignments_csv(all));
  write_manifest(ctx, "cluster", {p.meta(), p.loads(), p.weather(), p.holidays(), p.labels()}, {p.features(), p.assignments()});
}

struct TrainOptions {
  bool multistage = false;
  bool multi_temp = false;
};

inline fs::path model_file(const Paths& p, std::string_view family, int cluster, int target = -1) {
  return target < 0 ? p.models() / fmt::format("{}_c{:02d}.txt", family, cluster)
                    : p.models() / fmt::format("{}_c{:02d}_t{}.txt", family, cluster, target);
}

inline void save_models(const fs::path& path, const QuantileModelSet& m) {
  std::ostringstream out;
  m.write(out);
  write_file_atomic(path, out.str());
}

inline QuantileModelSet::Stored load_models(const fs::path& path) {
  require_artifact(path);
  std::istringstream in(read_file(path));
  return QuantileModelSet::read(in);
}

/// Pilot-model importance used for pruning: total split gain of a median ensemble.
inline ImportanceFn pilot_importance(const Config& cfg) {
  return [&cfg](const TrainingTable& t) {
    QuantileBooster b(0.5, cfg.boosting, mix_seed(cfg.seed, fnv1a("pilot")));
    b.fit(t);
    return b.model().importance();
  };
}

inline void stage_train(const StageContext& ctx, const TrainOptions& opt) {
  const auto& cfg = ctx.config;
  const auto& p = ctx.paths;
  const auto labels = index_labels(read_labels(p));
  const auto rows = read_features(p);
  const auto assignments = read_assignments(p);
  const auto dates = split_dates(labels, cfg.split);
  const auto train = training_rows(rows, dates, cfg.validation_fraction);
  std::vector<fs::path> outputs;

  // Feature pruning on the whole training period.
  const auto all_train = train.all();
  const auto retained = prune_features(make_table(all_train, FeatureVector::names()), pilot_importance(cfg), cfg.seed);
  {
    std::string text;
    for (const auto& c : retained) text += c + "\n";
    write_file_atomic(p.retained(), text);
    outputs.push_back(p.retained());
  }
  ctx.log(fmt::format("train: {} of {} features retained", retained.size(), FeatureVector::names().size()));

  // Pipeline selection on holdout calibration.
  std::set<Date> holdout(dates.holdout.begin(), dates.holdout.end());
  ReplayInputs replay{nullptr, &cfg, dates.holdout, {}, {}};
  for (const auto& r : rows) {
    if (holdout.count(r.features.date)) replay.realised.push_back(r);
  }
  std::map<DayKey, double> truth;
  for (const auto& r : replay.realised) truth[{r.features.transformer_id, r.features.date}] = r.targets.k_opt;

  std::vector<PipelineScore> scores;
  for (auto pipeline : kAllPipelines) {
    const auto& a = assignments.at(pipeline);
    DirectModels dm{DirectSpec{DirectVariant::single_temperature, cfg.selection_percentiles, retained}, &a, {}};
    for (int c = 0; c < a.n_clusters; ++c) dm.clusters.emplace(c, train_direct(train, a, c, dm.spec, cfg));
    ReplayOutput out;
    replay_holdout(replay, {&dm}, {&out}, nullptr, nullptr);
    const double cov =
        coverage(out.clean, truth, cfg.selection_percentiles.front(), cfg.selection_percentiles.back()).fleet_mean;
    scores.push_back({pipeline, cov});
    ctx.log(fmt::format("train: pipeline {} holdout coverage {:.2f}%", to_string(pipeline), cov));
  }
  const auto chosen = scores[choose_pipeline(scores)].pipeline;
  {
    Json j;
    j["pipeline"] = to_string(chosen);
    j["coverage"] = Json::object();
    for (const auto& s : scores) j["coverage"][std::string(to_string(s.pipeline))] = s.coverage;
    j["retained_features"] = retained;
    write_file_atomic(p.selection(), j.dump(2) + "\n");
    outputs.push_back(p.selection());
  }
  ctx.log(fmt::format("train: selected {}", to_string(chosen)));

  const auto& a = assignments.at(chosen);
  for (int c = 0; c < a.n_clusters; ++c) {
    const DirectSpec spec{DirectVariant::single_temperature, cfg.percentiles, retained};
    save_models(model_file(p, "direct", c), train_direct(train, a, c, spec, cfg));
    outputs.push_back(model_file(p, "direct", c));
    if (opt.multi_temp) {
      const DirectSpec mt{DirectVariant::multi_temperature, cfg.percentiles, retained};
      save_models(model_file(p, "multitemp", c), train_direct(train, a, c, mt, cfg));
      outputs.push_back(model_file(p, "multitemp", c));
    }
    if (opt.multistage) {
      const auto fit = cluster_rows(train.fit, a, c);
      const auto val = cluster_rows(train.validation, a, c);
      const auto lm = train_load_models(c, fit, val, retained, cfg.percentiles, cfg.boosting, model_seed(cfg, "multistage", c));
      for (std::size_t t = 0; t < kLoadTargets; ++t) {
        save_models(model_file(p, "multistage", c, static_cast<int>(t)), lm.models[t]);
        outputs.push_back(model_file(p, "multistage", c, static_cast<int>(t)));
      }
    }
  }
  write_manifest(ctx, "train", {p.labels(), p.features(), p.assignments()}, outputs);
}

struct SelectionInfo {
  Pipeline pipeline = Pipeline::ridge_raw;
  std::vector<std::string> retained;
};

inline SelectionInfo read_selection(const Paths& p) {
  require_artifact(p.selection());
  require_artifact(p.retained());
  Json j;
  try {
    j = Json::parse(read_file(p.selection()));
  } catch (const Json::exception& e) {
    throw DataValidationError(fmt::format("{}: {}", p.selection().string(), e.what()));
  }
  return SelectionInfo{parse_pipeline(j.at("pipeline").get<std::string>()), read_retained(p.retained())};
}

struct PredictOptions {
  bool noisy_temp = false;
};

inline void stage_predict(const StageContext& ctx, const PredictOptions& opt) {
  const auto& cfg = ctx.config;
  const auto& p = ctx.paths;
  const auto sel = read_selection(p);
  const auto fleet = load_fleet(p, cfg);
  const auto labels = index_labels(read_labels(p));
  const auto rows = read_features(p);
  const auto assignments = read_assignments(p);
  const auto& a = assignments.at(sel.pipeline);
  const auto dates = split_dates(labels, cfg.split);
  const auto train = training_rows(rows, dates, cfg.validation_fraction);
  std::vector<fs::path> inputs{p.labels(), p.features(), p.assignments(), p.selection(), p.retained()};

  auto resume_direct = [&](DirectVariant v) {
    DirectModels dm{DirectSpec{v, cfg.percentiles, sel.retained}, &a, {}};
    for (int c = 0; c < a.n_clusters; ++c) {
      const auto path = model_file(p, family_name(v), c);
      auto stored = load_models(path);
      inputs.push_back(path);
      const auto data = direct_table(cluster_rows(train.all(), a, c), dm.spec, cfg);
      if (stored.schema != data.schema_hash()) throw DataValidationError(fmt::format("{}: schema mismatch", path.string()));
      dm.clusters.emplace(c, QuantileModelSet::resume(c, std::move(stored.models), cfg.boosting, data));
    }
    return dm;
  };

  std::vector<DirectModels> direct;
  std::vector<std::string> direct_names;
  direct.push_back(resume_direct(DirectVariant::single_temperature));
  direct_names.emplace_back("direct");
  if (fs::exists(model_file(p, "multitemp", 0))) {
    direct.push_back(resume_direct(DirectVariant::multi_temperature));
    direct_names.emplace_back("multitemp");
  }
  std::optional<MultistageModels> ms;
  if (fs::exists(model_file(p, "multistage", 0, 0))) {
    ms.emplace();
    ms->columns = sel.retained;
    ms->assignment = &a;
    const auto all = train.all();
    for (int c = 0; c < a.n_clusters; ++c) {
      LoadModels lm;
      lm.k_percentiles = cfg.percentiles;
      const auto crows = cluster_rows(all, a, c);
      for (std::size_t t = 0; t < kLoadTargets; ++t) {
        const auto path = model_file(p, "multistage", c, static_cast<int>(t));
        auto stored = load_models(path);
        inputs.push_back(path);
        lm.models[t] = QuantileModelSet::resume(c, std::move(stored.models), cfg.boosting, make_load_table(crows, sel.retained, t));
      }
      ms->clusters.emplace(c, std::move(lm));
    }
  }

  std::set<Date> holdout(dates.holdout.begin(), dates.holdout.end());
  ReplayInputs replay{&fleet, &cfg, dates.holdout, {}, {}};
  for (const auto& r : rows) {
    if (holdout.count(r.features.date)) replay.realised.push_back(r);
  }
  if (opt.noisy_temp) {
    for (const auto& r : replay.realised) {
      replay.noisy.emplace(DayKey{r.features.transformer_id, r.features.date}, forecast_features(fleet, labels, r.features, cfg));
    }
  }
  std::vector<ReplayOutput> outs(direct.size());
  std::vector<DirectModels*> dptr;
  std::vector<ReplayOutput*> optr;
  for (std::size_t i = 0; i < direct.size(); ++i) {
    dptr.push_back(&direct[i]);
    optr.push_back(&outs[i]);
  }
  ReplayOutput ms_out;
  replay_holdout(replay, dptr, optr, ms ? &*ms : nullptr, ms ? &ms_out : nullptr);

  std::vector<fs::path> outputs;
  auto emit = [&](const std::vector<PredictionSet>& preds, const std::string& method) {
    write_file_atomic(p.prediction_file(method), predictions_csv(preds, method));
    outputs.push_back(p.prediction_file(method));
  };
  for (std::size_t i = 0; i < direct.size(); ++i) {
    emit(outs[i].clean, direct_names[i]);
    if (opt.noisy_temp) emit(outs[i].noisy, direct_names[i] + "_noisy");
  }
  if (ms) {
    emit(ms_out.clean, "multistage");
    if (opt.noisy_temp) emit(ms_out.noisy, "multistage_noisy");
  }
  ctx.log(fmt::format("predict: {} holdout rows, {} methods", replay.realised.size(), outputs.size()));
  write_manifest(ctx, "predict", inputs, outputs);
}

inline Json coverage_json(const CoverageSummary& s) {
  Json j;
  j["fleet_mean"] = s.fleet_mean;
  j["per_transformer"] = Json::object();
  for (const auto& [id, c] : s.per_transformer) j["per_transformer"][id] = c;
  return j;
}

inline void stage_evaluate(const StageContext& ctx) {
  const auto& cfg = ctx.config;
  const auto& p = ctx.paths;
  require_artifact(p.prediction_file("direct"));
  const auto sel = read_selection(p);
  const auto fleet = load_fleet(p, cfg);
  const auto label_list = read_labels(p);
  const auto labels = index_labels(label_list);
  const auto dates = split_dates(labels, cfg.split);
  std::vector<fs::path> inputs{p.labels(), p.selection()};

  std::map<DayKey, double> truth;
  std::map<DayKey, TruthDay> truth_days;
  std::vector<TruthDay> holdout_days;
  const std::set<Date> holdout(dates.holdout.begin(), dates.holdout.end());
  for (const auto& l : label_list) {
    if (!holdout.count(l.date)) continue;
    const DayKey key{l.transformer_id, l.date};
    truth[key] = l.k_opt;
    TruthDay td{l.transformer_id, l.date, fleet.day_inputs(l.transformer_id, l.date, l.ambient, cfg.window), l.k_opt,
                l.boundary_flag};
    truth_days.emplace(key, td);
    holdout_days.push_back(std::move(td));
  }

  Json report;
  report["seed"] = cfg.seed;
  report["config_hash"] = hex64(config_hash(cfg));
  report["pipeline"] = to_string(sel.pipeline);
  report["retained_features"] = sel.retained;
  {
    std::size_t interior = 0, low = 0, high = 0;
    double kmin = std::numeric_limits<double>::infinity(), kmax = -kmin, ksum = 0.0;
    for (const auto& l : label_list) {
      interior += l.boundary_flag == BoundaryFlag::interior_root;
      low += l.boundary_flag == BoundaryFlag::clamped_low;
      high += l.boundary_flag == BoundaryFlag::clamped_high;
      kmin = std::min(kmin, l.k_opt);
      kmax = std::max(kmax, l.k_opt);
      ksum += l.k_opt;
    }
    report["labels"] = {{"count", label_list.size()}, {"interior_root", interior}, {"clamped_low", low},
                        {"clamped_high", high},       {"k_min", kmin},             {"k_mean", ksum / static_cast<double>(label_list.size())},
                        {"k_max", kmax}};
  }

  const double lo = 0.05, hi = 0.95;
  std::map<std::string, CoverageSummary> cov;
  std::map<std::string, std::vector<PredictionSet>> preds;
  std::size_t checked = 0, crossing = 0;
  for (const char* method : {"direct", "direct_noisy", "multitemp", "multitemp_noisy", "multistage", "multistage_noisy"}) {
    const auto path = p.prediction_file(method);
    if (!fs::exists(path)) continue;
    inputs.push_back(path);
    preds[method] = parse_predictions(read_csv(path));
    cov[method] = coverage(preds[method], truth, lo, hi);
    for (const auto& ps : preds[method]) {
      ++checked;
      crossing += ps.non_crossing() ? 0 : 1;
    }
  }
  report["coverage"] = Json::object();
  for (const auto& [m, s] : cov) report["coverage"][m] = coverage_json(s);
  if (cov.count("direct_noisy")) report["noisy_degradation_points"] = cov["direct"].fleet_mean - cov["direct_noisy"].fleet_mean;
  if (cov.count("multitemp_noisy")) {
    report["multitemp_noisy_degradation_points"] = cov["multitemp"].fleet_mean - cov["multitemp_noisy"].fleet_mean;
  }
  if (cov.count("multistage")) report["multistage_gap_points"] = cov["direct"].fleet_mean - cov["multistage"].fleet_mean;
  report["non_crossing"] = {{"checked", checked}, {"violations", crossing}};

  const auto risk = risk_table(preds.at("direct"), truth_days, cfg.percentiles, cfg.fixed_k, cfg.labeler.hotspot_limit);
  report["risk_table"] = Json::array();
  for (const auto& r : risk) {
    Json row{{"setting", r.setting},
             {"mean_capacity_pu", r.mean_capacity_pu},
             {"capacity_std_pu", r.capacity_std},
             {"mean_hotspot_c", r.mean_hotspot},
             {"exceedance_percent", 100.0 * r.exceedance_fraction}};
    row["percentile"] = r.percentile ? Json(*r.percentile) : Json(nullptr);
    report["risk_table"].push_back(row);
  }

  const auto sens = temperature_sensitivity(holdout_days, cfg.sensitivity, cfg.labeler);
  report["sensitivity"] = {{"min", sens.min},
                           {"mean", sens.mean},
                           {"max", sens.max},
                           {"mean_half_step", sens.mean_half_step},
                           {"step_halving_change", sens.step_halving_change},
                           {"points", sens.n_points},
                           {"non_negative_points", sens.n_non_negative},
                           {"excluded_points", sens.n_excluded}};

  std::vector<fs::path> outputs;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_file_atomic(p.reports() / name, text);
    outputs.push_back(p.reports() / name);
  };
  emit("coverage_cdf.csv", coverage_cdf_csv(cov.at("direct")));
  std::vector<std::pair<std::string, const CoverageSummary*>> methods;
  for (const auto& [m, s] : cov) methods.emplace_back(m, &s);
  emit("coverage_by_method.csv", coverage_by_method_csv(methods));
  emit("capacity_cdf.csv", risk_cdf_csv(risk, true));
  emit("hotspot_cdf.csv", risk_cdf_csv(risk, false));
  emit("tradeoff_table.csv", tradeoff_csv(risk));
  emit("sensitivity.csv", sensitivity_csv(sens));
  emit("report.json", report.dump(2) + "\n");
  ctx.log(fmt::format("evaluate: direct coverage {:.2f}%", cov.at("direct").fleet_mean));
  write_manifest(ctx, "evaluate", inputs, outputs);
}

inline void stage_reproduce(const StageContext& ctx) {
  stage_synth(ctx);
  stage_label(ctx);
  stage_cluster(ctx);
  stage_train(ctx, TrainOptions{true, true});
  stage_predict(ctx, PredictOptions{true});
  stage_evaluate(ctx);
}

}  // namespace dtr

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "dtr/calendar.hpp"
#include "dtr/error.hpp"
#include "dtr/io.hpp"
#include "dtr/random.hpp"
#include "dtr/series.hpp"
#include "dtr/thermal.hpp"

namespace dtr {

inline constexpr double kLineVoltage = 400.0;

/// Rated per-phase current of a three-phase transformer at the LV line voltage.
inline double rated_phase_current_for(double rated_kva, double line_voltage = kLineVoltage) {
  return rated_kva * 1000.0 / (std::sqrt(3.0) * line_voltage);
}

struct TransformerMeta {
  std::string transformer_id;
  double rated_kva = 0.0;
  double rated_phase_current = 0.0;  // amperes
  int num_customers = 0;
  ThermalParams thermal;

  void validate() const {
    if (transformer_id.empty()) throw DataValidationError("empty transformer id");
    if (rated_kva < 25.0 || rated_kva > 1000.0) {
      throw DataValidationError(fmt::format("{}: rated power {} kVA outside [25, 1000]", transformer_id, rated_kva));
    }
    const double expected = rated_phase_current_for(rated_kva);
    if (std::fabs(rated_phase_current - expected) > 0.01 * expected) {
      throw DataValidationError(fmt::format("{}: rated phase current {:.2f} A inconsistent with {} kVA at 400 V",
                                            transformer_id, rated_phase_current, rated_kva));
    }
    if (num_customers < 0) throw DataValidationError(fmt::format("{}: negative customer count", transformer_id));
    thermal.validate();
  }
};

struct WeatherDay {
  double ambient_true = 0.0;
  std::optional<double> ambient_forecast;
};

/// Daily ambient temperatures for one site. Sites are keyed by transformer id.
struct WeatherSeries {
  std::string site_id;
  std::map<Date, WeatherDay> days;

  [[nodiscard]] const WeatherDay& at(Date d) const {
    const auto it = days.find(d);
    if (it == days.end()) {
      throw InsufficientDataError(fmt::format("no weather for site {} on {}", site_id, format_date(d)));
    }
    return it->second;
  }
};

inline constexpr double kMinPlausibleAmbient = -30.0;
inline constexpr double kMaxPlausibleAmbient = 50.0;

struct SplitSpec {
  int train_validation_days = 152;
  int holdout_days = 31;

  void validate() const {
    if (train_validation_days <= 0 || holdout_days <= 0) throw ConfigError("split sizes must be positive");
  }
};

struct Fleet {
  std::vector<TransformerMeta> metas;
  std::vector<LoadSeries> loads;  // same order as metas
  std::map<std::string, WeatherSeries> weather;
  std::set<Date> holidays;
};

// ---------------------------------------------------------------------------------------------
// File schemas

inline const std::vector<std::string>& loads_header() {
  static const std::vector<std::string> h{"transformer_id", "timestamp_iso8601", "i_a_amps", "i_b_amps", "i_c_amps"};
  return h;
}
inline const std::vector<std::string>& weather_header() {
  static const std::vector<std::string> h{"site_id", "date", "ambient_true_c", "ambient_forecast_c"};
  return h;
}
inline const std::vector<std::string>& meta_header() {
  static const std::vector<std::string> h{"transformer_id", "rated_kva",  "rated_phase_amps", "num_customers",
                                          "dtheta_to_r",    "dtheta_h_r", "loss_ratio",       "n_exp",
                                          "m_exp",          "tau_oil_min", "tau_wind_min"};
  return h;
}

struct LoadIngest {
  std::vector<LoadSeries> series;  // sorted by transformer id
  std::vector<std::string> warnings;
};

namespace detail {

/// Aggregates sub-half-hourly samples into half-hour bins by RMS. Bins that are not fully
/// populated are dropped (and so become gaps).
inline LoadSeries resample_to_half_hour(const LoadSeries& in, std::chrono::seconds cadence) {
  const auto per_bin = kSampleInterval / cadence;
  LoadSeries out;
  out.transformer_id = in.transformer_id;
  std::size_t i = 0;
  while (i < in.size()) {
    const Timestamp bin{std::chrono::duration_cast<std::chrono::seconds>(
        kSampleInterval * (in.timestamps[i].time_since_epoch() / kSampleInterval))};
    std::size_t j = i;
    PhaseCurrents acc{};
    while (j < in.size() && in.timestamps[j] < bin + kSampleInterval) {
      for (int p = 0; p < 3; ++p) acc[p] += in.phases[p][j] * in.phases[p][j];
      ++j;
    }
    if (static_cast<long long>(j - i) == per_bin) {
      PhaseCurrents rmsv{};
      for (int p = 0; p < 3; ++p) rmsv[p] = std::sqrt(acc[p] / static_cast<double>(j - i));
      out.push_back(bin, rmsv);
    }
    i = j;
  }
  return out;
}

inline void flag_gaps(LoadSeries& s) {
  s.gaps.clear();
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (s.timestamps[i] - s.timestamps[i - 1] > kSampleInterval) s.gaps.push_back(s.timestamps[i - 1]);
  }
}

}  // namespace detail

/// Reads the loads CSV. Rows for each transformer must be in strictly increasing time order.
inline LoadIngest parse_loads(const CsvTable& table) {
  LoadIngest result;
  if (table.header.empty()) {
    result.warnings.emplace_back("loads file is empty");
    return result;
  }
  require_header(table, loads_header(), "loads");
  std::map<std::string, LoadSeries> by_id;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto line = table.line_numbers[r];
    auto& s = by_id[row[0]];
    s.transformer_id = row[0];
    Timestamp ts;
    PhaseCurrents c{};
    try {
      ts = parse_timestamp(row[1]);
      for (int p = 0; p < 3; ++p) c[p] = parse_double(row[2 + p], "current");
    } catch (const DataValidationError& e) {
      throw DataValidationError(fmt::format("loads line {}: {}", line, e.what()));
    }
    for (int p = 0; p < 3; ++p) {
      if (!(c[p] >= 0.0)) throw DataValidationError(fmt::format("loads line {}: negative current", line));
    }
    if (!s.timestamps.empty() && ts <= s.timestamps.back()) {
      throw DataValidationError(fmt::format("loads line {}: {} timestamp for {} ({})", line,
                                            ts == s.timestamps.back() ? "duplicated" : "non-monotone", row[0],
                                            row[1]));
    }
    s.push_back(ts, c);
  }
  for (auto& [id, s] : by_id) {
    if (s.size() >= 2) {
      auto cadence = s.timestamps[1] - s.timestamps[0];
      for (std::size_t i = 2; i < s.size(); ++i) cadence = std::min(cadence, s.timestamps[i] - s.timestamps[i - 1]);
      if (cadence < kSampleInterval) {
        if (kSampleInterval % cadence != std::chrono::seconds{0}) {
          throw DataValidationError(fmt::format("{}: cadence {} s does not divide 30 min", id, cadence.count()));
        }
        result.warnings.push_back(fmt::format("{}: resampled {} s cadence to 30 min by RMS", id, cadence.count()));
        s = detail::resample_to_half_hour(s, cadence);
      }
    }
    for (auto ts : s.timestamps) {
      if (ts.time_since_epoch() % kSampleInterval != std::chrono::seconds{0}) {
        throw DataValidationError(fmt::format("{}: timestamp {} is not on a half-hour mark", id, format_timestamp(ts)));
      }
    }
    detail::flag_gaps(s);
    if (!s.gaps.empty()) result.warnings.push_back(fmt::format("{}: {} gap(s) in load data", id, s.gaps.size()));
    result.series.push_back(std::move(s));
  }
  return result;
}

inline LoadIngest ingest_loads(const std::filesystem::path& path) { return parse_loads(read_csv(path)); }

inline std::map<std::string, WeatherSeries> parse_weather(const CsvTable& table) {
  std::map<std::string, WeatherSeries> out;
  if (table.header.empty()) return out;
  require_header(table, weather_header(), "weather");
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto line = table.line_numbers[r];
    auto& ws = out[row[0]];
    ws.site_id = row[0];
    WeatherDay day;
    Date date;
    try {
      date = parse_date(row[1]);
      day.ambient_true = parse_double(row[2], "ambient");
      if (!row[3].empty()) day.ambient_forecast = parse_double(row[3], "forecast ambient");
    } catch (const DataValidationError& e) {
      throw DataValidationError(fmt::format("weather line {}: {}", line, e.what()));
    }
    auto plausible = [](double t) { return t >= kMinPlausibleAmbient && t <= kMaxPlausibleAmbient; };
    if (!plausible(day.ambient_true) || (day.ambient_forecast && !plausible(*day.ambient_forecast))) {
      throw DataValidationError(fmt::format("weather line {}: ambient outside [-30, 50] degC", line));
    }
    if (!ws.days.emplace(date, day).second) {
      throw DataValidationError(fmt::format("weather line {}: duplicated date for site {}", line, row[0]));
    }
  }
  return out;
}

inline std::map<std::string, WeatherSeries> ingest_weather(const std::filesystem::path& path) {
  return parse_weather(read_csv(path));
}

inline std::vector<TransformerMeta> parse_meta(const CsvTable& table) {
  std::vector<TransformerMeta> out;
  if (table.header.empty()) return out;
  require_header(table, meta_header(), "meta");
  std::set<std::string> seen;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    TransformerMeta m;
    try {
      m.transformer_id = row[0];
      m.rated_kva = parse_double(row[1]);
      m.rated_phase_current = parse_double(row[2]);
      m.num_customers = static_cast<int>(parse_double(row[3]));
      m.thermal = ThermalParams{parse_double(row[4]), parse_double(row[5]), parse_double(row[6]),
                                parse_double(row[7]), parse_double(row[8]), parse_double(row[9]),
                                parse_double(row[10])};
      m.validate();
    } catch (const Error& e) {
      throw DataValidationError(fmt::format("meta line {}: {}", table.line_numbers[r], e.what()));
    }
    if (!seen.insert(m.transformer_id).second) {
      throw DataValidationError(fmt::format("meta line {}: duplicated transformer id", table.line_numbers[r]));
    }
    out.push_back(std::move(m));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.transformer_id < b.transformer_id; });
  return out;
}

inline std::vector<TransformerMeta> ingest_meta(const std::filesystem::path& path) { return parse_meta(read_csv(path)); }

inline std::set<Date> parse_holidays(std::string_view text) {
  std::set<Date> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    auto line = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
    pos = end == std::string_view::npos ? text.size() : end + 1;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    out.insert(parse_date(line));
  }
  return out;
}

inline std::set<Date> ingest_holidays(const std::filesystem::path& path) { return parse_holidays(read_file(path)); }

// ---------------------------------------------------------------------------------------------
// Writers

inline std::string loads_csv(const std::vector<LoadSeries>& loads) {
  CsvWriter w(loads_header());
  for (const auto& s : loads) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      w.row({s.transformer_id, format_timestamp(s.timestamps[i]), fmt::format("{:.4f}", s.phases[0][i]),
             fmt::format("{:.4f}", s.phases[1][i]), fmt::format("{:.4f}", s.phases[2][i])});
    }
  }
  return w.str();
}

inline std::string weather_csv(const std::map<std::string, WeatherSeries>& weather) {
  CsvWriter w(weather_header());
  for (const auto& [site, ws] : weather) {
    for (const auto& [date, day] : ws.days) {
      w.row({site, format_date(date), fmt::format("{:.4f}", day.ambient_true),
             day.ambient_forecast ? fmt::format("{:.4f}", *day.ambient_forecast) : std::string{}});
    }
  }
  return w.str();
}

inline std::string meta_csv(const std::vector<TransformerMeta>& metas) {
  CsvWriter w(meta_header());
  for (const auto& m : metas) {
    const auto& t = m.thermal;
    w.row({m.transformer_id, fmt::format("{:g}", m.rated_kva), fmt::format("{:.6f}", m.rated_phase_current),
           std::to_string(m.num_customers), fmt::format("{:g}", t.rated_top_oil_rise),
           fmt::format("{:g}", t.rated_hotspot_rise), fmt::format("{:g}", t.loss_ratio),
           fmt::format("{:g}", t.oil_exponent), fmt::format("{:g}", t.winding_exponent),
           fmt::format("{:g}", t.tau_oil), fmt::format("{:g}", t.tau_winding)});
  }
  return w.str();
}

inline std::string holidays_text(const std::set<Date>& holidays) {
  std::string out;
  for (auto d : holidays) out += format_date(d) + "\n";
  return out;
}

// ---------------------------------------------------------------------------------------------
// Synthetic fleet

struct SynthConfig {
  Date start_date = make_date(2024, 9, 1);
  std::vector<double> kva_choices{50, 100, 200, 315, 500, 800, 1000};
  double utilisation_min = 0.30;  // daily mean load, p.u. of rated phase current
  double utilisation_max = 0.50;
  double unbalance = 0.15;            // s.d. of per-transformer phase shares
  double temp_coupling_pu = 0.006;    // p.u. of rated current per degC (demand falls as it warms)
  double temp_reference = 10.0;       // degC
  double common_noise_sd = 0.05;      // daily demand factor shared by phases
  double common_noise_phi = 0.7;
  double phase_noise_sd = 0.10;       // daily per-phase factor
  double phase_noise_phi = 0.6;
  double halfhour_noise_sd = 0.06;
  double annual_mean_temp = 10.5;
  double annual_temp_amplitude = 6.5;
  int coldest_day_of_year = 20;
  double site_temp_sd = 2.5;          // AR(1) daily anomaly per site
  double site_temp_phi = 0.75;
  double forecast_sigma = 1.12;       // day-ahead forecast error s.d.
  double holiday_uplift = 0.08;
  std::vector<Date> holidays{make_date(2024, 12, 25), make_date(2024, 12, 26), make_date(2025, 1, 1)};
  ThermalParams thermal;
};

namespace detail {

/// Normalised (mean 1) half-hourly demand shape with a morning shoulder and an evening peak.
inline std::array<double, 48> daily_shape() {
  std::array<double, 48> shape{};
  double total = 0.0;
  for (int k = 0; k < 48; ++k) {
    const double h = (k + 0.5) / 2.0;
    auto bump = [h](double centre, double width) { return std::exp(-0.5 * std::pow((h - centre) / width, 2)); };
    shape[k] = 0.45 + 0.35 * bump(8.0, 1.3) + 0.20 * bump(13.0, 2.5) + 1.05 * bump(18.5, 1.6) - 0.15 * bump(4.0, 1.5);
    total += shape[k];
  }
  for (auto& v : shape) v *= 48.0 / total;
  return shape;
}

inline constexpr std::array<double, 7> kWeekdayFactor{1.00, 0.99, 0.99, 1.00, 0.98, 1.06, 1.05};

}  // namespace detail

/// Day-ahead forecasts: truth plus N(0, sigma^2), seeded per site.
inline void perturb_forecasts(std::map<std::string, WeatherSeries>& weather, double sigma, std::uint64_t seed) {
  for (auto& [site, ws] : weather) {
    Rng rng(mix_seed(seed, fnv1a(site)));
    for (auto& [date, day] : ws.days) {
      const double noise = rng.normal();
      day.ambient_forecast = day.ambient_true + sigma * noise;
    }
  }
}

/// Reproducible stand-in for a monitored fleet: half-hourly per-phase loads with evening peaks,
/// weekly and temperature effects, per-transformer unbalance and auto-correlated noise.
inline Fleet generate_synthetic_fleet(std::uint64_t seed, int n_transformers, int n_days, const SynthConfig& cfg = {}) {
  if (n_transformers < 1) throw ParameterError("need at least one transformer");
  if (n_days < 15) throw ParameterError("need at least 15 days (7-day lags plus history)");
  cfg.thermal.validate();

  Fleet fleet;
  fleet.holidays.insert(cfg.holidays.begin(), cfg.holidays.end());
  const auto shape = detail::daily_shape();
  const auto year_start = Date{std::chrono::year_month_day{cfg.start_date}.year() / 1 / 1};

  for (int t = 0; t < n_transformers; ++t) {
    const std::string id = fmt::format("TX{:04d}", t + 1);
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(t)));

    TransformerMeta meta;
    meta.transformer_id = id;
    meta.rated_kva = cfg.kva_choices[rng.below(cfg.kva_choices.size())];
    meta.rated_phase_current = rated_phase_current_for(meta.rated_kva);
    meta.thermal = cfg.thermal;
    const double utilisation = rng.uniform(cfg.utilisation_min, cfg.utilisation_max);
    meta.num_customers = std::max(1, static_cast<int>(std::lround(meta.rated_kva * utilisation * rng.uniform(0.6, 1.0))));

    PhaseCurrents share{};
    for (auto& s : share) s = std::max(0.2, 1.0 + cfg.unbalance * rng.normal());
    const double share_mean = mean_phase(share);
    for (auto& s : share) s /= share_mean;

    // Site weather.
    WeatherSeries ws;
    ws.site_id = id;
    Rng wrng(mix_seed(seed ^ 0x57e47e4ULL, static_cast<std::uint64_t>(t)));
    Ar1 anomaly(cfg.site_temp_phi, cfg.site_temp_sd);
    for (int d = 0; d < n_days; ++d) {
      const Date date = cfg.start_date + std::chrono::days{d};
      const double doy = static_cast<double>((date - year_start).count());
      const double seasonal = cfg.annual_mean_temp -
          cfg.annual_temp_amplitude * std::cos(2.0 * std::numbers::pi * (doy - cfg.coldest_day_of_year) / 365.25);
      const double temp = std::clamp(seasonal + anomaly.next(wrng), kMinPlausibleAmbient + 1, kMaxPlausibleAmbient - 1);
      ws.days[date] = WeatherDay{std::round(temp * 1e4) / 1e4, std::nullopt};
    }

    const double level = utilisation * meta.rated_phase_current;
    const double coupling = cfg.temp_coupling_pu * meta.rated_phase_current;
    Ar1 common(cfg.common_noise_phi, cfg.common_noise_sd);
    std::array<Ar1, 3> phase_noise{Ar1(cfg.phase_noise_phi, cfg.phase_noise_sd), Ar1(cfg.phase_noise_phi, cfg.phase_noise_sd),
                                   Ar1(cfg.phase_noise_phi, cfg.phase_noise_sd)};
    LoadSeries series;
    series.transformer_id = id;
    for (int d = 0; d < n_days; ++d) {
      const Date date = cfg.start_date + std::chrono::days{d};
      const double temp = ws.days[date].ambient_true;
      double day_factor = detail::kWeekdayFactor[day_of_week(date)] * (1.0 + common.next(rng));
      if (fleet.holidays.count(date)) day_factor *= 1.0 + cfg.holiday_uplift;
      PhaseCurrents phase_factor{};
      for (int p = 0; p < 3; ++p) phase_factor[p] = std::max(0.3, 1.0 + phase_noise[p].next(rng));
      for (int k = 0; k < 48; ++k) {
        PhaseCurrents c{};
        for (int p = 0; p < 3; ++p) {
          const double noise = std::max(0.0, 1.0 + rng.normal(0.0, cfg.halfhour_noise_sd));
          const double demand = level * share[p] * phase_factor[p] * day_factor * shape[k] * noise -
                                coupling * share[p] * (temp - cfg.temp_reference);
          c[p] = std::round(std::max(0.0, demand) * 1e4) / 1e4;
        }
        series.push_back(Timestamp{date} + kSampleInterval * k, c);
      }
    }
    fleet.metas.push_back(std::move(meta));
    fleet.loads.push_back(std::move(series));
    fleet.weather[id] = std::move(ws);
  }
  perturb_forecasts(fleet.weather, cfg.forecast_sigma, mix_seed(seed, 0xf0cca57ULL));
  for (auto& [site, ws] : fleet.weather) {
    for (auto& [date, day] : ws.days) day.ambient_forecast = std::round(*day.ambient_forecast * 1e4) / 1e4;
  }
  return fleet;
}

// ---------------------------------------------------------------------------------------------
// Per-day summaries

/// Observed quantities of one complete transformer-day.
struct DayRecord {
  Date date{};
  PeriodEquivalents equivalents;
  PhaseCurrents offpeak_mean{};  // arithmetic mean per phase over the off-peak window
  PhaseCurrents peak_mean{};
};

/// Summaries for every date whose off-peak and peak windows are fully covered. Incomplete days are
/// skipped.
inline std::vector<DayRecord> summarise_days(const LoadSeries& series, const DayWindow& window,
                                             std::chrono::minutes utc_offset = {}) {
  std::vector<DayRecord> out;
  if (series.size() == 0) return out;
  const Date first = std::chrono::floor<std::chrono::days>(series.timestamps.front()) - std::chrono::days{1};
  const Date last = std::chrono::floor<std::chrono::days>(series.timestamps.back()) + std::chrono::days{1};
  for (Date d = first; d <= last; d += std::chrono::days{1}) {
    const auto [ob, oe] = window.offpeak_span(d, utc_offset);
    const auto [pb, pe] = window.peak_span(d, utc_offset);
    if (!series.covers(ob, oe) || !series.covers(pb, pe)) continue;
    DayRecord rec;
    rec.date = d;
    rec.equivalents = equivalent_currents(series, d, window, utc_offset);
    const auto [olo, ohi] = series.range(ob, oe);
    const auto [plo, phi] = series.range(pb, pe);
    for (int p = 0; p < 3; ++p) {
      auto mean = [](std::span<const double> v) {
        double acc = 0.0;
        for (double x : v) acc += x;
        return acc / static_cast<double>(v.size());
      };
      rec.offpeak_mean[p] = mean(series.phase(p, olo, ohi));
      rec.peak_mean[p] = mean(series.phase(p, plo, phi));
    }
    out.push_back(rec);
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// Chronological split

struct DateSplit {
  std::vector<Date> train_validation;
  std::vector<Date> holdout;
};

/// The last `holdout_days` dates form the holdout; the `train_validation_days` dates immediately
/// before them form the training/validation set.
inline DateSplit split(std::vector<Date> dates, const SplitSpec& spec) {
  spec.validate();
  std::sort(dates.begin(), dates.end());
  dates.erase(std::unique(dates.begin(), dates.end()), dates.end());
  const auto need = static_cast<std::size_t>(spec.train_validation_days + spec.holdout_days);
  if (dates.size() < need) {
    throw InsufficientDataError(fmt::format("split needs {} days, only {} available", need, dates.size()));
  }
  DateSplit out;
  const auto holdout_begin = dates.end() - spec.holdout_days;
  out.holdout.assign(holdout_begin, dates.end());
  out.train_validation.assign(holdout_begin - spec.train_validation_days, holdout_begin);
  return out;
}

}  // namespace dtr

// End-to-end acceptance run: two seeded reproductions plus independent recomputation.
#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include "dtr/dtr.hpp"

namespace fs = std::filesystem;
using dtr::Json;

namespace {

// Tolerances and thresholds of the acceptance contract.
constexpr double kLabelTolerance = 0.01;        // degC
constexpr double kBisectionAgreement = 1e-3;
constexpr double kFixedPointRel = 1e-12;
constexpr double kLimitRel = 1e-6;
constexpr double kThermalAgreement = 0.1;       // degC
constexpr int kThermalCases = 1000;
constexpr double kCoverageLo = 85.0, kCoverageHi = 95.0;
constexpr double kMaxNoisyDegradation = 5.0;    // points
constexpr double kExceedanceBand = 7.0;         // points
constexpr double kMinCapacityGain = 0.05;
constexpr double kMinMultistageGap = 20.0;      // points
constexpr double kSensLo = 0.005, kSensHi = 0.02;
constexpr double kMaxStepHalving = 0.05;
constexpr double kRuntimeBudget = 600.0;        // seconds

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, std::string_view title, const Outcome& o) {
  fmt::print("[{}] criterion {:>2}: {} ({})\n", o.pass ? "PASS" : "FAIL", id, title, o.detail);
  if (!o.pass) ++failures;
}

// ----- independent thermal / relay chain ---------------------------------------------------

struct Chain {
  std::array<double, 3> off{}, peak{};
  double ambient = 0.0, rated = 1.0;
  double dto = 55, dth = 23, r = 5, n = 0.8, m = 0.8, tau_o = 180, tau_w = 7, t = 180;

  [[nodiscard]] double memory() const { return 0.4 * std::exp(-t / tau_w) + 0.6 * std::exp(-t / tau_o); }
  [[nodiscard]] double preload() const { return std::max({off[0], off[1], off[2]}); }

  [[nodiscard]] double rise_oil(double k) const { return dto * std::pow((k * k * r + 1) / (r + 1), n); }
  [[nodiscard]] double rise_hs(double k) const { return dth * std::pow(k, 2 * m); }

  [[nodiscard]] double hotspot(double ko_i, double ko_u, double kw_i, double kw_u) const {
    const double fo = 1 - std::exp(-t / tau_o), fw = 1 - std::exp(-t / tau_w);
    return ambient + rise_oil(ko_i) + (rise_oil(ko_u) - rise_oil(ko_i)) * fo + rise_hs(kw_i) +
           (rise_hs(kw_u) - rise_hs(kw_i)) * fw;
  }

  // NaN when the preload already trips.
  [[nodiscard]] double hotspot_at(double k) const {
    const double mem = memory(), pre = preload(), rating = k * rated;
    const double num = rating * rating - mem * pre * pre;
    if (num <= 0) return std::numeric_limits<double>::quiet_NaN();
    const double trip = std::sqrt(num / (1 - mem));
    const double pmax = std::max({peak[0], peak[1], peak[2]});
    std::array<double, 3> p = peak;
    for (auto& v : p) v = pmax > 0 ? v * trip / pmax : trip;
    const double mo = (off[0] + off[1] + off[2]) / 3, mp = (p[0] + p[1] + p[2]) / 3;
    return hotspot(mo / rated, mp / rated, pre / rated, std::max({p[0], p[1], p[2]}) / rated);
  }
};

double rk4(const Chain& c, double ko_i, double ko_u, double kw_i, double kw_u) {
  double oil = c.rise_oil(ko_i), hs = c.rise_hs(kw_i);
  const double oil_u = c.rise_oil(ko_u), hs_u = c.rise_hs(kw_u);
  auto step = [](double y, double target, double tau, double h) {
    auto f = [&](double v) { return (target - v) / tau; };
    const double a = f(y), b = f(y + h / 2 * a), cc = f(y + h / 2 * b), d = f(y + h * cc);
    return y + h / 6 * (a + 2 * b + 2 * cc + d);
  };
  const int whole = static_cast<int>(c.t);
  for (int i = 0; i < whole; ++i) oil = step(oil, oil_u, c.tau_o, 1), hs = step(hs, hs_u, c.tau_w, 1);
  const double rest = c.t - whole;
  if (rest > 0) oil = step(oil, oil_u, c.tau_o, rest), hs = step(hs, hs_u, c.tau_w, rest);
  return c.ambient + oil + hs;
}

// ----- helpers --------------------------------------------------------------------------------

int run(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> read_tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).generic_string()] = dtr::read_file(e.path());
  }
  return out;
}

// ----- criteria -------------------------------------------------------------------------------

Outcome labeler_tolerance(const fs::path& run_dir) {
  dtr::Config cfg;
  const dtr::Paths paths{run_dir};
  const auto fleet = dtr::load_fleet(paths, cfg);
  const auto labels = dtr::parse_labels(dtr::read_csv(paths.labels()));
  double worst_h = 0, worst_k = 0;
  std::size_t interior = 0;
  for (const auto& l : labels) {
    if (l.boundary_flag != dtr::BoundaryFlag::interior_root) continue;
    ++interior;
    const auto& meta = fleet.metas.at(l.transformer_id);
    const auto& day = fleet.days.at(l.transformer_id).at(l.date);
    Chain c;
    c.off = day.equivalents.offpeak;
    c.peak = day.equivalents.peak;
    c.ambient = l.ambient;
    c.rated = meta.rated_phase_current;
    worst_h = std::max(worst_h, std::abs(c.hotspot_at(l.k_opt) - 140.0));
    double lo = std::max(cfg.labeler.k_min, std::sqrt(c.memory()) * c.preload() / c.rated * (1 + 1e-9)), hi = cfg.labeler.k_max;
    for (int i = 0; i < 80; ++i) {
      const double mid = (lo + hi) / 2;
      (c.hotspot_at(mid) > 140.0 ? hi : lo) = mid;
    }
    worst_k = std::max(worst_k, std::abs((lo + hi) / 2 - l.k_opt));
  }
  return {interior > 0 && worst_h <= kLabelTolerance && worst_k <= kBisectionAgreement,
          fmt::format("{} interior labels, max |h-140| = {:.2e} degC, max |k - bisection| = {:.2e}", interior, worst_h, worst_k)};
}

Outcome relay_limits() {
  dtr::Rng rng(2024);
  double worst_fp = 0, worst_lim = 0;
  for (int i = 0; i < 1000; ++i) {
    const dtr::RelaySettings s{rng.uniform(0.5, 2.5), rng.uniform(50, 1500)};
    const double rating = s.scale_factor * s.rated_phase_current;
    const double tw = rng.uniform(3, 15), to = rng.uniform(60, 300);
    const double t = rng.uniform(10, 600);
    worst_fp = std::max(worst_fp, std::abs(dtr::trip_current(s, rating, t, tw, to) - rating) / rating);
    const double pre = rng.uniform(0, rating);
    worst_lim = std::max(worst_lim, std::abs(dtr::trip_current(s, pre, 1e6 * to, tw, to) - rating) / rating);
  }
  return {worst_fp <= kFixedPointRel && worst_lim <= kLimitRel,
          fmt::format("fixed point rel err {:.2e}, long-time rel err {:.2e}", worst_fp, worst_lim)};
}

Outcome thermal_oracle() {
  dtr::Rng rng(77);
  double worst = 0;
  for (int i = 0; i < kThermalCases; ++i) {
    Chain c;
    c.ambient = rng.uniform(-20, 40);
    c.t = rng.uniform(30, 480);
    const double ko_i = rng.uniform(0, 1.2), ko_u = rng.uniform(0, 2.0);
    const double kw_i = ko_i * rng.uniform(1, 1.4), kw_u = ko_u * rng.uniform(1, 1.4);
    const dtr::ThermalParams p;
    const double analytic =
        dtr::hotspot_temperature(dtr::LoadFactors{ko_i, ko_u, kw_i, kw_u}, c.ambient, p, c.t);
    worst = std::max(worst, std::abs(analytic - rk4(c, ko_i, ko_u, kw_i, kw_u)));
  }
  return {worst <= kThermalAgreement, fmt::format("{} cases, max |analytic - RK4| = {:.4f} degC", kThermalCases, worst)};
}

Outcome calibration(const Json& r) {
  const double clean = r.at("coverage").at("direct").at("fleet_mean");
  const double noisy = r.at("coverage").at("direct_noisy").at("fleet_mean");
  const double deg = clean - noisy;
  return {clean >= kCoverageLo && clean <= kCoverageHi && deg <= kMaxNoisyDegradation,
          fmt::format("direct coverage {:.2f}%, noisy {:.2f}%, degradation {:.2f} points", clean, noisy, deg)};
}

Outcome risk_mapping(const Json& r) {
  bool ok = true;
  std::string detail;
  double prev_exc = -1, prev_cap = -1;
  for (const auto& row : r.at("risk_table")) {
    if (row.at("percentile").is_null()) continue;
    const double p = 100.0 * row.at("percentile").get<double>();
    const double exc = row.at("exceedance_percent"), cap = row.at("mean_capacity_pu");
    if (exc < prev_exc || cap < prev_cap) ok = false;
    prev_exc = exc;
    prev_cap = cap;
    if (std::abs(p - 5) < 1e-9 || std::abs(p - 50) < 1e-9 || std::abs(p - 95) < 1e-9) {
      if (std::abs(exc - p) > kExceedanceBand) ok = false;
      detail += fmt::format("{}p{:.0f} -> {:.1f}%", detail.empty() ? "" : ", ", p, exc);
    }
  }
  return {ok, detail + (ok ? ", monotone" : "")};
}

Outcome capacity_gain(const Json& r) {
  double p02 = 0, fixed = 0, fixed_exc = -1;
  for (const auto& row : r.at("risk_table")) {
    if (row.at("percentile").is_null()) {
      fixed = row.at("mean_capacity_pu");
      fixed_exc = row.at("exceedance_percent");
    } else if (std::abs(row.at("percentile").get<double>() - 0.02) < 1e-9) {
      p02 = row.at("mean_capacity_pu");
    }
  }
  const double gain = fixed > 0 ? p02 / fixed - 1 : 0;
  return {p02 > 0 && gain >= kMinCapacityGain && fixed_exc == 0.0,
          fmt::format("p02 capacity {:.3f} pu vs fixed {:.3f} pu (+{:.1f}%), fixed exceedance {:.1f}%", p02, fixed,
                      100 * gain, fixed_exc)};
}

Outcome multistage_gap(const Json& r) {
  const double direct = r.at("coverage").at("direct").at("fleet_mean");
  const double multi = r.at("coverage").at("multistage").at("fleet_mean");
  return {multi <= direct - kMinMultistageGap, fmt::format("direct {:.2f}% vs multi-stage {:.2f}%", direct, multi)};
}

Outcome sensitivity(const Json& r) {
  const auto& s = r.at("sensitivity");
  const double mean = s.at("mean"), mx = s.at("max"), change = s.at("step_halving_change");
  const std::size_t nonneg = s.at("non_negative_points");
  const bool ok = mx < 0 && nonneg == 0 && std::abs(mean) >= kSensLo && std::abs(mean) <= kSensHi && change < kMaxStepHalving;
  return {ok, fmt::format("mean {:.5f}/degC, max {:.5f}, {} non-negative points, step-halving change {:.2e}", mean, mx,
                          nonneg, change)};
}

Outcome forecaster_contracts(const fs::path& run_dir) {
  bool ok = dtr::pinball_loss(2.0, 2.0, 0.3) == 0.0 && dtr::pinball_loss(3.0, 1.0, 0.5) == 1.0 &&
            std::abs(dtr::pinball_loss(1.0, 2.0, 0.95) - 0.05) < 1e-15;
  std::size_t sets = 0, crossing = 0;
  for (const auto& e : fs::directory_iterator(dtr::Paths{run_dir}.predictions())) {
    const auto preds = dtr::parse_predictions(dtr::read_csv(e.path()));
    for (const auto& p : preds) {
      ++sets;
      std::vector<std::pair<double, double>> pk;
      for (std::size_t i = 0; i < p.k.size(); ++i) pk.emplace_back(p.percentiles[i], p.k[i]);
      std::sort(pk.begin(), pk.end());
      for (std::size_t i = 1; i < pk.size(); ++i) crossing += pk[i].second < pk[i - 1].second;
    }
  }
  dtr::TrainingTable t({"x"}, {});
  for (int i = 0; i < 100; ++i) {
    const double x[] = {double(i)};
    t.add_row(x, 1.37, static_cast<std::uint64_t>(i));
  }
  double worst_const = 0;
  const auto m = dtr::QuantileModelSet::train(0, dtr::default_percentiles(), dtr::BoostingParams{}, 1, t);
  for (double v : {-10.0, 0.0, 55.5, 1e3}) {
    const double x[] = {v};
    for (double k : m.predict(x)) worst_const = std::max(worst_const, std::abs(k - 1.37));
  }
  ok = ok && sets > 0 && crossing == 0 && worst_const < 1e-12;
  return {ok, fmt::format("pinball identities ok, {} prediction sets with {} crossings, constant fit error {:.1e}", sets,
                          crossing, worst_const)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance run"};
  std::string cli, work;
  app.add_option("--cli", cli, "path to the dtr executable")->required();
  app.add_option("--work", work, "scratch directory")->required();
  CLI11_PARSE(app, argc, argv);

  const fs::path root(work);
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path a = root / "run_a", b = root / "run_b";

  const auto t0 = std::chrono::steady_clock::now();
  const int rc_a = run(fmt::format("\"{}\" -q --seed 7 -o \"{}\" reproduce", cli, a.string()));
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const int rc_b = run(fmt::format("\"{}\" -q --seed 7 -o \"{}\" reproduce", cli, b.string()));
  fmt::print("reproduce exit codes {} and {}, first run {:.1f} s\n", rc_a, rc_b, seconds);
  if (rc_a != 0 || !fs::exists(dtr::Paths{a}.report())) {
    fmt::print("[FAIL] reproduce did not produce a report\n");
    return 1;
  }
  const Json r = Json::parse(dtr::read_file(dtr::Paths{a}.report()));

  auto guarded = [](const std::function<Outcome()>& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      return Outcome{false, fmt::format("exception: {}", e.what())};
    }
  };
  report(1, "labeler tolerance", guarded([&] { return labeler_tolerance(a); }));
  report(2, "relay fixed point and limit", guarded(relay_limits));
  report(3, "thermal oracle equivalence", guarded(thermal_oracle));
  report(4, "calibration", guarded([&] { return calibration(r); }));
  report(5, "percentile-risk mapping", guarded([&] { return risk_mapping(r); }));
  report(6, "capacity gain direction", guarded([&] { return capacity_gain(r); }));
  report(7, "direct vs multi-stage", guarded([&] { return multistage_gap(r); }));
  report(8, "temperature sensitivity", guarded([&] { return sensitivity(r); }));
  report(9, "forecaster contracts", guarded([&] { return forecaster_contracts(a); }));
  report(10, "determinism and runtime", guarded([&] {
           const auto ra = read_tree(dtr::Paths{a}.reports()), rb = read_tree(dtr::Paths{b}.reports());
           const bool same = rc_b == 0 && !ra.empty() && ra == rb;
           std::vector<std::string> differing;
           for (const auto& [name, body] : ra) {
             const auto it = rb.find(name);
             if (it == rb.end() || it->second != body) differing.push_back(name);
           }
           for (const auto& [name, body] : rb) {
             if (!ra.contains(name)) differing.push_back(name);
           }
           const std::string verdict =
               same ? "byte-identical" : fmt::format("differ in {}", fmt::join(differing, ", "));
           return Outcome{same && seconds <= kRuntimeBudget,
                          fmt::format("{} report files {}, runtime {:.1f} s (budget {:.0f} s)", ra.size(), verdict,
                                      seconds, kRuntimeBudget)};
         }));
  fmt::print("{} of 10 criteria passed\n", 10 - failures);
  return failures == 0 ? 0 : 1;
}

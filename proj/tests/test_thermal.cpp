#include "support.hpp"

using namespace test;
using Catch::Approx;

TEST_CASE("constant rated load gives unit factors", "[thermal]") {
  const double rated = 250.0;
  const auto s = constant_series(day0() - std::chrono::days{1}, 2, {rated, rated, rated});
  const auto f = equivalent_load_factors(s, day0(), DayWindow{}, rated);
  CHECK(f.k_oil_offpeak == Approx(1.0));
  CHECK(f.k_oil_peak == Approx(1.0));
  CHECK(f.k_winding_offpeak == Approx(1.0));
  CHECK(f.k_winding_peak == Approx(1.0));
}

TEST_CASE("single-phase load splits winding and oil factors", "[thermal]") {
  const double rated = 200.0, i = 150.0;
  const auto s = constant_series(day0(), 1, {i, 0.0, 0.0});
  const auto f = equivalent_load_factors(s, day0(), DayWindow{}, rated);
  CHECK(f.k_winding_offpeak == Approx(i / rated));
  CHECK(f.k_winding_peak == Approx(i / rated));
  CHECK(f.k_oil_offpeak == Approx(i / 3.0 / rated));
  CHECK(f.k_oil_peak == Approx(i / 3.0 / rated));
}

TEST_CASE("peak floor at 90 percent of the largest sample binds for a spiky phase", "[thermal]") {
  const double rated = 100.0;
  auto s = constant_series(day0(), 1, {50.0, 50.0, 50.0});
  // last peak half-hour (19:30) on phase a jumps to 1.0 p.u.
  const auto spike = Timestamp{day0()} + std::chrono::minutes{19 * 60 + 30};
  const auto idx = static_cast<std::size_t>(std::find(s.timestamps.begin(), s.timestamps.end(), spike) - s.timestamps.begin());
  s.phases[0][idx] = 100.0;
  const auto eq = equivalent_currents(s, day0(), DayWindow{});
  std::vector<double> peak_samples(5, 50.0);
  peak_samples.push_back(100.0);
  double ss = 0.0;
  for (double v : peak_samples) ss += v * v;
  const double brute_rms = std::sqrt(ss / static_cast<double>(peak_samples.size()));
  REQUIRE(brute_rms < 0.9 * 100.0);
  CHECK(eq.peak[0] == Approx(90.0));
  CHECK(eq.peak[1] == Approx(50.0));
  CHECK(load_factors(eq, rated).k_winding_peak == Approx(0.9));
}

TEST_CASE("rms equivalent is used when it exceeds the floor", "[thermal]") {
  auto s = constant_series(day0(), 1, {100.0, 100.0, 100.0});
  const auto eq = equivalent_currents(s, day0(), DayWindow{});
  CHECK(eq.peak[0] == Approx(100.0));
  CHECK(eq.offpeak[2] == Approx(100.0));
}

TEST_CASE("gaps and bad ratings are rejected", "[thermal]") {
  auto s = constant_series(day0(), 1, {10.0, 10.0, 10.0});
  SECTION("missing peak sample") {
    LoadSeries g;
    g.transformer_id = "T1";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s.timestamps[i] == Timestamp{day0()} + std::chrono::hours{18}) continue;
      g.push_back(s.timestamps[i], {10.0, 10.0, 10.0});
    }
    CHECK_THROWS_AS(equivalent_currents(g, day0(), DayWindow{}), GapError);
  }
  SECTION("window outside the series") {
    CHECK_THROWS_AS(equivalent_currents(s, day0() + std::chrono::days{3}, DayWindow{}), GapError);
  }
  SECTION("zero rated current") {
    CHECK_THROWS_AS(equivalent_load_factors(s, day0(), DayWindow{}, 0.0), ParameterError);
  }
}

TEST_CASE("rated steady state reaches the rated rises", "[thermal]") {
  const ThermalParams p;
  const LoadFactors f{1.0, 1.0, 1.0, 1.0};
  const double h = hotspot_temperature(f, 20.0, p, 1e6 * p.tau_oil);
  CHECK(h == Approx(20.0 + 55.0 + 23.0).epsilon(1e-12));
}

TEST_CASE("zero load leaves only the no-load oil rise", "[thermal]") {
  const ThermalParams p;
  const LoadFactors f{0.0, 0.0, 0.0, 0.0};
  for (double t : {1.0, 60.0, 180.0, 1e5}) {
    CHECK(hotspot_temperature(f, 7.0, p, t) == Approx(7.0 + 55.0 * std::pow(1.0 / 6.0, 0.8)).epsilon(1e-12));
  }
}

TEST_CASE("mid-range day agrees with a 1-minute transient integrator", "[thermal]") {
  const ThermalParams p;
  const LoadFactors f{0.6, 1.2, 0.6, 1.2};
  const double analytic = hotspot_temperature(f, 10.0, p, 240.0);
  const double oracle = rk4_hotspot(f, 10.0, p, 240.0);
  CHECK(std::abs(analytic - oracle) <= 0.1);
}

TEST_CASE("1000 random cases agree with the transient integrator", "[thermal]") {
  Rng rng(20240901);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    ThermalParams p;
    p.rated_top_oil_rise = rng.uniform(40.0, 65.0);
    p.rated_hotspot_rise = rng.uniform(15.0, 30.0);
    p.loss_ratio = rng.uniform(3.0, 8.0);
    p.oil_exponent = rng.uniform(0.7, 1.0);
    p.winding_exponent = rng.uniform(0.7, 1.0);
    p.tau_oil = rng.uniform(90.0, 240.0);
    p.tau_winding = rng.uniform(4.0, 10.0);
    const double ko_i = rng.uniform(0.0, 1.2), ko_p = rng.uniform(0.0, 2.0);
    const LoadFactors f{ko_i, ko_p, ko_i * rng.uniform(1.0, 1.4), ko_p * rng.uniform(1.0, 1.4)};
    const double amb = rng.uniform(-20.0, 40.0);
    const double t = rng.uniform(30.0, 480.0);
    worst = std::max(worst, std::abs(hotspot_temperature(f, amb, p, t) - rk4_hotspot(f, amb, p, t)));
  }
  CHECK(worst <= 0.1);
}

TEST_CASE("hotspot is increasing in peak factors and ambient", "[thermal]") {
  const ThermalParams p;
  for (double k = 0.2; k <= 2.0; k += 0.2) {
    for (double amb = -10.0; amb <= 30.0; amb += 10.0) {
      const LoadFactors base{0.5, k, 0.6, k * 1.1};
      const double h0 = hotspot_temperature(base, amb, p, 180.0);
      LoadFactors w = base;
      w.k_winding_peak += 0.01;
      LoadFactors o = base;
      o.k_oil_peak += 0.01;
      CHECK(hotspot_temperature(w, amb, p, 180.0) > h0);
      CHECK(hotspot_temperature(o, amb, p, 180.0) > h0);
      CHECK(hotspot_temperature(base, amb + 0.1, p, 180.0) > h0);
    }
  }
}

TEST_CASE("unbalance at fixed total never lowers the hotspot", "[thermal]") {
  const DayInputs d = balanced_day(0.5, 0.9, 10.0);
  double previous = -1e9;
  for (double shift = 0.0; shift <= 0.3; shift += 0.05) {
    PeriodEquivalents eq = d.equivalents;
    eq.peak = {90.0 * (1 + shift), 90.0, 90.0 * (1 - shift)};
    const double h = hotspot_temperature(load_factors(eq, 100.0), 10.0, ThermalParams{}, 180.0);
    CHECK(h >= previous);
    previous = h;
  }
}

TEST_CASE("hotspot decomposes into ambient plus the two rises", "[thermal]") {
  const LoadFactors f{0.4, 1.1, 0.5, 1.3};
  const auto b = hotspot_breakdown(f, 12.5, ThermalParams{}, 180.0);
  CHECK(b.hotspot() - 12.5 == Approx(b.top_oil_rise + b.hotspot_rise).epsilon(1e-15));
  CHECK(hotspot_temperature(f, 12.5, ThermalParams{}, 180.0) == b.hotspot());
}

TEST_CASE("thermal parameter and factor invariants are enforced", "[thermal]") {
  ThermalParams p;
  CHECK_NOTHROW(p.validate());
  p.tau_winding = p.tau_oil + 1.0;
  CHECK_THROWS_AS(p.validate(), ParameterError);
  p = ThermalParams{};
  p.oil_exponent = 1.2;
  CHECK_THROWS_AS(p.validate(), ParameterError);
  p = ThermalParams{};
  p.loss_ratio = 0.0;
  CHECK_THROWS_AS(p.validate(), ParameterError);
  CHECK_THROWS_AS((LoadFactors{0.9, 0.9, 0.8, 0.9}.validate()), ParameterError);
  CHECK_NOTHROW((LoadFactors{0.8, 0.9, 0.8, 0.95}.validate()));
  DayWindow w;
  w.peak_end = w.peak_start;
  CHECK_THROWS_AS(w.validate(), ParameterError);
  CHECK(DayWindow{}.peak_minutes() == 180.0);
  CHECK(DayWindow{}.offpeak_span(day0()).first == Timestamp{day0()} + std::chrono::hours{5});
}

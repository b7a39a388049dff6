#include "support.hpp"

using namespace test;
using Catch::Approx;

TEST_CASE("unit trip ratio leaves the observed peak unchanged", "[labeler]") {
  const DayInputs d = balanced_day(0.6, 0.9, 15.0);
  const LoadFactors f = factors_at_trip(90.0, d);
  CHECK(f.k_oil_peak == Approx(0.9));
  CHECK(f.k_winding_peak == Approx(0.9));
  CHECK(f.k_oil_offpeak == Approx(0.6));
}

TEST_CASE("larger scale factor raises the boundary hotspot", "[labeler]") {
  const DayInputs d = balanced_day(0.7, 1.0, 20.0);
  CHECK(hotspot_at_k(2.0, d) > hotspot_at_k(1.0, d));
}

TEST_CASE("boundary hotspot matches a hand-computed chain", "[labeler]") {
  const DayInputs d = balanced_day(0.8, 1.0, 5.0);
  const double k = 1.2, t = 180.0;
  const double mem = 0.4 * std::exp(-t / 7.0) + 0.6 * std::exp(-t / 180.0);
  const double trip = std::sqrt((120.0 * 120.0 - mem * 80.0 * 80.0) / (1.0 - mem));
  const double kp = trip / 100.0;
  const auto oil = [](double kk) { return 55.0 * std::pow((kk * kk * 5.0 + 1.0) / 6.0, 0.8); };
  const auto hs = [](double kk) { return 23.0 * std::pow(kk, 1.6); };
  const double expected = 5.0 + oil(0.8) + (oil(kp) - oil(0.8)) * (1.0 - std::exp(-t / 180.0)) + hs(0.8) +
                          (hs(kp) - hs(0.8)) * (1.0 - std::exp(-t / 7.0));
  CHECK(hotspot_at_k(k, d) == Approx(expected).epsilon(1e-12));
}

TEST_CASE("cold light day clamps at the upper bound", "[labeler]") {
  const DayInputs d = balanced_day(0.1, 0.2, -250.0);
  const auto s = optimal_scale_factor(d);
  CHECK(s.flag == BoundaryFlag::clamped_high);
  CHECK(s.k_opt == 2.5);
  CHECK(s.hotspot < 140.0);
}

TEST_CASE("hot heavy day clamps at the lower bound", "[labeler]") {
  const DayInputs d = balanced_day(0.2, 0.3, 120.0);
  const auto s = optimal_scale_factor(d);
  CHECK(s.flag == BoundaryFlag::clamped_low);
  CHECK(s.hotspot > 140.0);
}

TEST_CASE("interior roots sit within tolerance on the safe side and match bisection", "[labeler]") {
  Rng rng(99);
  int interior = 0;
  for (int i = 0; i < 300; ++i) {
    const DayInputs d = balanced_day(rng.uniform(0.1, 0.9), rng.uniform(0.3, 1.4), rng.uniform(-10.0, 40.0));
    const auto s = optimal_scale_factor(d);
    if (s.flag != BoundaryFlag::interior_root) continue;
    ++interior;
    CHECK(s.hotspot <= 140.0);
    CHECK(s.hotspot >= 140.0 - 0.01);
    const double lo = std::max(0.5, min_feasible_scale_factor(100.0, d.preload(), 180.0, 7.0, 180.0) * 1.000001);
    const double oracle = bisect([&](double k) { return hotspot_at_k(k, d) - 140.0; }, lo, 2.5, 80);
    CHECK(std::abs(s.k_opt - oracle) <= 1e-3);
  }
  CHECK(interior > 100);
}

TEST_CASE("optimal scale factor does not increase with ambient", "[labeler]") {
  double prev = 1e9;
  for (double amb = -20.0; amb <= 40.0; amb += 2.5) {
    const double k = optimal_scale_factor(balanced_day(0.6, 1.0, amb)).k_opt;
    CHECK(k <= prev + 1e-9);
    prev = k;
  }
}

TEST_CASE("optimal scale factor is invariant to the current base", "[labeler]") {
  for (double rated : {10.0, 100.0, 1234.5}) {
    const auto s = optimal_scale_factor(balanced_day(0.55, 1.1, 18.0, rated));
    CHECK(s.k_opt == Approx(optimal_scale_factor(balanced_day(0.55, 1.1, 18.0)).k_opt).epsilon(1e-9));
  }
}

TEST_CASE("labeler config is validated", "[labeler]") {
  LabelerConfig c;
  c.k_min = 3.0;
  CHECK_THROWS_AS(optimal_scale_factor(balanced_day(0.5, 1.0, 10.0), c), ConfigError);
  CHECK(parse_boundary_flag(to_string(BoundaryFlag::clamped_low)) == BoundaryFlag::clamped_low);
  CHECK_THROWS_AS(parse_boundary_flag("nope"), DataValidationError);
}

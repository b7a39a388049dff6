#include <sstream>

#include "support.hpp"

using namespace test;
using Catch::Approx;

namespace {

struct Noisy {
  std::vector<double> x, y;
};

Noisy sine_data(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Noisy d;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform(0.0, 6.0);
    d.x.push_back(x);
    d.y.push_back(std::sin(x) + rng.normal(0.0, 0.3));
  }
  return d;
}

std::vector<double> predict_all(const QuantileModelSet& m, const std::vector<double>& x, std::size_t which) {
  std::vector<double> out;
  for (double v : x) {
    const double row[] = {v};
    out.push_back(m.predict_raw(row)[which]);
  }
  return out;
}

}  // namespace

TEST_CASE("pinball loss examples", "[forecaster]") {
  CHECK(pinball_loss(3.0, 3.0, 0.3) == 0.0);
  CHECK(pinball_loss(3.0, 1.0, 0.5) == 1.0);
  CHECK(pinball_loss(1.0, 3.0, 0.5) == 1.0);
  CHECK(pinball_loss(2.0, 1.0, 0.9) == Approx(0.9));
  CHECK(pinball_loss(1.0, 2.0, 0.9) == Approx(0.1));
  CHECK(pinball_loss(1.0, 2.0, 0.95) == Approx(0.05));
  CHECK(pinball_loss(2.0, 1.0, 0.05) == Approx(0.05));
  CHECK_THROWS_AS(pinball_loss(1.0, 1.0, 0.0), ParameterError);
  CHECK_THROWS_AS(pinball_loss(1.0, 1.0, 1.0), ParameterError);
  const std::vector<double> y{1, 2, 3}, p{2, 2, 2};
  CHECK(mean_pinball_loss(y, p, 0.5) == Approx(1.0 / 3.0));
}

TEST_CASE("sample quantile interpolates linearly", "[forecaster]") {
  CHECK(sample_quantile(std::vector<double>{4, 1, 3, 2}, 0.5) == Approx(2.5));
  CHECK(sample_quantile(std::vector<double>{4, 1, 3, 2}, 0.0) == 1.0);
  CHECK(sample_quantile(std::vector<double>{4, 1, 3, 2}, 1.0) == 4.0);
  CHECK(sample_quantile(std::vector<double>{0, 10}, 0.05) == Approx(0.5));
}

TEST_CASE("constant target gives constant predictions", "[forecaster]") {
  std::vector<double> x, y;
  for (int i = 0; i < 200; ++i) x.push_back(i * 0.1), y.push_back(1.3);
  const auto m = QuantileModelSet::train(0, default_percentiles(), BoostingParams{}, 1, one_feature_table(x, y));
  for (double v : {-5.0, 0.0, 7.5, 100.0}) {
    const double row[] = {v};
    for (double k : m.predict(row)) CHECK(k == Approx(1.3).epsilon(1e-12));
  }
}

TEST_CASE("step function is learned far better than a constant", "[forecaster]") {
  Rng rng(2);
  std::vector<double> x, y;
  for (int i = 0; i < 400; ++i) {
    const double v = rng.uniform(0.0, 10.0);
    x.push_back(v);
    y.push_back((v < 5.0 ? 1.0 : 2.0) + rng.normal(0.0, 0.01));
  }
  const auto t = one_feature_table(x, y);
  BoostingParams params;
  params.n_rounds = 200;
  const auto b = train_quantile_model(t, 0.5, params, 3);
  std::vector<double> pred, base(y.size(), sample_quantile(y, 0.5));
  for (double v : x) {
    const double row[] = {v};
    pred.push_back(b.model().predict(row));
  }
  CHECK(mean_pinball_loss(y, pred, 0.5) <= 0.10 * mean_pinball_loss(y, base, 0.5));
}

TEST_CASE("predicted quantiles never cross", "[forecaster]") {
  std::vector<double> x, y;
  for (int i = 0; i < 60; ++i) x.push_back(i), y.push_back(0.0);
  const auto t = one_feature_table(x, y);
  QuantileEnsemble lo{0.05, 2.0, {"x"}, {}, {}, 1}, hi{0.95, 1.0, {"x"}, {}, {}, 2};
  const auto m = QuantileModelSet::resume(0, {lo, hi}, BoostingParams{}, t);
  const double row[] = {3.0};
  CHECK(m.predict_raw(row) == std::vector<double>{2.0, 1.0});
  CHECK(m.predict(row) == std::vector<double>{1.0, 2.0});
  CHECK(predict_quantiles(m, "T1", day0(), row).non_crossing());

  const auto d = sine_data(500, 4);
  const auto real = QuantileModelSet::train(0, default_percentiles(), BoostingParams{}, 5, one_feature_table(d.x, d.y));
  for (double v = -1.0; v <= 7.0; v += 0.05) {
    const double r[] = {v};
    CHECK(predict_quantiles(real, "T1", day0(), r).non_crossing());
  }
}

TEST_CASE("incremental update with no rows leaves the models unchanged", "[forecaster]") {
  const auto d = sine_data(200, 6);
  auto m = QuantileModelSet::train(0, {0.1, 0.9}, BoostingParams{}, 7, one_feature_table(d.x, d.y));
  std::ostringstream before;
  m.write(before);
  m.incremental_update(one_feature_table({}, {}), 5);
  std::ostringstream after;
  m.write(after);
  CHECK(before.str() == after.str());
}

TEST_CASE("incremental update adds trees and tracks training loss", "[forecaster]") {
  const auto d = sine_data(300, 8);
  const auto t = one_feature_table(d.x, d.y);
  auto m = QuantileModelSet::train(0, {0.5}, BoostingParams{}, 9, t);
  const auto trees = m.model(0).trees.size();
  const double loss = m.training_loss(0);
  CHECK(loss == Approx(mean_pinball_loss(d.y, predict_all(m, d.x, 0), 0.5)).epsilon(1e-12));

  const auto fresh = sine_data(40, 10);
  TrainingTable extra({"x"}, {});
  for (std::size_t i = 0; i < fresh.x.size(); ++i) {
    const double row[] = {fresh.x[i]};
    extra.add_row(row, fresh.y[i], 1000 + i);
  }
  auto all_x0 = d.x, all_y0 = d.y;
  all_x0.insert(all_x0.end(), fresh.x.begin(), fresh.x.end());
  all_y0.insert(all_y0.end(), fresh.y.begin(), fresh.y.end());
  const double before_on_grown = mean_pinball_loss(all_y0, predict_all(m, all_x0, 0), 0.5);
  const auto prior = m.model(0).trees;
  m.incremental_update(extra, 5);
  CHECK(m.model(0).trees.size() == trees + 5);
  CHECK(m.training_loss(0) <= before_on_grown);
  for (std::size_t i = 0; i < prior.size(); ++i) {
    CHECK(m.model(0).trees[i].nodes.size() == prior[i].nodes.size());
    CHECK(m.model(0).trees[i].nodes.back().value == prior[i].nodes.back().value);
  }
  auto all_x = d.x, all_y = d.y;
  all_x.insert(all_x.end(), fresh.x.begin(), fresh.x.end());
  all_y.insert(all_y.end(), fresh.y.begin(), fresh.y.end());
  CHECK(m.training_loss(0) == Approx(mean_pinball_loss(all_y, predict_all(m, all_x, 0), 0.5)).epsilon(1e-12));
}

TEST_CASE("training loss does not grow with boosting rounds", "[forecaster]") {
  const auto d = sine_data(400, 27);
  const auto t = one_feature_table(d.x, d.y);
  for (double q : {0.05, 0.5, 0.95}) {
    BoostingParams one;
    one.n_rounds = 1;
    QuantileBooster first(q, one, 28);
    first.fit(t);
    double prev = first.training_loss();
    for (int round = 0; round < 60; ++round) {
      first.boost(1);
      CHECK(first.training_loss() <= prev + 1e-3);
      prev = first.training_loss();
    }
  }
}

TEST_CASE("training is invariant to row order", "[forecaster]") {
  const auto d = sine_data(300, 11);
  const auto t = one_feature_table(d.x, d.y);
  std::vector<std::size_t> perm(t.n_rows());
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[3], perm[200]);
  const auto shuffled = t.subset(perm);
  const auto a = QuantileModelSet::train(0, {0.05, 0.95}, BoostingParams{}, 12, t);
  const auto b = QuantileModelSet::train(0, {0.05, 0.95}, BoostingParams{}, 12, shuffled);
  std::ostringstream sa, sb;
  a.write(sa);
  b.write(sb);
  CHECK(sa.str() == sb.str());
}

TEST_CASE("model store round-trips exactly", "[forecaster]") {
  const auto d = sine_data(250, 13);
  TrainingTable t({"x", "site"}, {false, true});
  for (std::size_t i = 0; i < d.x.size(); ++i) {
    const double row[] = {d.x[i], double(i % 4)};
    t.add_row(row, d.y[i] + 0.2 * double(i % 4), i);
  }
  const auto m = QuantileModelSet::train(3, default_percentiles(), BoostingParams{}, 14, t);
  std::stringstream io;
  m.write(io);
  const auto stored = QuantileModelSet::read(io);
  CHECK(stored.cluster_id == 3);
  CHECK(stored.schema == m.schema_hash());
  REQUIRE(stored.models.size() == 4);
  for (double v = 0.0; v < 6.0; v += 0.37) {
    for (double s : {0.0, 1.0, 2.0, 3.0, 9.0}) {
      const double row[] = {v, s};
      const auto raw = m.predict_raw(row);
      for (std::size_t i = 0; i < 4; ++i) CHECK(stored.models[i].predict(row) == raw[i]);
    }
  }
  std::istringstream bad("something else");
  CHECK_THROWS_AS(QuantileModelSet::read(bad), DataValidationError);
}

TEST_CASE("resumed models continue exactly like the originals", "[forecaster]") {
  const auto d = sine_data(300, 15);
  const auto t = one_feature_table(d.x, d.y);
  auto original = QuantileModelSet::train(0, {0.05, 0.5, 0.95}, BoostingParams{}, 16, t);
  std::stringstream io;
  original.write(io);
  auto resumed = QuantileModelSet::resume(0, QuantileModelSet::read(io).models, BoostingParams{}, t);
  CHECK(resumed.training_loss(1) == Approx(original.training_loss(1)).epsilon(1e-14));

  const auto fresh = sine_data(30, 17);
  TrainingTable extra({"x"}, {});
  for (std::size_t i = 0; i < fresh.x.size(); ++i) {
    const double row[] = {fresh.x[i]};
    extra.add_row(row, fresh.y[i], 5000 + i);
  }
  original.incremental_update(extra, 5);
  resumed.incremental_update(extra, 5);
  std::ostringstream a, b;
  original.write(a);
  resumed.write(b);
  CHECK(a.str() == b.str());
}

TEST_CASE("schema mismatches are rejected", "[forecaster]") {
  const auto d = sine_data(100, 18);
  auto m = QuantileModelSet::train(0, {0.5}, BoostingParams{}, 1, one_feature_table(d.x, d.y));
  const double wide[] = {1.0, 2.0};
  CHECK_THROWS_AS(m.predict(wide), ParameterError);
  TrainingTable other({"z"}, {});
  const double row[] = {1.0};
  other.add_row(row, 1.0, 1);
  CHECK_THROWS_AS(m.incremental_update(other, 5), ParameterError);
  CHECK_THROWS_AS(QuantileModelSet::train(0, {0.5, 0.4}, BoostingParams{}, 1, one_feature_table(d.x, d.y)), ConfigError);
}

TEST_CASE("multi-temperature expansion", "[forecaster]") {
  TrainingTable t({"a", "peak_ambient"}, {});
  for (int i = 0; i < 50; ++i) {
    const double row[] = {double(i), 10.0};
    t.add_row(row, 1.0 + i, static_cast<std::uint64_t>(i) * 7 + 1);
  }
  SECTION("one replica is the identity") {
    const auto e = expand_multi_temperature(t, 1, 2.0, 3);
    CHECK(e.values == t.values);
    CHECK(e.keys == t.keys);
  }
  SECTION("zero radius copies rows") {
    const auto e = expand_multi_temperature(t, 4, 0.0, 3);
    REQUIRE(e.n_rows() == 200);
    for (std::size_t r = 0; r < e.n_rows(); ++r) CHECK(e.at(r, 1) == 10.0);
  }
  SECTION("shifts stay within the radius and cover it") {
    const auto e = expand_multi_temperature(t, 5, 2.0, 3);
    REQUIRE(e.n_rows() == 250);
    double lo = 1e9, hi = -1e9;
    for (std::size_t r = 0; r < e.n_rows(); ++r) {
      const double shift = e.at(r, 1) - 10.0;
      CHECK(std::abs(shift) <= 2.0);
      if (r % 5 == 0) CHECK(shift == 0.0);
      CHECK(e.target[r] == t.target[r / 5]);
      CHECK(e.at(r, 0) == t.at(r / 5, 0));
      lo = std::min(lo, shift);
      hi = std::max(hi, shift);
    }
    CHECK(lo < -1.8);
    CHECK(hi > 1.8);
    std::set<std::uint64_t> keys(e.keys.begin(), e.keys.end());
    CHECK(keys.size() == e.n_rows());
    CHECK(expand_multi_temperature(t, 5, 2.0, 3).values == e.values);
  }
  CHECK_THROWS_AS(expand_multi_temperature(t, 0, 2.0, 3), ParameterError);
  CHECK_THROWS_AS(expand_multi_temperature(t, 2, 1.0, 3, "missing"), ParameterError);
}

TEST_CASE("median model is exceeded about half the time out of sample", "[forecaster]") {
  const auto train = sine_data(1500, 19);
  const auto test = sine_data(1000, 20);
  const auto m = QuantileModelSet::train(0, {0.5}, BoostingParams{}, 21, one_feature_table(train.x, train.y));
  const auto p = predict_all(m, test.x, 0);
  std::size_t above = 0;
  for (std::size_t i = 0; i < p.size(); ++i) above += test.y[i] > p[i];
  const double frac = double(above) / double(p.size());
  CHECK(frac >= 0.40);
  CHECK(frac <= 0.60);
}

TEST_CASE("quantile models are calibrated out of sample", "[forecaster]") {
  const auto train = sine_data(2000, 22);
  const auto valid = sine_data(500, 23);
  const auto test = sine_data(2000, 24);
  const std::vector<double> qs{0.05, 0.25, 0.5, 0.75, 0.95};
  const auto tv = one_feature_table(valid.x, valid.y);
  const auto m = QuantileModelSet::train(0, qs, BoostingParams{}, 25, one_feature_table(train.x, train.y), &tv);
  for (std::size_t i = 0; i < qs.size(); ++i) {
    const auto p = predict_all(m, test.x, i);
    std::size_t below = 0;
    for (std::size_t j = 0; j < p.size(); ++j) below += test.y[j] <= p[j];
    CHECK(double(below) / double(p.size()) == Approx(qs[i]).margin(0.07));
  }
}

TEST_CASE("too few rows is an error", "[forecaster]") {
  const auto d = sine_data(49, 26);
  CHECK_THROWS_AS(QuantileModelSet::train(0, {0.5}, BoostingParams{}, 1, one_feature_table(d.x, d.y)), InsufficientDataError);
  const auto e = sine_data(50, 26);
  CHECK_NOTHROW(QuantileModelSet::train(0, {0.5}, BoostingParams{}, 1, one_feature_table(e.x, e.y)));
}

TEST_CASE("chronological split holds out the latest dates", "[forecaster]") {
  std::vector<Date> dates;
  for (int d = 0; d < 10; ++d) {
    for (int t = 0; t < 3; ++t) dates.push_back(day0() + std::chrono::days{9 - d});
  }
  const auto [fit, val] = chronological_split(dates.size(), [&](std::size_t i) { return dates[i]; }, 0.2);
  CHECK(fit.size() == 24);
  CHECK(val.size() == 6);
  for (auto i : val) CHECK(dates[i] >= day0() + std::chrono::days{8});
}

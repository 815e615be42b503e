#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "gcfn/data/csv.hpp"
#include "gcfn/data/simulate.hpp"
#include "gcfn/errors.hpp"
#include "gcfn/metrics/metrics.hpp"

using namespace gcfn;
using namespace gcfn::metrics;
using gcfn::nn::Activation;

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

fair::Predictor logistic(double wx, double wm, double b) {
  fair::Predictor h;
  h.x_width = 1;
  h.m_width = 1;
  nn::DenseLayer l;
  l.weight = Matrix(1, 2, {wx, wm});
  l.bias = {b};
  l.activation = Activation::kSigmoid;
  h.net.layers.push_back(std::move(l));
  h.net.batch_norms.emplace_back(std::nullopt);
  return h;
}

gan::Generator shift_generator(double s) {
  gan::Generator g;
  g.x_width = 1;
  g.m_width = 1;
  data::ColumnBlock blk;
  blk.name = "m";
  blk.width = 1;
  g.mediator_blocks = {blk};
  nn::DenseLayer l;
  l.weight = Matrix(2, 3, {0.0, -s, 1.0, 0.0, -s, 1.0});
  l.bias = {0.0, s};
  l.activation = Activation::kIdentity;
  g.net.layers.push_back(std::move(l));
  g.net.batch_norms.emplace_back(std::nullopt);
  return g;
}

data::Dataset synthetic(std::uint64_t seed, std::size_t n) {
  auto cfg = data::ScmConfig::defaults(data::ScmKind::kSyntheticLinear, seed);
  cfg.n_samples = n;
  return data::simulate(cfg);
}

std::vector<double> column0(const Matrix& m) {
  std::vector<double> v(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) v[r] = m(r, 0);
  return v;
}

double nmse_vs(const std::vector<double>& m, const std::vector<double>& cf, const std::vector<double>& hat) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    num += (cf[i] - hat[i]) * (cf[i] - hat[i]);
    den += (m[i] - cf[i]) * (m[i] - cf[i]);
  }
  return num / den;
}

}  // namespace

TEST_CASE("cf_metric examples") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  Matrix x(40, 1), m(40, 1), ref(40, 1);
  for (double& v : x.values()) v = nd(rng);
  for (double& v : m.values()) v = nd(rng);
  for (double& v : ref.values()) v = nd(rng);
  CHECK(cf_metric(logistic(0.3, 0.0, -0.2), x, m, ref) == 0.0);
  CHECK(cf_metric(logistic(0.3, 1.7, -0.2), x, m, m) == 0.0);

  // Prediction gaps 0.1 and 0.3.
  const Matrix x2(2, 1);
  const Matrix m2(2, 1, {logit(0.6), logit(0.9)});
  const Matrix r2(2, 1, {logit(0.5), logit(0.6)});
  CHECK(cf_metric(logistic(0.0, 1.0, 0.0), x2, m2, r2) == doctest::Approx(0.05).epsilon(1e-12));

  data::Dataset real = synthetic(1, 50);
  real.m_cf.reset();
  CHECK_THROWS_AS(cf_true(logistic(0, 1, 0), real), ValidationError);
}

TEST_CASE("utility") {
  CHECK(utility(0.8, 0.1, 0.5) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(utility(0.8123, 0.7, 0.0) == 0.8123);
  CHECK_THROWS_AS(utility(0.8, 0.1, -0.1), ValidationError);
  const auto grid = default_gamma_grid();
  REQUIRE(grid.size() == 10);
  CHECK(grid.front() == doctest::Approx(0.1));
  CHECK(grid.back() == 1.0);
}

TEST_CASE("normalized_mse examples") {
  const Matrix m(3, 2, {0, 1, 2, 3, 4, 5});
  const Matrix cf(3, 2, {1, 1, 2, 5, 3, 5});
  const auto perfect = normalized_mse(m, cf, cf);
  CHECK(perfect.m_vs_cf == 1.0);
  CHECK(perfect.m_vs_hat == 1.0);
  CHECK(perfect.cf_vs_hat == 0.0);
  const auto copy = normalized_mse(m, cf, m);
  CHECK(copy.m_vs_hat == 0.0);
  CHECK(copy.cf_vs_hat == 1.0);
  CHECK_THROWS_AS(normalized_mse(m, m, cf), NumericError);
  CHECK_THROWS_AS(normalized_mse(m, Matrix(3, 1), cf), ShapeError);
}

TEST_CASE("confusion examples") {
  const std::vector<int> y = {1, 0, 1, 0, 1, 0};
  const auto perfect = confusion(y, y);
  CHECK(*perfect.acc == 1.0);
  CHECK(*perfect.ppv == 1.0);
  CHECK(*perfect.fpr == 0.0);
  CHECK(*perfect.fnr == 0.0);
  const std::vector<int> ones(6, 1);
  const auto all_pos = confusion(y, ones);
  CHECK(*all_pos.fpr == 1.0);
  CHECK(*all_pos.fnr == 0.0);
  CHECK(*all_pos.acc == 0.5);

  // Group 1 has only positives: FPR absent, not 0.
  const std::vector<int> yt = {0, 1, 1, 1}, yp = {1, 1, 0, 1}, a = {0, 1, 1, 1};
  const auto rep = confusion_metrics(yt, yp, a);
  REQUIRE(rep.by_group[1]);
  CHECK_FALSE(rep.by_group[1]->fpr.has_value());
  CHECK(rep.by_group[1]->fnr.value() == doctest::Approx(1.0 / 3.0));
  REQUIRE(rep.by_group[0]);
  CHECK_FALSE(rep.by_group[0]->fnr.has_value());
  CHECK_FALSE(confusion_metrics(yt, yp, std::vector<int>{0, 0, 0, 0}).by_group[1].has_value());
  const std::vector<int> zeros(6, 0);
  CHECK_FALSE(confusion(y, zeros).ppv.has_value());
  CHECK_THROWS_AS(confusion(y, std::vector<int>{1, 0}), ShapeError);
  CHECK_THROWS_AS(confusion(y, std::vector<int>{1, 0, 2, 0, 1, 0}), ValidationError);
}

TEST_CASE("confusion rates match a brute-force cell count") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> len(1, 20), bit(0, 1);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = len(rng);
    std::vector<int> yt(n), yp(n), a(n);
    for (int i = 0; i < n; ++i) {
      yt[i] = bit(rng);
      yp[i] = bit(rng);
      a[i] = bit(rng);
    }
    const auto rep = confusion_metrics(yt, yp, a);
    for (int g = -1; g < 2; ++g) {
      int cell[2][2] = {{0, 0}, {0, 0}};  // [y_true][y_pred]
      for (int i = 0; i < n; ++i) {
        if (g < 0 || a[i] == g) cell[yt[i]][yp[i]]++;
      }
      const int total = cell[0][0] + cell[0][1] + cell[1][0] + cell[1][1];
      const auto& c = g < 0 ? std::optional<Confusion>(rep.overall) : rep.by_group[g];
      if (total == 0) {
        CHECK_FALSE(c.has_value());
        continue;
      }
      REQUIRE(c.has_value());
      CHECK(*c->acc == doctest::Approx(double(cell[0][0] + cell[1][1]) / total));
      if (cell[0][1] + cell[1][1] > 0) CHECK(*c->ppv == doctest::Approx(double(cell[1][1]) / (cell[0][1] + cell[1][1])));
      else CHECK_FALSE(c->ppv.has_value());
      if (cell[0][0] + cell[0][1] > 0) CHECK(*c->fpr == doctest::Approx(double(cell[0][1]) / (cell[0][0] + cell[0][1])));
      else CHECK_FALSE(c->fpr.has_value());
      if (cell[1][0] + cell[1][1] > 0) CHECK(*c->fnr == doctest::Approx(double(cell[1][0]) / (cell[1][0] + cell[1][1])));
      else CHECK_FALSE(c->fnr.has_value());
    }
  }
}

TEST_CASE("quantile oracle: Gaussian shift, identity, involution") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 0.1);
  const std::size_t n = 8000;
  Matrix x(n, 1, 0.5);  // one covariate value -> a single exact bin
  std::vector<int> a(n);
  std::vector<double> m(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = static_cast<int>(i % 2);
    m[i] = a[i] + nd(rng);
  }
  const QuantileOracle oracle(x, a, m);
  CHECK(oracle.exact_bins());
  CHECK(oracle.n_bins() == 1);
  const std::vector<double> xr = {0.5};
  // Exact answers: increasing m' = m + 1, decreasing m' = 1 - m (mirror around the means).
  CHECK(oracle.counterfactual(xr, 0, 0.0, Branch::kIncreasing) == doctest::Approx(1.0).epsilon(0.01));
  CHECK(oracle.counterfactual(xr, 0, 0.1, Branch::kIncreasing) == doctest::Approx(1.1).epsilon(0.01));
  CHECK(oracle.counterfactual(xr, 0, 0.1, Branch::kDecreasing) == doctest::Approx(0.9).epsilon(0.01));
  CHECK(oracle.counterfactual(xr, 1, 0.95, Branch::kIncreasing) == doctest::Approx(-0.05).epsilon(0.01));

  for (std::size_t i = 0; i < 200; ++i) {
    CHECK(oracle.counterfactual(xr, a[i], a[i], m[i], Branch::kIncreasing) == doctest::Approx(m[i]).epsilon(1e-12));
    for (Branch b : {Branch::kIncreasing, Branch::kDecreasing}) {
      const double there = oracle.counterfactual(xr, a[i], m[i], b);
      const double back = oracle.counterfactual(xr, 1 - a[i], there, b);
      CHECK(back == doctest::Approx(m[i]).epsilon(1e-9));
    }
  }

  // CDF is monotone and within (0, 1).
  double prev = -1.0;
  for (double t = -0.5; t < 1.5; t += 0.01) {
    const double u = oracle.cdf(0, 1, t);
    CHECK(u >= prev);
    CHECK(u > 0.0);
    CHECK(u < 1.0);
    prev = u;
  }
}

TEST_CASE("quantile oracle: coverage and binning") {
  Matrix x(4, 1, {0.0, 0.0, 1.0, 1.0});
  const std::vector<int> a = {0, 1, 0, 0};
  const std::vector<double> m = {0.1, 0.2, 0.3, 0.4};
  const QuantileOracle oracle(x, a, m);
  CHECK(oracle.n_bins() == 2);
  const std::vector<double> x1 = {1.0}, x9 = {9.0};
  CHECK_THROWS_AS(oracle.counterfactual(x1, 0, 0.3, Branch::kIncreasing), CoverageError);
  CHECK_THROWS_AS(oracle.counterfactual(x9, 0, 0.3, Branch::kIncreasing), CoverageError);

  // Continuous covariate: equal-frequency bins that cover the whole line.
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  Matrix xc(1000, 1);
  std::vector<int> ac(1000);
  std::vector<double> mc(1000);
  for (std::size_t i = 0; i < 1000; ++i) {
    xc(i, 0) = nd(rng);
    ac[i] = static_cast<int>(i % 2);
    mc[i] = nd(rng);
  }
  const QuantileOracle cont(xc, ac, mc);
  CHECK_FALSE(cont.exact_bins());
  CHECK(cont.n_bins() == 10);
  for (std::size_t b = 0; b < 10; ++b) CHECK(cont.cell_size(b, 0) + cont.cell_size(b, 1) == 100);
  CHECK(cont.bin_of(std::vector<double>{-1e9}) == 0);
  CHECK(cont.bin_of(std::vector<double>{1e9}) == 9);
  Matrix wide(1000, 2);
  for (double& v : wide.values()) v = nd(rng);
  CHECK_THROWS_AS(QuantileOracle(wide, ac, mc), ValidationError);
}

TEST_CASE("quantile oracle recovers the synthetic-linear counterfactual") {
  const auto ds = synthetic(5, 10000);
  const auto m = column0(ds.m);
  const auto cf = column0(*ds.m_cf);
  const QuantileOracle oracle(ds.x, ds.a, m);
  double best = 1e9;
  for (Branch b : {Branch::kIncreasing, Branch::kDecreasing}) {
    best = std::min(best, nmse_vs(m, cf, bgm_oracle_counterfactuals(oracle, ds.x, ds.a, m, b)));
  }
  MESSAGE("oracle nmse " << best);
  CHECK(best <= 0.05);
}

TEST_CASE("density export and total variation") {
  std::vector<double> v;
  std::vector<int> g;
  for (int i = 0; i < 1000; ++i) {
    v.push_back((i + 0.5) / 1000.0);
    g.push_back(0);
    v.push_back((i + 0.5) / 1000.0);
    g.push_back(1);
  }
  const auto h = density_export(v, g, 10);
  REQUIRE(h.rows.size() == 20);
  CHECK(h.empty_groups.empty());
  for (int grp = 0; grp < 2; ++grp) {
    double mass = 0.0;
    for (const auto& r : h.rows) {
      if (r.group != grp) continue;
      CHECK(r.density == doctest::Approx(1.0));
      mass += r.density * (r.bin_hi - r.bin_lo);
    }
    CHECK(std::abs(mass - 1.0) <= 1e-9);
  }
  CHECK(tv_distance(h) == 0.0);

  // Group 0 all in the first bin, group 1 all in the last (value 1 belongs to the last bin).
  const auto apart = density_export(std::vector<double>{0.0, 0.05, 1.0}, std::vector<int>{0, 0, 1}, 4);
  CHECK(tv_distance(apart) == 1.0);

  const auto one = density_export(std::vector<double>{0.2, 0.4}, std::vector<int>{1, 1}, 5);
  CHECK(one.empty_groups == std::vector<int>{0});
  CHECK(one.rows.size() == 5);
  CHECK_THROWS_AS(tv_distance(one), ValidationError);
  CHECK_THROWS_AS(density_export(v, g, 1), ValidationError);
  CHECK_THROWS_AS(density_export(std::vector<double>{1.5}, std::vector<int>{0}, 4), ValidationError);
}

TEST_CASE("bound audit arithmetic") {
  auto ds = data::split(synthetic(6, 2000), 0.2, 6).test;
  const auto h = logistic(0.2, 1.5, -0.1);
  const auto g = shift_generator(0.4);
  const auto b = bound_audit(h, 1.5 / 4.0, ds, g);
  CHECK(b.rhs == doctest::Approx(2.0 * b.lipschitz * b.lipschitz * b.recon_error + 2.0 * b.rcm).epsilon(1e-15));
  CHECK(b.cf == doctest::Approx(cf_true(h, ds)).epsilon(1e-15));
  CHECK(b.holds);
  CHECK(b.recon_error > 0.0);
  ds.m_cf.reset();
  CHECK_THROWS_AS(bound_audit(h, 1.0, ds, g), ValidationError);
}

TEST_CASE("evaluate and report aggregation") {
  const auto parts = data::split(synthetic(7, 3000), 0.2, 7);
  fair::PredictorBundle bundle;
  bundle.predictor = logistic(0.4, 0.9, 0.0);
  bundle.lipschitz_cert = 0.9 / 4.0;
  const auto gen = shift_generator(1.0 / parts.train.standardization.m_scale[0]);
  const auto r = evaluate(bundle, gen, parts.test);
  CHECK(r.get("nmse.m_vs_cf") == 1.0);
  CHECK(*r.get("nmse.cf_vs_hat") < 1e-20);
  CHECK(*r.get("cf_gen") == doctest::Approx(*r.get("cf_true")).epsilon(1e-9));
  CHECK(*r.get("utility@0.5") == *r.get("accuracy") - 0.5 * *r.get("cf_true"));
  CHECK(r.get("bound.holds") == 1.0);
  CHECK(r.get("confusion.a0.acc").has_value());
  CHECK(r.get("n_test") == 600.0);
  for (const auto& [k, v] : r.values) CHECK_MESSAGE(std::isfinite(v), k);

  MetricsReport rep;
  RunMetrics r1, r2;
  r1.values = {{"accuracy", 0.8}, {"cf_gen", 0.01}};
  r2.values = {{"accuracy", 0.6}};
  rep.runs = {r1, r2};
  rep.run_labels = {"seed=0", "seed=1"};
  CHECK(*rep.mean("accuracy") == doctest::Approx(0.7));
  CHECK(*rep.stddev("accuracy") == doctest::Approx(std::sqrt(0.02)));
  CHECK(*rep.mean("cf_gen") == 0.01);
  CHECK(*rep.stddev("cf_gen") == 0.0);
  CHECK_FALSE(rep.mean("missing").has_value());
  const auto j = rep.to_json();
  CHECK(j.at("n_runs") == 2);
  CHECK(j.at("summary").at("cf_gen").at("n") == 1);
  const auto back = MetricsReport::from_json(j);
  CHECK(back.runs[0].values == r1.values);
  CHECK(back.run_labels == rep.run_labels);

  const auto path = std::filesystem::temp_directory_path() / "gcfn_metrics_report.csv";
  rep.write_csv(path);
  const auto t = data::read_csv(path);
  CHECK(t.header == std::vector<std::string>{"run", "accuracy", "cf_gen"});
  CHECK(t.rows[1][2].empty());
  std::filesystem::remove(path);
}

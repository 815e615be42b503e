#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "gcfn/data/csv.hpp"
#include "gcfn/data/simulate.hpp"
#include "gcfn/errors.hpp"
#include "gcfn/fair_predictor/predictor.hpp"
#include "gcfn/nn/loss.hpp"

using namespace gcfn;
using namespace gcfn::fair;
using gcfn::nn::Activation;

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

// h(x, m) = sigmoid(wx·x + wm·m + b), one covariate, one mediator.
Predictor logistic(double wx, double wm, double b) {
  Predictor h;
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

// Input (x, a, m) -> (m̂0, m̂1) = (m - s·a, m + s·(1 - a)).
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

struct Fixture {
  data::Dataset train, test;
  gan::GanBundle gan;
};

// Synthetic-linear data plus the exact counterfactual generator: in the linear SCM the
// mediator moves by beta3 when A flips, which is beta3 / scale on the stored scale.
Fixture synthetic_fixture(std::uint64_t seed, std::size_t n) {
  auto cfg = data::ScmConfig::defaults(data::ScmKind::kSyntheticLinear, seed);
  cfg.n_samples = n;
  auto parts = data::split(data::simulate(cfg), 0.2, seed);
  Fixture f{std::move(parts.train), std::move(parts.test), {}};
  f.gan.generator = shift_generator(cfg.coef.beta3 / f.train.standardization.m_scale[0]);
  f.gan.schema = data::schema_to_json(f.train.schema);
  return f;
}

double mean_abs_cf_gap(const Predictor& h, const data::Dataset& ds) {
  const auto p = predict(h, ds.x, ds.m);
  const auto q = predict(h, ds.x, *ds.m_cf);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return s / static_cast<double>(p.size());
}

PredictorTrainConfig quick_config(double lambda, std::uint64_t seed) {
  PredictorTrainConfig c;
  c.lambda = lambda;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("config defaults and json round trip") {
  const PredictorTrainConfig d;
  CHECK(d.epochs == 30);
  CHECK(d.lr == 0.005);
  CHECK(d.lambda == 0.5);
  PredictorTrainConfig c;
  c.lambda = 2.0;
  c.spectral_norm = true;
  c.seed = 9;
  const auto back = predictor_config_from_json(predictor_config_to_json(c));
  CHECK(back.lambda == 2.0);
  CHECK(back.spectral_norm);
  CHECK(back.seed == 9);
  CHECK_THROWS_AS(predictor_config_from_json({{"lambda", -1.0}}), ValidationError);
  CHECK_THROWS_AS(predictor_config_from_json({{"epochs", 0}}), ValidationError);
}

TEST_CASE("the shift generator reproduces the simulator's counterfactual") {
  const auto f = synthetic_fixture(1, 2000);
  const Matrix cf = gan::generate_counterfactual(f.gan.generator, f.test);
  for (std::size_t r = 0; r < cf.rows(); ++r) CHECK(cf(r, 0) == doctest::Approx((*f.test.m_cf)(r, 0)).epsilon(1e-9));
}

TEST_CASE("rcm examples") {
  const Matrix x(3, 1, {0.2, -1.0, 0.5});
  const Matrix m(3, 1, {1.0, 2.0, -3.0});
  const Matrix m_cf(3, 1, {4.0, -2.0, 0.0});
  CHECK(rcm(logistic(0.7, 0.0, 0.1), x, m, m_cf) == 0.0);

  // Counterfactual slot returns m itself.
  const std::vector<int> a = {0, 1, 1};
  CHECK(rcm(logistic(0.7, 1.3, 0.1), x, a, m, shift_generator(0.0)) == 0.0);

  // One row with h = 0.9 factually and 0.7 counterfactually.
  const double r = rcm(logistic(0.0, 1.0, 0.0), Matrix(1, 1), Matrix(1, 1, logit(0.9)), Matrix(1, 1, logit(0.7)));
  CHECK(r == doctest::Approx(0.04).epsilon(1e-12));
}

TEST_CASE("rcm rejects a generator built for other widths") {
  gan::Generator g = shift_generator(1.0);
  g.m_width = 2;
  CHECK_THROWS_AS(rcm(logistic(0, 1, 0), Matrix(2, 1), std::vector<int>{0, 1}, Matrix(2, 1), g), ValidationError);
}

TEST_CASE("total loss decomposes into cross-entropy plus lambda times rcm") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  Matrix x(50, 1), m(50, 1);
  for (double& v : x.values()) v = nd(rng);
  for (double& v : m.values()) v = nd(rng);
  std::vector<int> a(50), y(50);
  for (std::size_t i = 0; i < 50; ++i) {
    a[i] = static_cast<int>(i % 2);
    y[i] = static_cast<int>((i / 3) % 2);
  }
  const Predictor h = logistic(0.4, -0.8, 0.2);
  const gan::Generator g = shift_generator(0.6);
  const double ce = nn::cross_entropy(predict(h, x, m), y);
  CHECK(total_loss(h, x, a, m, y, g, 0.0) == ce);
  const double r = rcm(h, x, a, m, g);
  CHECK(r > 0.0);
  CHECK(total_loss(h, x, a, m, y, g, 0.5) == doctest::Approx(ce + 0.5 * r).epsilon(1e-14));
  CHECK_THROWS_AS(total_loss(h, x, a, m, y, g, -1.0), ValidationError);
}

TEST_CASE("predict: zero weights, shape errors, repeatability") {
  std::mt19937_64 rng(6);
  Predictor h = make_predictor(2, 3, 16, false, rng);
  for (auto& l : h.net.layers) {
    l.weight.fill(0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
  std::normal_distribution<double> nd;
  Matrix x(10, 2), m(10, 3);
  for (double& v : x.values()) v = nd(rng);
  for (double& v : m.values()) v = nd(rng);
  for (double p : predict(h, x, m)) CHECK(p == 0.5);
  for (int label : predict_labels(h, x, m)) CHECK(label == 1);

  Predictor g = make_predictor(2, 3, 16, true, rng);
  CHECK(predict(g, x, m) == predict(g, x, m));
  CHECK_THROWS_AS(predict(g, Matrix(10, 3), m), ShapeError);
  CHECK_THROWS_AS(predict(g, x, Matrix(9, 3)), ShapeError);
}

TEST_CASE("train_predictor is deterministic and the cache does not change results") {
  const auto f = synthetic_fixture(2, 1500);
  auto cfg = quick_config(1.0, 3);
  cfg.epochs = 3;
  const auto b1 = train_predictor(f.train, f.gan, cfg);
  const auto b2 = train_predictor(f.train, f.gan, cfg);
  cfg.cache_counterfactuals = !cfg.cache_counterfactuals;
  const auto b3 = train_predictor(f.train, f.gan, cfg);
  for (std::size_t li = 0; li < b1.predictor.net.layers.size(); ++li) {
    CHECK(b1.predictor.net.layers[li].weight == b2.predictor.net.layers[li].weight);
    CHECK(b1.predictor.net.layers[li].weight == b3.predictor.net.layers[li].weight);
    CHECK(b1.predictor.net.layers[li].bias == b3.predictor.net.layers[li].bias);
  }
  REQUIRE(b1.loss_history.size() == 3);
  CHECK(b1.loss_history[2].cross_entropy == b3.loss_history[2].cross_entropy);
  CHECK(b1.gan_ref == f.gan.fingerprint());
  CHECK(b1.lipschitz_cert > 0.0);
}

TEST_CASE("train_predictor rejects mismatched schemas and reports divergence") {
  auto f = synthetic_fixture(3, 500);
  auto cfg = quick_config(0.5, 1);
  cfg.epochs = 2;
  gan::GanBundle other = f.gan;
  other.schema["mediator_cols"] = {"gpa"};
  CHECK_THROWS_AS(train_predictor(f.train, other, cfg), ValidationError);

  gan::GanBundle broken = f.gan;
  broken.generator.net.layers[0].bias[1] = std::nan("");
  try {
    train_predictor(f.train, broken, cfg);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
  }
}

TEST_CASE("lambda = 0 trains a plain classifier that increases in m") {
  const auto f = synthetic_fixture(4, 4000);
  const auto b = train_predictor(f.train, f.gan, quick_config(0.0, 4));
  REQUIRE(b.loss_history.size() == 30);
  CHECK(b.loss_history.back().cross_entropy < b.loss_history.front().cross_entropy);
  CHECK(b.loss_history.back().rcm > 0.0);  // still reported
  // beta6 > 0: probe on a grid of m for a few fixed x.
  for (double xv : {-1.0, 0.0, 1.0}) {
    Matrix x(21, 1, xv), m(21, 1);
    for (std::size_t i = 0; i < 21; ++i) m(i, 0) = -2.0 + 0.2 * static_cast<double>(i);
    const auto p = predict(b.predictor, x, m);
    CHECK(p.back() > p.front() + 0.1);
    std::size_t increasing = 0;
    for (std::size_t i = 1; i < p.size(); ++i) increasing += p[i] >= p[i - 1] ? 1 : 0;
    CHECK(increasing >= 18);
  }
}

TEST_CASE("large lambda drives the counterfactual gap to zero") {
  const auto f = synthetic_fixture(5, 4000);
  const auto big = train_predictor(f.train, f.gan, quick_config(1e3, 5));
  CHECK(rcm(big.predictor, f.test.x, f.test.a, f.test.m, f.gan.generator) < 1e-3);

  const auto two = train_predictor(f.train, f.gan, quick_config(2.0, 5));
  CHECK(mean_abs_cf_gap(two.predictor, f.test) <= 0.05);
}

TEST_CASE("bound audit holds with the certified constant") {
  const auto f = synthetic_fixture(6, 4000);
  for (bool sn : {false, true}) {
    for (double lambda : {0.0, 1.0}) {
      auto cfg = quick_config(lambda, 6);
      cfg.spectral_norm = sn;
      const auto b = train_predictor(f.train, f.gan, cfg);
      const double c = b.lipschitz_cert;
      REQUIRE(c > 0.0);
      // A perturbed generator, so the reconstruction term is not zero.
      gan::Generator g = f.gan.generator;
      g.net.layers[0].weight(1, 0) = 0.3;
      g.net.layers[0].weight(0, 0) = -0.2;
      const Matrix m_hat = gan::generate_counterfactual(g, f.test);
      double err = 0.0, cf = 0.0;
      const auto p = predict(b.predictor, f.test.x, f.test.m);
      const auto q = predict(b.predictor, f.test.x, *f.test.m_cf);
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = (*f.test.m_cf)(i, 0) - m_hat(i, 0);
        err += d * d;
        cf += (p[i] - q[i]) * (p[i] - q[i]);
      }
      err /= static_cast<double>(p.size());
      cf /= static_cast<double>(p.size());
      const double r = rcm(b.predictor, f.test.x, f.test.m, m_hat);
      CHECK(cf <= 2.0 * c * c * err + 2.0 * r);

      // The certificate really bounds the slope in m.
      Matrix x(1, 1, 0.3), m0(1, 1, -0.5), m1(1, 1, 0.5);
      const double slope = std::abs(predict(b.predictor, x, m1)[0] - predict(b.predictor, x, m0)[0]);
      CHECK(slope <= c * 1.0 + 1e-12);
    }
  }
}

TEST_CASE("checkpoint round trip and CSV prediction") {
  const auto f = synthetic_fixture(7, 800);
  auto cfg = quick_config(0.5, 7);
  cfg.epochs = 2;
  cfg.spectral_norm = true;
  const auto b = train_predictor(f.train, f.gan, cfg);
  const auto dir = std::filesystem::temp_directory_path() / "gcfn_test_predictor";
  std::filesystem::create_directories(dir);
  b.save(dir / "pred.json");
  const auto back = PredictorBundle::load(dir / "pred.json");
  CHECK(back.gan_ref == b.gan_ref);
  CHECK(back.lipschitz_cert == b.lipschitz_cert);
  CHECK(back.predictor.spectral_norm);
  CHECK(back.loss_history.size() == 2);
  CHECK(predict(back.predictor, f.test.x, f.test.m) == predict(b.predictor, f.test.x, f.test.m));
  CHECK_THROWS_AS(PredictorBundle::load(dir / "missing.json"), std::exception);

  // Raw-scale rows; two copies that differ only in A give the same p_hat.
  const Matrix raw_x = f.test.raw_x();
  const Matrix raw_m = f.test.raw_m();
  {
    std::ofstream out(dir / "in.csv");
    out << "x,a,m\n";
    for (std::size_t i = 0; i < 5; ++i) {
      for (int a : {0, 1}) out << data::format_double(raw_x(i, 0)) << ',' << a << ',' << data::format_double(raw_m(i, 0)) << '\n';
    }
    out << "1.0,0,?\n";
  }
  CHECK(predict_csv(back, dir / "in.csv", dir / "out.csv") == 10);
  const auto table = data::read_csv(dir / "out.csv");
  REQUIRE(table.header.back() == "p_hat");
  const auto expected = predict(b.predictor, f.test.x, f.test.m);
  for (std::size_t i = 0; i < 5; ++i) {
    double p0 = 0.0, p1 = 0.0;
    REQUIRE(data::parse_double(table.rows[2 * i].back(), p0));
    REQUIRE(data::parse_double(table.rows[2 * i + 1].back(), p1));
    CHECK(p0 == p1);
    CHECK(p0 == doctest::Approx(expected[i]).epsilon(1e-9));
  }
  std::filesystem::remove_all(dir);
}

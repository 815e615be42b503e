#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "gcfn/cf_gan/cf_gan.hpp"
#include "gcfn/data/simulate.hpp"
#include "gcfn/errors.hpp"

using namespace gcfn;
using namespace gcfn::gan;
using gcfn::nn::Activation;
using gcfn::nn::Mode;

namespace {

// Single linear layer generator: output = input · Wᵀ + b.
Generator linear_generator(std::size_t xw, std::size_t mw, Matrix w, std::vector<double> b) {
  Generator g;
  g.x_width = xw;
  g.m_width = mw;
  data::ColumnBlock blk;
  blk.name = "m";
  blk.width = mw;
  g.mediator_blocks = {blk};
  nn::DenseLayer l;
  l.weight = std::move(w);
  l.bias = std::move(b);
  l.activation = Activation::kIdentity;
  g.net.layers.push_back(std::move(l));
  g.net.batch_norms.emplace_back(std::nullopt);
  return g;
}

// logits = c · (g̃0, g̃1) for one-dimensional mediators and x width 1.
Discriminator slot_scoring_discriminator(double c) {
  Discriminator d;
  d.x_width = 1;
  d.m_width = 1;
  nn::DenseLayer l;
  l.weight = Matrix(2, 3, {0.0, c, 0.0, 0.0, 0.0, c});
  l.bias = {0.0, 0.0};
  l.activation = Activation::kIdentity;
  d.net.layers.push_back(std::move(l));
  d.net.batch_norms.emplace_back(std::nullopt);
  return d;
}

data::Dataset small_synthetic(std::uint64_t seed, std::size_t n) {
  auto cfg = data::ScmConfig::defaults(data::ScmKind::kSyntheticLinear, seed);
  cfg.n_samples = n;
  return data::split(data::simulate(cfg), 0.2, seed).train;
}

}  // namespace

TEST_CASE("zero final layer: both outputs equal the final bias") {
  std::mt19937_64 rng(1);
  data::ColumnBlock blk{"m", data::BlockKind::kContinuous, 0, 2, {}};
  Generator g = make_generator(3, {blk}, 16, rng);
  g.net.layers.back().weight.fill(0.0);
  g.net.layers.back().bias = {0.1, -0.2, 0.3, 0.4};
  std::normal_distribution<double> nd;
  Matrix x(7, 3), m(7, 2);
  for (double& v : x.values()) v = nd(rng);
  for (double& v : m.values()) v = nd(rng);
  const std::vector<int> a = {0, 1, 1, 0, 1, 0, 0};
  for (Mode mode : {Mode::kEval, Mode::kTrain}) {
    const auto out = generate(g, x, a, m, mode);
    for (std::size_t r = 0; r < 7; ++r) {
      CHECK(out.m0(r, 0) == 0.1);
      CHECK(out.m0(r, 1) == -0.2);
      CHECK(out.m1(r, 0) == 0.3);
      CHECK(out.m1(r, 1) == 0.4);
    }
  }
}

TEST_CASE("generator shape and domain errors") {
  std::mt19937_64 rng(2);
  data::ColumnBlock blk{"m", data::BlockKind::kContinuous, 0, 1, {}};
  Generator g = make_generator(1, {blk}, 8, rng);
  CHECK(g.net.output_dim() == 2);
  const Matrix x(3, 1), m(3, 1);
  CHECK_THROWS_AS(generate(g, Matrix(3, 2), std::vector<int>{0, 1, 0}, m), ShapeError);
  CHECK_THROWS_AS(generate(g, x, std::vector<int>{0, 1}, m), ShapeError);
  CHECK_THROWS_AS(generate(g, x, std::vector<int>{0, 2, 0}, m), ValidationError);
}

TEST_CASE("combine_tilde replaces the factual slot with the observed mediator") {
  const Matrix m(2, 1, {5.0, 6.0});
  const MediatorPair gen{Matrix(2, 1, {0.1, 0.2}), Matrix(2, 1, {1.1, 1.2})};
  const std::vector<int> a = {0, 1};
  const auto t = combine_tilde(m, a, gen);
  CHECK(t.m0(0, 0) == 5.0);  // a=0 -> (m, m̂1)
  CHECK(t.m1(0, 0) == 1.1);
  CHECK(t.m0(1, 0) == 0.2);  // a=1 -> (m̂0, m)
  CHECK(t.m1(1, 0) == 6.0);
  CHECK(t.select(a) == m);
  CHECK(t.select_flipped(a) == gen.select_flipped(a));

  // Factual slot already equal to m: output equals the generator output.
  MediatorPair same = gen;
  same.m0(0, 0) = 5.0;
  same.m1(1, 0) = 6.0;
  const auto t2 = combine_tilde(m, a, same);
  CHECK(t2.m0 == same.m0);
  CHECK(t2.m1 == same.m1);
}

TEST_CASE("combine_tilde factual slot is bit-equal on random data") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  std::bernoulli_distribution bd(0.4);
  Matrix m(200, 3);
  for (double& v : m.values()) v = nd(rng) * 1e3;
  MediatorPair gen{Matrix(200, 3), Matrix(200, 3)};
  for (double& v : gen.m0.values()) v = nd(rng);
  for (double& v : gen.m1.values()) v = nd(rng);
  std::vector<int> a(200);
  for (int& v : a) v = bd(rng) ? 1 : 0;
  CHECK(combine_tilde(m, a, gen).select(a) == m);
}

TEST_CASE("reconstruction loss examples") {
  // Copy generator: both slots reproduce m.
  const Generator copy = linear_generator(1, 1, Matrix(2, 3, {0, 0, 1, 0, 0, 1}), {0.0, 0.0});
  const Matrix x(4, 1, {0.3, -1.0, 2.0, 0.0});
  const Matrix m(4, 1, {1.0, -2.0, 0.5, 3.0});
  const std::vector<int> a = {0, 1, 0, 1};
  CHECK(reconstruction_loss(copy, x, a, m) == 0.0);

  // Single row, m = 1, generated factual 0.5.
  const Generator half = linear_generator(1, 1, Matrix(2, 3), {0.5, 0.5});
  CHECK(reconstruction_loss(half, Matrix(1, 1), std::vector<int>{1}, Matrix(1, 1, 1.0)) == 0.25);

  // Constant-zero generator on standardized mediators: loss = mean ||m||² over the batch.
  auto cfg = data::ScmConfig::defaults(data::ScmKind::kSemiSin, 4);
  cfg.n_samples = 4000;
  const auto train = data::split(data::simulate(cfg), 0.2, 4).train;
  const Generator zero = linear_generator(2, 2, Matrix(4, 5), {0, 0, 0, 0});
  double expect = 0.0;
  for (double v : train.m.values()) expect += v * v;
  expect /= static_cast<double>(train.rows());
  const double got = reconstruction_loss(zero, train.x, train.a, train.m);
  CHECK(got == doctest::Approx(expect).epsilon(1e-12));
  CHECK(got == doctest::Approx(2.0).epsilon(1e-9));  // unit variance per standardized column
  CHECK_THROWS_AS(reconstruction_loss(zero, Matrix(0, 2), std::vector<int>{}, Matrix(0, 2)), ValidationError);
}

TEST_CASE("adversarial loss examples") {
  const Matrix x(3, 1);
  const std::vector<int> a = {0, 1, 1};
  // Factual slot +1, counterfactual slot -1.
  MediatorPair tilde{Matrix(3, 1, {1.0, -1.0, -1.0}), Matrix(3, 1, {-1.0, 1.0, 1.0})};

  const Discriminator flat = slot_scoring_discriminator(0.0);
  CHECK(adversarial_loss(flat, x, a, tilde) == doctest::Approx(std::log(0.5)).epsilon(1e-15));
  const Matrix p = discriminator_probs(flat, x, tilde);
  CHECK(p(0, 0) + p(0, 1) == 1.0);

  const Discriminator sharp = slot_scoring_discriminator(5.0);  // logit gap 10
  const double l = adversarial_loss(sharp, x, a, tilde);
  CHECK(l < 0.0);
  CHECK(l > -1e-4);
  CHECK(l == doctest::Approx(-std::log1p(std::exp(-10.0))).epsilon(1e-9));

  // Saturated probability leaves (0, 1).
  CHECK_THROWS_AS(adversarial_loss(slot_scoring_discriminator(50.0), x, a, tilde), NumericError);
}

TEST_CASE("discriminator facing an oblivious generator settles near indifference") {
  // M depends on X only; the counterfactual slot holds a fresh draw from the same
  // conditional, so the two slots are exchangeable and log D_a -> -log 2.
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  std::bernoulli_distribution bd(0.5);
  auto draw = [&](std::size_t n, Matrix& x, std::vector<int>& a, MediatorPair& tilde) {
    x = Matrix(n, 1);
    a.assign(n, 0);
    Matrix m(n, 1);
    MediatorPair gen{Matrix(n, 1), Matrix(n, 1)};
    for (std::size_t i = 0; i < n; ++i) {
      x(i, 0) = nd(rng);
      a[i] = bd(rng) ? 1 : 0;
      m(i, 0) = x(i, 0) + 0.5 * nd(rng);
      gen.m0(i, 0) = x(i, 0) + 0.5 * nd(rng);
      gen.m1(i, 0) = x(i, 0) + 0.5 * nd(rng);
    }
    tilde = combine_tilde(m, a, gen);
  };
  Discriminator d = make_discriminator(1, 1, 32, rng);
  nn::AdamState opt(0.005);
  for (int step = 0; step < 400; ++step) {
    Matrix x;
    std::vector<int> a;
    MediatorPair t;
    draw(256, x, a, t);
    discriminator_step(d, opt, x, a, t);
  }
  Matrix x;
  std::vector<int> a;
  MediatorPair t;
  draw(20000, x, a, t);
  const double l = adversarial_loss(d, x, a, t);
  CHECK(l == doctest::Approx(-std::log(2.0)).epsilon(0.02));
  const Matrix p = discriminator_probs(d, x, t);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < p.rows(); ++i) hits += p(i, static_cast<std::size_t>(a[i])) > 0.5;
  const double acc = static_cast<double>(hits) / 20000.0;
  CHECK(acc > 0.45);
  CHECK(acc < 0.55);
}

TEST_CASE("generator objective gradient matches finite differences") {
  // Mixed layout: one continuous mediator and one 3-category block.
  std::mt19937_64 rng(6);
  std::vector<data::ColumnBlock> blocks = {{"c", data::BlockKind::kContinuous, 0, 1, {}},
                                           {"k", data::BlockKind::kCategorical, 1, 3, {"p", "q", "r"}}};
  Generator g = make_generator(2, blocks, 6, rng);
  Discriminator d = make_discriminator(2, 4, 5, rng);
  std::normal_distribution<double> nd;
  const std::size_t n = 9;
  Matrix x(n, 2), m(n, 4);
  std::vector<int> a(n);
  for (double& v : x.values()) v = nd(rng);
  for (std::size_t i = 0; i < n; ++i) {
    m(i, 0) = nd(rng);
    m(i, 1 + i % 3) = 1.0;
    a[i] = static_cast<int>(i % 2);
  }
  const double alpha = 0.7;
  const auto obj = generator_objective(g, d, x, a, m, alpha);
  auto value = [&](const Generator& gg) {
    const auto o = generator_objective(gg, d, x, a, m, alpha);
    return o.adversarial + alpha * o.reconstruction;
  };
  const auto grads = nn::gradient_spans(obj.grads);
  Generator probe = g;
  auto params = nn::parameter_spans(probe.net);
  const double h = 1e-6;
  std::size_t checked = 0, kinked = 0;
  for (std::size_t s = 0; s < params.size(); ++s) {
    for (std::size_t k = 0; k < params[s].size(); ++k) {
      const double orig = params[s][k];
      params[s][k] = orig + h;
      const double up = value(probe);
      params[s][k] = orig - h;
      const double dn = value(probe);
      params[s][k] = orig;
      const double fd = (up - dn) / (2 * h);
      const double an = grads[s][k];
      const double err = std::abs(fd - an);
      if (err > 1e-6 + 1e-4 * std::abs(fd)) {
        ++kinked;  // leaky-relu kink straddled by the probe
      }
      ++checked;
    }
  }
  CHECK(checked > 50);
  // A handful of probes may straddle a kink; anything systematic would hit far more.
  CHECK(kinked * 100 <= checked);
}

TEST_CASE("train_gan: determinism and loss history length") {
  const auto train = small_synthetic(7, 600);
  GanTrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 64;
  cfg.seed = 3;
  const auto b1 = train_gan(train, cfg);
  const auto b2 = train_gan(train, cfg);
  REQUIRE(b1.loss_history.size() == 5);
  for (std::size_t e = 0; e < 5; ++e) {
    CHECK(b1.loss_history[e].adversarial == b2.loss_history[e].adversarial);
    CHECK(b1.loss_history[e].reconstruction == b2.loss_history[e].reconstruction);
  }
  CHECK(b1.generator.net.layers[0].weight == b2.generator.net.layers[0].weight);
  cfg.seed = 4;
  CHECK_FALSE(train_gan(train, cfg).loss_history[4].adversarial == b1.loss_history[4].adversarial);

  std::size_t calls = 0;
  cfg.epochs = 3;
  train_gan(train, cfg, [&](std::size_t e, const GanBundle& b) {
    CHECK(b.loss_history.size() == e + 1);
    ++calls;
  });
  CHECK(calls == 3);
}

TEST_CASE("train_gan: large alpha makes the generated factual reproduce the observed one") {
  const auto train = small_synthetic(8, 2500);
  GanTrainConfig cfg;
  cfg.alpha = 1000.0;
  cfg.epochs = 40;
  cfg.seed = 8;
  const auto b = train_gan(train, cfg);
  Matrix fact = generate_factual(b.generator, train);
  train.standardization.invert_m(fact);
  CHECK(mean_row_sq_dist(train.raw_m(), fact) <= 1e-2);
}

TEST_CASE("train_gan: divergence and config errors") {
  auto train = small_synthetic(9, 200);
  for (double& v : train.m.values()) v *= 1e200;
  GanTrainConfig cfg;
  cfg.epochs = 2;
  try {
    train_gan(train, cfg);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
  }
  cfg.batch_size = 1;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = GanTrainConfig{};
  cfg.alpha = -1;
  CHECK_THROWS_AS(train_gan(small_synthetic(9, 50), cfg), ValidationError);
  const auto back = gan_config_from_json(gan_config_to_json(GanTrainConfig{}));
  CHECK(back.epochs == 300);
  CHECK(back.batch_size == 256);
  CHECK(back.lr == 0.0005);
  CHECK(back.k_alt == 1);
  CHECK(back.alpha == 1.0);
}

TEST_CASE("gan bundle checkpoint round trip") {
  const auto train = small_synthetic(10, 300);
  GanTrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 32;
  const auto b = train_gan(train, cfg);
  const auto dir = std::filesystem::temp_directory_path() / "gcfn_test_gan";
  std::filesystem::remove_all(dir);
  b.save(dir / "gan.json");
  const auto back = GanBundle::load(dir / "gan.json");
  CHECK(generate_counterfactual(back.generator, train) == generate_counterfactual(b.generator, train));
  CHECK(back.loss_history.size() == 2);
  CHECK(back.loss_history[1].adversarial == b.loss_history[1].adversarial);
  CHECK(back.schema == b.schema);
  CHECK(back.config.seed == b.config.seed);
}

#include "gcfn/data/simulate.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "gcfn/errors.hpp"

namespace gcfn::data {

using nlohmann::json;

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

const std::vector<std::string> kSyntheticNoise = {"u_x", "u_a", "v_a", "u_m", "u_y", "v_y"};
const std::vector<std::string> kSemiNoise = {"v_x1", "v_x2", "v_a", "u_m1", "u_m2", "u_y", "v_y"};

RoleSchema synthetic_schema() {
  RoleSchema s;
  s.covariate_cols = {"x"};
  s.sensitive_col = "a";
  s.mediator_cols = {"m"};
  s.target_col = "y";
  return s;
}

RoleSchema semi_schema() {
  RoleSchema s;
  s.covariate_cols = {"resident", "race"};
  s.sensitive_col = "gender";
  s.mediator_cols = {"gpa", "lsat"};
  s.target_col = "admitted";
  return s;
}

Dataset empty_dataset(RoleSchema schema, std::size_t n, const std::vector<std::string>& noise_names) {
  Dataset ds;
  ds.schema = std::move(schema);
  ds.covariate_blocks = encode_layout(ds.schema, ds.schema.covariate_cols);
  ds.mediator_blocks = encode_layout(ds.schema, ds.schema.mediator_cols);
  ds.x = Matrix(n, layout_width(ds.covariate_blocks));
  ds.m = Matrix(n, layout_width(ds.mediator_blocks));
  ds.m_cf = Matrix(n, ds.m.cols());
  ds.a.assign(n, 0);
  ds.y.assign(n, 0);
  ds.noise = NoiseRecord{noise_names, Matrix(n, noise_names.size())};
  ds.standardization = Standardization::identity(ds.x.cols(), ds.m.cols());
  ds.row_ids.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.row_ids[i] = i;
  return ds;
}

}  // namespace

std::string scm_kind_name(ScmKind k) {
  switch (k) {
    case ScmKind::kSyntheticLinear:
      return "synthetic-linear";
    case ScmKind::kSemiSigmoid:
      return "semi-sigmoid";
    case ScmKind::kSemiSin:
      return "semi-sin";
  }
  return "synthetic-linear";
}

ScmKind scm_kind_from_name(const std::string& s) {
  if (s == "synthetic-linear" || s == "synthetic") return ScmKind::kSyntheticLinear;
  if (s == "semi-sigmoid") return ScmKind::kSemiSigmoid;
  if (s == "semi-sin") return ScmKind::kSemiSin;
  throw ValidationError("unknown SCM kind '" + s + "'");
}

void ScmConfig::validate() const {
  if (n_samples == 0) throw ValidationError("scm: n_samples must be > 0");
  if (!(noise.sd_x > 0 && noise.sd_a > 0 && noise.sd_m > 0 && noise.sd_y > 0)) {
    throw ValidationError("scm: noise standard deviations must be > 0");
  }
  for (double p : {p_resident, p_race, p_gender}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("scm: Bernoulli probabilities must lie in [0, 1]");
  }
}

ScmConfig ScmConfig::defaults(ScmKind kind, std::uint64_t seed) {
  ScmConfig c;
  c.kind = kind;
  c.seed = seed;
  c.n_samples = kind == ScmKind::kSyntheticLinear ? 10000 : 101570;
  return c;
}

json scm_to_json(const ScmConfig& c) {
  return json{{"kind", scm_kind_name(c.kind)},
              {"n_samples", c.n_samples},
              {"seed", c.seed},
              {"coefficients",
               {{"beta1", c.coef.beta1},
                {"beta2", c.coef.beta2},
                {"beta3", c.coef.beta3},
                {"beta5", c.coef.beta5},
                {"beta6", c.coef.beta6},
                {"w_x1", c.coef.w_x1},
                {"w_x2", c.coef.w_x2},
                {"w_a", c.coef.w_a},
                {"w_m1", c.coef.w_m1},
                {"w_m2", c.coef.w_m2}}},
              {"noise_sds", {{"x", c.noise.sd_x}, {"a", c.noise.sd_a}, {"m", c.noise.sd_m}, {"y", c.noise.sd_y}}},
              {"p_resident", c.p_resident},
              {"p_race", c.p_race},
              {"p_gender", c.p_gender}};
}

ScmConfig scm_from_json(const json& j) {
  try {
    ScmConfig c = ScmConfig::defaults(scm_kind_from_name(j.value("kind", std::string("synthetic-linear"))),
                                      j.value("seed", std::uint64_t{0}));
    c.n_samples = j.value("n_samples", c.n_samples);
    if (j.contains("coefficients")) {
      const auto& k = j.at("coefficients");
      c.coef.beta1 = k.value("beta1", c.coef.beta1);
      c.coef.beta2 = k.value("beta2", c.coef.beta2);
      c.coef.beta3 = k.value("beta3", c.coef.beta3);
      c.coef.beta5 = k.value("beta5", c.coef.beta5);
      c.coef.beta6 = k.value("beta6", c.coef.beta6);
      c.coef.w_x1 = k.value("w_x1", c.coef.w_x1);
      c.coef.w_x2 = k.value("w_x2", c.coef.w_x2);
      c.coef.w_a = k.value("w_a", c.coef.w_a);
      c.coef.w_m1 = k.value("w_m1", c.coef.w_m1);
      c.coef.w_m2 = k.value("w_m2", c.coef.w_m2);
    }
    if (j.contains("noise_sds")) {
      const auto& k = j.at("noise_sds");
      c.noise.sd_x = k.value("x", c.noise.sd_x);
      c.noise.sd_a = k.value("a", c.noise.sd_a);
      c.noise.sd_m = k.value("m", c.noise.sd_m);
      c.noise.sd_y = k.value("y", c.noise.sd_y);
    }
    c.p_resident = j.value("p_resident", c.p_resident);
    c.p_race = j.value("p_race", c.p_race);
    c.p_gender = j.value("p_gender", c.p_gender);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("scm config: ") + e.what());
  }
}

std::vector<double> mediator_equation(const ScmConfig& cfg, std::span<const double> x, int a,
                                      const NoiseRecord& noise, std::size_t row) {
  const auto& k = cfg.coef;
  const double av = static_cast<double>(a);
  switch (cfg.kind) {
    case ScmKind::kSyntheticLinear:
      return {k.beta2 * x[0] + k.beta3 * av + noise.at(row, "u_m")};
    case ScmKind::kSemiSigmoid: {
      const double base = k.w_a * av + k.w_x1 * x[0] + k.w_x2 * x[1];
      return {k.w_m1 * sigmoid(base + noise.at(row, "u_m1")),
              k.w_m2 + k.w_m1 * sigmoid(base + noise.at(row, "u_m2"))};
    }
    case ScmKind::kSemiSin: {
      const double base = k.w_x1 * x[0] + k.w_x2 * x[1];
      return {k.w_a * av - std::sin(std::numbers::pi * (base + noise.at(row, "u_m1"))),
              k.w_a * av - std::sin(std::numbers::pi * (base + noise.at(row, "u_m2")))};
    }
  }
  return {};
}

Dataset simulate_synthetic(const ScmConfig& cfg) {
  cfg.validate();
  if (cfg.kind != ScmKind::kSyntheticLinear) throw ValidationError("simulate_synthetic: kind must be synthetic-linear");
  const std::size_t n = cfg.n_samples;
  Dataset ds = empty_dataset(synthetic_schema(), n, kSyntheticNoise);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const auto& k = cfg.coef;
  const auto& sd = cfg.noise;
  auto& nz = ds.noise->values;
  for (std::size_t i = 0; i < n; ++i) {
    const double u_x = sd.sd_x * normal(rng);
    const double u_a = sd.sd_a * normal(rng);
    const double v_a = unif(rng);
    const double u_m = sd.sd_m * normal(rng);
    const double u_y = sd.sd_y * normal(rng);
    const double v_y = unif(rng);
    nz(i, 0) = u_x;
    nz(i, 1) = u_a;
    nz(i, 2) = v_a;
    nz(i, 3) = u_m;
    nz(i, 4) = u_y;
    nz(i, 5) = v_y;

    const double x = u_x;
    const int a = v_a < sigmoid(k.beta1 * x + u_a) ? 1 : 0;
    const double xs[1] = {x};
    const double m = mediator_equation(cfg, xs, a, *ds.noise, i)[0];
    const double m_cf = mediator_equation(cfg, xs, 1 - a, *ds.noise, i)[0];
    const int y = v_y < sigmoid(k.beta5 * x + k.beta6 * m + u_y) ? 1 : 0;
    ds.x(i, 0) = x;
    ds.a[i] = a;
    ds.m(i, 0) = m;
    (*ds.m_cf)(i, 0) = m_cf;
    ds.y[i] = y;
  }
  ds.provenance["scm"] = scm_to_json(cfg);
  return ds;
}

Dataset simulate_semi(const ScmConfig& cfg) {
  cfg.validate();
  if (cfg.kind != ScmKind::kSemiSigmoid && cfg.kind != ScmKind::kSemiSin) {
    throw ValidationError("simulate_semi: kind must be semi-sigmoid or semi-sin, got " + scm_kind_name(cfg.kind));
  }
  const std::size_t n = cfg.n_samples;
  Dataset ds = empty_dataset(semi_schema(), n, kSemiNoise);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const auto& k = cfg.coef;
  const auto& sd = cfg.noise;
  auto& nz = ds.noise->values;
  for (std::size_t i = 0; i < n; ++i) {
    const double v_x1 = unif(rng);
    const double v_x2 = unif(rng);
    const double v_a = unif(rng);
    const double u_m1 = sd.sd_m * normal(rng);
    const double u_m2 = sd.sd_m * normal(rng);
    const double u_y = sd.sd_y * normal(rng);
    const double v_y = unif(rng);
    const double row_noise[7] = {v_x1, v_x2, v_a, u_m1, u_m2, u_y, v_y};
    for (std::size_t c = 0; c < 7; ++c) nz(i, c) = row_noise[c];

    const double x[2] = {v_x1 < cfg.p_resident ? 1.0 : 0.0, v_x2 < cfg.p_race ? 1.0 : 0.0};
    const int a = v_a < cfg.p_gender ? 1 : 0;
    const auto m = mediator_equation(cfg, x, a, *ds.noise, i);
    const auto m_cf = mediator_equation(cfg, x, 1 - a, *ds.noise, i);
    const double logit = k.w_m1 * m[0] + k.w_m2 * m[1] + k.w_x1 * x[0] + k.w_x2 * x[1] + u_y;
    ds.x(i, 0) = x[0];
    ds.x(i, 1) = x[1];
    ds.a[i] = a;
    ds.m(i, 0) = m[0];
    ds.m(i, 1) = m[1];
    (*ds.m_cf)(i, 0) = m_cf[0];
    (*ds.m_cf)(i, 1) = m_cf[1];
    ds.y[i] = v_y < sigmoid(logit) ? 1 : 0;
  }
  ds.provenance["scm"] = scm_to_json(cfg);
  return ds;
}

Dataset simulate(const ScmConfig& cfg) {
  return cfg.kind == ScmKind::kSyntheticLinear ? simulate_synthetic(cfg) : simulate_semi(cfg);
}

}  // namespace gcfn::data

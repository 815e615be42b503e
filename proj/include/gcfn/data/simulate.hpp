#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

#include "gcfn/data/dataset.hpp"

namespace gcfn::data {

enum class ScmKind { kSyntheticLinear, kSemiSigmoid, kSemiSin };

std::string scm_kind_name(ScmKind k);
ScmKind scm_kind_from_name(const std::string& s);

struct ScmCoefficients {
  // synthetic-linear
  double beta1 = 1.0;  // X -> A
  double beta2 = 1.0;  // X -> M
  double beta3 = 1.0;  // A -> M
  double beta5 = 1.0;  // X -> Y
  double beta6 = 1.0;  // M -> Y
  // semi-synthetic
  double w_x1 = 0.5;
  double w_x2 = 0.5;
  double w_a = 1.0;
  double w_m1 = 2.0;
  double w_m2 = 0.5;
};

struct ScmNoise {
  double sd_x = 1.0;
  double sd_a = 0.1;
  double sd_m = 0.1;
  double sd_y = 0.1;
};

struct ScmConfig {
  ScmKind kind = ScmKind::kSyntheticLinear;
  ScmCoefficients coef;
  ScmNoise noise;
  std::size_t n_samples = 10000;
  std::uint64_t seed = 0;
  // Semi-synthetic confounders and sensitive attribute are Bernoulli draws.
  double p_resident = 0.5;
  double p_race = 0.5;
  double p_gender = 0.5;

  void validate() const;
  /// Full-size defaults for each dataset kind (10,000 or 101,570 rows).
  static ScmConfig defaults(ScmKind kind, std::uint64_t seed = 0);
};

nlohmann::json scm_to_json(const ScmConfig& c);
ScmConfig scm_from_json(const nlohmann::json& j);

/// Structural mediator equation of the SCM evaluated for one row of stored noise and a chosen
/// value of A. Evaluating with the observed A reproduces M; with the flipped A it yields M_cf.
std::vector<double> mediator_equation(const ScmConfig& cfg, std::span<const double> x, int a,
                                      const NoiseRecord& noise, std::size_t row);

Dataset simulate_synthetic(const ScmConfig& cfg);
Dataset simulate_semi(const ScmConfig& cfg);
/// Dispatches on cfg.kind.
Dataset simulate(const ScmConfig& cfg);

}  // namespace gcfn::data

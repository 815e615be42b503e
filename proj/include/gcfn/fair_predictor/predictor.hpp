#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gcfn/cf_gan/cf_gan.hpp"
#include "gcfn/data/dataset.hpp"
#include "gcfn/nn/mlp.hpp"

namespace gcfn::fair {

/// h(X, M) -> P(Y = 1). The sensitive attribute is not an input.
struct Predictor {
  nn::MLPParams net;
  std::size_t x_width = 0;
  std::size_t m_width = 0;
  bool spectral_norm = false;
};

struct PredictorTrainConfig {
  double lambda = 0.5;
  std::size_t epochs = 30;
  std::size_t batch_size = 256;
  double lr = 0.005;
  std::size_t hidden = 64;
  bool spectral_norm = false;
  // Generate counterfactuals for the whole training set once instead of per batch.
  // The generator runs in eval mode, so both paths give identical numbers.
  bool cache_counterfactuals = false;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json predictor_config_to_json(const PredictorTrainConfig& c);
PredictorTrainConfig predictor_config_from_json(const nlohmann::json& j);

struct PredictorEpochLoss {
  double cross_entropy = 0.0;
  double rcm = 0.0;
};

struct PredictorBundle {
  Predictor predictor;
  PredictorTrainConfig config;
  std::string gan_ref;  // GanBundle::fingerprint() of the generator used for R_cm
  std::vector<PredictorEpochLoss> loss_history;
  double lipschitz_cert = 0.0;  // w.r.t. the mediator inputs, standardized scale
  nlohmann::json schema;
  data::Standardization standardization;

  void save(const std::filesystem::path& path) const;
  static PredictorBundle load(const std::filesystem::path& path);
};

Predictor make_predictor(std::size_t x_width, std::size_t m_width, std::size_t hidden, bool spectral_norm,
                         std::mt19937_64& rng);

/// Eval-mode probabilities, one per row. ShapeError on width mismatch.
std::vector<double> predict(const Predictor& h, const Matrix& x, const Matrix& m);
/// Class labels at threshold 0.5.
std::vector<int> predict_labels(const Predictor& h, const Matrix& x, const Matrix& m);

/// mean (h(x, m) - h(x, m_cf))² for a given counterfactual mediator matrix.
double rcm(const Predictor& h, const Matrix& x, const Matrix& m, const Matrix& m_cf);
/// Same with m_cf = generate(x, a, m)_{a'} from a frozen generator. ValidationError when
/// the generator was built for different widths.
double rcm(const Predictor& h, const Matrix& x, std::span<const int> a, const Matrix& m, const gan::Generator& gen);

/// L_ce + lambda * R_cm.
double total_loss(const Predictor& h, const Matrix& x, std::span<const int> a, const Matrix& m,
                  std::span<const int> y, const gan::Generator& gen, double lambda);

/// Certified Lipschitz constant of h with respect to its mediator inputs: spectral norm
/// of the mediator columns of the first effective weight times the norms of later layers
/// and the activation constants (30 power iterations each).
double mediator_lipschitz(const Predictor& h, int n_power_iters = 30);

using PredictorEpochCallback = std::function<void(std::size_t, const PredictorBundle&)>;

/// Minibatch descent on L_ce + lambda * R_cm with the generator frozen.
/// TrainingError on non-finite loss; ValidationError when the GAN schema differs.
PredictorBundle train_predictor(const data::Dataset& train, const gan::GanBundle& gan,
                                const PredictorTrainConfig& cfg, const PredictorEpochCallback& on_epoch = {});

/// Reads a raw CSV under the bundle's schema (A and Y optional), applies the training
/// standardization and writes the kept rows with an extra `p_hat` column. Returns rows written.
std::size_t predict_csv(const PredictorBundle& bundle, const std::filesystem::path& in_csv,
                        const std::filesystem::path& out_csv);

}  // namespace gcfn::fair

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "json.hpp"

#include "gcfn/data/dataset.hpp"
#include "gcfn/nn/adam.hpp"
#include "gcfn/nn/mlp.hpp"

namespace gcfn::gan {

/// G(X, A, M) -> (M̂0, M̂1). Input layout: covariates ++ sensitive bit ++ mediators.
/// The output is linear per continuous mediator column and a softmax over each
/// categorical one-hot block, separately for both potential mediators.
struct Generator {
  nn::MLPParams net;
  std::size_t x_width = 0;
  std::size_t m_width = 0;
  std::vector<data::ColumnBlock> mediator_blocks;
};

/// D(X, G̃0, G̃1) -> (D0, D1), two logits followed by a softmax.
struct Discriminator {
  nn::MLPParams net;
  std::size_t x_width = 0;
  std::size_t m_width = 0;
};

/// Both potential mediators, one row per sample.
struct MediatorPair {
  Matrix m0;
  Matrix m1;

  /// Per-row slot a[i] (factual when `a` is the observed attribute).
  Matrix select(std::span<const int> a) const;
  /// Per-row slot 1 - a[i].
  Matrix select_flipped(std::span<const int> a) const;
};

struct GanTrainConfig {
  double alpha = 1.0;
  std::size_t epochs = 300;
  std::size_t batch_size = 256;
  double lr = 0.0005;
  std::size_t k_alt = 1;
  std::size_t hidden = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json gan_config_to_json(const GanTrainConfig& c);
GanTrainConfig gan_config_from_json(const nlohmann::json& j);

struct EpochLoss {
  double adversarial = 0.0;     // mean L_adv over the epoch's generator steps
  double reconstruction = 0.0;  // mean L_f over the same steps
};

struct GanBundle {
  Generator generator;
  Discriminator discriminator;
  GanTrainConfig config;
  std::vector<EpochLoss> loss_history;
  nlohmann::json schema;  // role schema of the training data, for compatibility checks

  /// Stable identifier of the trained generator (hash of its parameters).
  std::string fingerprint() const;
  void save(const std::filesystem::path& path) const;
  static GanBundle load(const std::filesystem::path& path);
};

Generator make_generator(std::size_t x_width, const std::vector<data::ColumnBlock>& mediator_blocks,
                         std::size_t hidden, std::mt19937_64& rng);
Discriminator make_discriminator(std::size_t x_width, std::size_t m_width, std::size_t hidden,
                                 std::mt19937_64& rng);

/// Runs G; eval mode unless stated. Throws ShapeError on mismatched inputs.
MediatorPair generate(const Generator& gen, const Matrix& x, std::span<const int> a, const Matrix& m,
                      nn::Mode mode = nn::Mode::kEval);

/// Replaces the generated factual slot with the observed mediator: g̃_a = m, g̃_{a'} = m̂_{a'}.
MediatorPair combine_tilde(const Matrix& m, std::span<const int> a, const MediatorPair& generated);

/// mean ||m - m̂_a||².
double reconstruction_loss(const Generator& gen, const Matrix& x, std::span<const int> a, const Matrix& m);

/// Softmax probabilities (n × 2) of D over the two slots.
Matrix discriminator_probs(const Discriminator& disc, const Matrix& x, const MediatorPair& tilde);

/// mean log D(x, g̃)_a. NumericError when a probability leaves (0, 1).
double adversarial_loss(const Discriminator& disc, const Matrix& x, std::span<const int> a,
                        const MediatorPair& tilde);

/// Fraction of rows on which D puts more than half its mass on the factual slot.
double discriminator_accuracy(const Discriminator& disc, const Generator& gen, const Matrix& x,
                              std::span<const int> a, const Matrix& m);

/// Generated counterfactual m̂_{a'} for every row of a dataset (standardized scale).
Matrix generate_counterfactual(const Generator& gen, const data::Dataset& ds);
/// Generated factual m̂_a for every row of a dataset.
Matrix generate_factual(const Generator& gen, const data::Dataset& ds);

/// One discriminator ascent step on L_adv; returns L_adv before the update.
double discriminator_step(Discriminator& disc, nn::AdamState& opt, const Matrix& x, std::span<const int> a,
                          const MediatorPair& tilde);

struct GeneratorObjective {
  double adversarial = 0.0;
  double reconstruction = 0.0;
  nn::Gradients grads;     // d (L_adv + alpha L_f) / d generator parameters
  nn::ForwardCache cache;  // train-mode generator pass
};

/// L_adv + alpha * L_f and its generator gradient, with G in train mode. Gradient reaches G
/// through the counterfactual slot of D's input and through the generated factual in L_f.
GeneratorObjective generator_objective(const Generator& gen, const Discriminator& disc, const Matrix& x,
                                       std::span<const int> a, const Matrix& m, double alpha);
/// Descent step on generator_objective; also folds batch-norm statistics.
GeneratorObjective generator_step(Generator& gen, nn::AdamState& opt, const Discriminator& disc, const Matrix& x,
                                  std::span<const int> a, const Matrix& m, double alpha);

/// Called after every epoch with the 0-based epoch index and the bundle so far.
using EpochCallback = std::function<void(std::size_t, const GanBundle&)>;

/// Alternating minimax training. Throws TrainingError naming the epoch on divergence.
GanBundle train_gan(const data::Dataset& train, const GanTrainConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace gcfn::gan

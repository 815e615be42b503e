#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "gcfn/nn/matrix.hpp"

namespace gcfn::nn {

enum class Activation { kLeakyRelu, kSigmoid, kIdentity };
enum class Mode { kTrain, kEval };

inline constexpr double kLeakySlope = 0.01;

/// Lipschitz constant of an activation function.
double activation_lipschitz(Activation act);

struct DenseLayer {
  Matrix weight;  // out × in
  std::vector<double> bias;
  Activation activation = Activation::kIdentity;
  bool spectral_norm = false;
  // Right singular vector estimate, persisted across power iterations.
  std::vector<double> power_iter_vector;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
};

struct BatchNormState {
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNormState identity(std::size_t width);
};

/// Feed-forward network: each layer is linear, then optional batch norm, then activation.
struct MLPParams {
  std::vector<DenseLayer> layers;
  std::vector<std::optional<BatchNormState>> batch_norms;  // one slot per layer
  std::size_t hidden_dim = 64;
  // Bumped on every parameter mutation so stale caches can be detected.
  std::uint64_t version = 0;

  std::size_t input_dim() const { return layers.front().in_dim(); }
  std::size_t output_dim() const { return layers.back().out_dim(); }
};

struct MlpSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden = {64};
  std::size_t output_dim = 1;
  Activation hidden_activation = Activation::kLeakyRelu;
  Activation output_activation = Activation::kIdentity;
  bool batch_norm_hidden = false;
  bool spectral_norm = false;
};

/// Glorot-uniform weights, zero biases, random unit power-iteration vectors.
MLPParams make_mlp(const MlpSpec& spec, std::mt19937_64& rng);

struct LayerCache {
  Matrix input;
  Matrix linear;     // x·Wᵀ + b
  Matrix xhat;       // normalized linear output (batch norm only)
  std::vector<double> bn_mean;
  std::vector<double> bn_var;
  Matrix pre_act;    // after batch norm
  Matrix output;
  double sigma = 1.0;          // spectral scale used in this pass
  std::vector<double> sn_u;    // left singular estimate W v / sigma
};

struct ForwardCache {
  const MLPParams* net = nullptr;
  std::uint64_t version = 0;
  Mode mode = Mode::kEval;
  std::vector<LayerCache> layers;
};

struct ForwardResult {
  Matrix output;
  ForwardCache cache;
};

struct LayerGrad {
  Matrix d_weight;
  std::vector<double> d_bias;
  std::vector<double> d_gamma;
  std::vector<double> d_beta;
};

struct Gradients {
  std::vector<LayerGrad> layers;
  Matrix d_input;
};

/// Pure forward pass; running batch-norm statistics are not touched (see commit_batch_norm_stats).
ForwardResult forward(const MLPParams& net, const Matrix& batch, Mode mode);

/// Backpropagates upstream_grad (d loss / d output) through the cached pass.
Gradients backward(const MLPParams& net, const ForwardCache& cache, const Matrix& upstream_grad);

/// Folds the batch statistics of a train-mode pass into the running averages.
void commit_batch_norm_stats(MLPParams& net, const ForwardCache& cache);

/// Effective weight used by forward: W / ||W v|| with the persisted v.
Matrix effective_weight(const DenseLayer& layer);

struct SpectralResult {
  Matrix effective_weight;
  double sigma = 1.0;
};

/// Runs n_power_iters iterations from the persisted vector (layer untouched) and returns
/// the weight divided by the estimated top singular value.
SpectralResult spectral_normalize(const DenseLayer& layer, int n_power_iters);

/// One or more power iterations that update the persisted vector in place.
void power_iterate(DenseLayer& layer, int n_iters);
/// Power iteration on every spectrally normalized layer.
void refresh_spectral_vectors(MLPParams& net, int n_iters);

/// Certified Lipschitz constant: product over layers of the estimated spectral norm of the
/// effective weight (batch norm in eval mode included) times activation constants.
double lipschitz_bound(const MLPParams& net, int n_power_iters = 30);

std::vector<std::span<double>> parameter_spans(MLPParams& net);
std::vector<std::span<const double>> gradient_spans(const Gradients& grads);

}  // namespace gcfn::nn

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gcfn/nn/mlp.hpp"

namespace gcfn::nn {

struct AdamState {
  std::uint64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  explicit AdamState(double learning_rate = 1e-3) : lr(learning_rate) {}
};

/// Bias-corrected Adam update. Moments are lazily shaped on the first call.
void adam_step(AdamState& state, std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads);

/// Adam update on every parameter of net; bumps net.version.
void adam_step(AdamState& state, MLPParams& net, const Gradients& grads);

}  // namespace gcfn::nn

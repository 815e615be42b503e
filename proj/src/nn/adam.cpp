#include "gcfn/nn/adam.hpp"

#include <cmath>

#include "gcfn/errors.hpp"

namespace gcfn::nn {

void adam_step(AdamState& state, std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient count differs");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state shaped for a different parameter set");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != grads[i].size() || state.first_moment[i].size() != params[i].size()) {
      throw ShapeError("adam_step: shape mismatch in parameter block " + std::to_string(i));
    }
    for (double g : grads[i]) {
      if (!std::isfinite(g)) {
        throw NumericError("adam_step: non-finite gradient in parameter block " + std::to_string(i));
      }
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < params[i].size(); ++j) {
      const double g = grads[i][j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      params[i][j] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

void adam_step(AdamState& state, MLPParams& net, const Gradients& grads) {
  const auto params = parameter_spans(net);
  const auto g = gradient_spans(grads);
  adam_step(state, params, g);
  ++net.version;
}

}  // namespace gcfn::nn

#pragma once

#include <span>
#include <vector>

namespace gcfn::nn {

inline constexpr double kProbClamp = 1e-7;

double clamp_prob(double p);

/// Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7].
double cross_entropy(std::span<const double> probs, std::span<const int> labels);

/// d cross_entropy / d probs, consistent with the clamping.
std::vector<double> cross_entropy_grad(std::span<const double> probs, std::span<const int> labels);

}  // namespace gcfn::nn

#include "gcfn/nn/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gcfn/errors.hpp"

namespace gcfn::nn {
namespace {

void validate(std::span<const double> probs, std::span<const int> labels) {
  if (probs.size() != labels.size()) throw ShapeError("cross_entropy: probs/labels length differs");
  if (probs.empty()) throw ValidationError("cross_entropy: empty input");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      throw ValidationError("cross_entropy: label " + std::to_string(labels[i]) + " at index " +
                            std::to_string(i) + " is not in {0,1}");
    }
  }
}

}  // namespace

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

double cross_entropy(std::span<const double> probs, std::span<const int> labels) {
  validate(probs, labels);
  double s = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = clamp_prob(probs[i]);
    s -= labels[i] == 1 ? std::log(p) : std::log(1.0 - p);
  }
  return s / static_cast<double>(probs.size());
}

std::vector<double> cross_entropy_grad(std::span<const double> probs, std::span<const int> labels) {
  validate(probs, labels);
  const double n = static_cast<double>(probs.size());
  std::vector<double> g(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] < kProbClamp || probs[i] > 1.0 - kProbClamp) {
      g[i] = 0.0;  // clamped region is flat
      continue;
    }
    const double p = probs[i];
    g[i] = (labels[i] == 1 ? -1.0 / p : 1.0 / (1.0 - p)) / n;
  }
  return g;
}

}  // namespace gcfn::nn

#include "gcfn/nn/mlp.hpp"

#include <cmath>
#include <string>

#include "gcfn/errors.hpp"

namespace gcfn::nn {
namespace {

double apply_activation(Activation act, double z) {
  switch (act) {
    case Activation::kLeakyRelu:
      return z >= 0.0 ? z : kLeakySlope * z;
    case Activation::kSigmoid:
      if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
      {
        const double e = std::exp(z);
        return e / (1.0 + e);
      }
    case Activation::kIdentity:
      return z;
  }
  return z;
}

// Derivative expressed through the pre-activation z and the output y.
double activation_grad(Activation act, double z, double y) {
  switch (act) {
    case Activation::kLeakyRelu:
      return z >= 0.0 ? 1.0 : kLeakySlope;
    case Activation::kSigmoid:
      return y * (1.0 - y);
    case Activation::kIdentity:
      return 1.0;
  }
  return 1.0;
}

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// W v
std::vector<double> mat_vec(const Matrix& w, std::span<const double> v) {
  std::vector<double> out(w.rows(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < w.cols(); ++c) s += w(r, c) * v[c];
    out[r] = s;
  }
  return out;
}

// Wᵀ u
std::vector<double> mat_t_vec(const Matrix& w, std::span<const double> u) {
  std::vector<double> out(w.cols(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t c = 0; c < w.cols(); ++c) out[c] += w(r, c) * u[r];
  return out;
}

bool normalize_in_place(std::vector<double>& v) {
  const double n = norm2(v);
  if (n == 0.0 || !std::isfinite(n)) return false;
  for (double& x : v) x /= n;
  return true;
}

// sigma = ||W v||, u = W v / sigma. A zero weight yields sigma = 1.
double spectral_scale(const DenseLayer& layer, std::vector<double>* u_out) {
  auto wv = mat_vec(layer.weight, layer.power_iter_vector);
  const double sigma = norm2(wv);
  if (sigma == 0.0) {
    if (u_out) u_out->assign(layer.out_dim(), 0.0);
    return 1.0;
  }
  for (double& x : wv) x /= sigma;
  if (u_out) *u_out = std::move(wv);
  return sigma;
}

void check_finite(const Matrix& m, std::size_t layer_idx, const char* stage) {
  if (!m.all_finite()) {
    throw NumericError("non-finite " + std::string(stage) + " in layer " +
                       std::to_string(layer_idx));
  }
}

}  // namespace

double activation_lipschitz(Activation act) {
  switch (act) {
    case Activation::kLeakyRelu:
      return 1.0;
    case Activation::kSigmoid:
      return 0.25;
    case Activation::kIdentity:
      return 1.0;
  }
  return 1.0;
}

BatchNormState BatchNormState::identity(std::size_t width) {
  BatchNormState bn;
  bn.gamma.assign(width, 1.0);
  bn.beta.assign(width, 0.0);
  bn.running_mean.assign(width, 0.0);
  bn.running_var.assign(width, 1.0);
  return bn;
}

MLPParams make_mlp(const MlpSpec& spec, std::mt19937_64& rng) {
  MLPParams net;
  net.hidden_dim = spec.hidden.empty() ? 0 : spec.hidden.front();
  std::vector<std::size_t> dims;
  dims.push_back(spec.input_dim);
  dims.insert(dims.end(), spec.hidden.begin(), spec.hidden.end());
  dims.push_back(spec.output_dim);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::size_t fan_in = dims[i];
    const std::size_t fan_out = dims[i + 1];
    const bool is_output = i + 2 == dims.size();
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> uni(-limit, limit);
    DenseLayer layer;
    layer.weight = Matrix(fan_out, fan_in);
    for (double& w : layer.weight.values()) w = uni(rng);
    layer.bias.assign(fan_out, 0.0);
    layer.activation = is_output ? spec.output_activation : spec.hidden_activation;
    layer.spectral_norm = spec.spectral_norm;
    layer.power_iter_vector.resize(fan_in);
    for (double& v : layer.power_iter_vector) v = normal(rng);
    if (!normalize_in_place(layer.power_iter_vector)) {
      layer.power_iter_vector.assign(fan_in, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    }
    net.layers.push_back(std::move(layer));
    if (!is_output && spec.batch_norm_hidden) {
      net.batch_norms.emplace_back(BatchNormState::identity(fan_out));
    } else {
      net.batch_norms.emplace_back(std::nullopt);
    }
  }
  return net;
}

Matrix effective_weight(const DenseLayer& layer) {
  if (!layer.spectral_norm) return layer.weight;
  const double sigma = spectral_scale(layer, nullptr);
  Matrix w = layer.weight;
  for (double& x : w.values()) x /= sigma;
  return w;
}

ForwardResult forward(const MLPParams& net, const Matrix& batch, Mode mode) {
  if (net.layers.empty()) throw UsageError("forward: network has no layers");
  if (net.batch_norms.size() != net.layers.size()) {
    throw UsageError("forward: batch_norms must have one slot per layer");
  }
  if (batch.cols() != net.input_dim()) {
    throw ShapeError("forward: batch has " + std::to_string(batch.cols()) +
                     " columns, network expects " + std::to_string(net.input_dim()));
  }
  if (!batch.all_finite()) throw NumericError("forward: non-finite input batch");

  ForwardCache cache;
  cache.net = &net;
  cache.version = net.version;
  cache.mode = mode;
  cache.layers.resize(net.layers.size());

  Matrix current = batch;
  const std::size_t n = batch.rows();
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const DenseLayer& layer = net.layers[li];
    LayerCache& lc = cache.layers[li];
    lc.input = std::move(current);

    Matrix w = layer.weight;
    if (layer.spectral_norm) {
      lc.sigma = spectral_scale(layer, &lc.sn_u);
      for (double& x : w.values()) x /= lc.sigma;
    }
    lc.linear = matmul_bt(lc.input, w);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < layer.out_dim(); ++c) lc.linear(r, c) += layer.bias[c];
    check_finite(lc.linear, li, "linear output");

    const auto& bn = net.batch_norms[li];
    if (bn) {
      const std::size_t width = layer.out_dim();
      lc.xhat = Matrix(n, width);
      lc.pre_act = Matrix(n, width);
      if (mode == Mode::kTrain) {
        lc.bn_mean.assign(width, 0.0);
        lc.bn_var.assign(width, 0.0);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < width; ++c) lc.bn_mean[c] += lc.linear(r, c);
        for (double& m : lc.bn_mean) m /= static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < width; ++c) {
            const double d = lc.linear(r, c) - lc.bn_mean[c];
            lc.bn_var[c] += d * d;
          }
        for (double& v : lc.bn_var) v /= static_cast<double>(n);
      } else {
        lc.bn_mean = bn->running_mean;
        lc.bn_var = bn->running_var;
      }
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < width; ++c) {
          const double xh = (lc.linear(r, c) - lc.bn_mean[c]) / std::sqrt(lc.bn_var[c] + bn->eps);
          lc.xhat(r, c) = xh;
          lc.pre_act(r, c) = bn->gamma[c] * xh + bn->beta[c];
        }
    } else {
      lc.pre_act = lc.linear;
    }

    lc.output = Matrix(n, layer.out_dim());
    auto& out = lc.output.values();
    const auto& pre = lc.pre_act.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply_activation(layer.activation, pre[i]);
    check_finite(lc.output, li, "activation");
    current = lc.output;
  }
  return {std::move(current), std::move(cache)};
}

Gradients backward(const MLPParams& net, const ForwardCache& cache, const Matrix& upstream_grad) {
  if (cache.net != &net || cache.version != net.version ||
      cache.layers.size() != net.layers.size()) {
    throw UsageError("backward: cache does not belong to this network state");
  }
  const Matrix& last_out = cache.layers.back().output;
  require_same_shape(last_out, upstream_grad, "backward upstream gradient");

  Gradients grads;
  grads.layers.resize(net.layers.size());
  Matrix delta = upstream_grad;  // d loss / d layer output
  const std::size_t n = upstream_grad.rows();

  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const DenseLayer& layer = net.layers[li];
    const LayerCache& lc = cache.layers[li];
    LayerGrad& g = grads.layers[li];
    const std::size_t width = layer.out_dim();

    // through the activation
    Matrix d_pre(n, width);
    for (std::size_t i = 0; i < d_pre.size(); ++i) {
      d_pre.values()[i] =
          delta.values()[i] *
          activation_grad(layer.activation, lc.pre_act.values()[i], lc.output.values()[i]);
    }

    // through batch norm
    Matrix d_lin;
    const auto& bn = net.batch_norms[li];
    if (bn) {
      g.d_gamma.assign(width, 0.0);
      g.d_beta.assign(width, 0.0);
      d_lin = Matrix(n, width);
      for (std::size_t c = 0; c < width; ++c) {
        double sum_dxhat = 0.0;
        double sum_dxhat_xhat = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          g.d_gamma[c] += d_pre(r, c) * lc.xhat(r, c);
          g.d_beta[c] += d_pre(r, c);
          const double dxhat = d_pre(r, c) * bn->gamma[c];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * lc.xhat(r, c);
        }
        const double inv_std = 1.0 / std::sqrt(lc.bn_var[c] + bn->eps);
        for (std::size_t r = 0; r < n; ++r) {
          const double dxhat = d_pre(r, c) * bn->gamma[c];
          if (cache.mode == Mode::kTrain) {
            d_lin(r, c) = inv_std / static_cast<double>(n) *
                          (static_cast<double>(n) * dxhat - sum_dxhat - lc.xhat(r, c) * sum_dxhat_xhat);
          } else {
            d_lin(r, c) = dxhat * inv_std;
          }
        }
      }
    } else {
      d_lin = std::move(d_pre);
    }

    // through the linear map x·W_effᵀ + b
    g.d_bias.assign(width, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < width; ++c) g.d_bias[c] += d_lin(r, c);

    const Matrix d_weff = matmul_at(d_lin, lc.input);  // out × in
    if (layer.spectral_norm) {
      // W_eff = W / sigma with sigma = ||W v||, d sigma / d W = u vᵀ.
      const double sigma = lc.sigma;
      Matrix w_eff = layer.weight;
      for (double& x : w_eff.values()) x /= sigma;
      double inner = 0.0;
      for (std::size_t i = 0; i < d_weff.size(); ++i) inner += d_weff.values()[i] * w_eff.values()[i];
      g.d_weight = Matrix(width, layer.in_dim());
      for (std::size_t r = 0; r < width; ++r)
        for (std::size_t c = 0; c < layer.in_dim(); ++c) {
          g.d_weight(r, c) =
              (d_weff(r, c) - inner * lc.sn_u[r] * layer.power_iter_vector[c]) / sigma;
        }
      delta = matmul(d_lin, w_eff);
    } else {
      g.d_weight = d_weff;
      delta = matmul(d_lin, layer.weight);
    }
  }
  grads.d_input = std::move(delta);
  return grads;
}

void commit_batch_norm_stats(MLPParams& net, const ForwardCache& cache) {
  if (cache.net != &net || cache.mode != Mode::kTrain) return;
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    auto& bn = net.batch_norms[li];
    if (!bn) continue;
    const LayerCache& lc = cache.layers[li];
    const double n = static_cast<double>(lc.input.rows());
    const double unbias = n > 1.0 ? n / (n - 1.0) : 1.0;
    for (std::size_t c = 0; c < bn->gamma.size(); ++c) {
      bn->running_mean[c] = (1.0 - bn->momentum) * bn->running_mean[c] + bn->momentum * lc.bn_mean[c];
      bn->running_var[c] =
          (1.0 - bn->momentum) * bn->running_var[c] + bn->momentum * lc.bn_var[c] * unbias;
    }
  }
}

void power_iterate(DenseLayer& layer, int n_iters) {
  for (int it = 0; it < n_iters; ++it) {
    auto u = mat_vec(layer.weight, layer.power_iter_vector);
    if (!normalize_in_place(u)) return;
    auto v = mat_t_vec(layer.weight, u);
    if (!normalize_in_place(v)) return;
    layer.power_iter_vector = std::move(v);
  }
}

void refresh_spectral_vectors(MLPParams& net, int n_iters) {
  for (auto& layer : net.layers) {
    if (layer.spectral_norm) power_iterate(layer, n_iters);
  }
}

SpectralResult spectral_normalize(const DenseLayer& layer, int n_power_iters) {
  if (n_power_iters < 1) throw ValidationError("spectral_normalize: n_power_iters must be >= 1");
  DenseLayer work = layer;
  power_iterate(work, n_power_iters);
  SpectralResult res;
  res.sigma = spectral_scale(work, nullptr);
  res.effective_weight = layer.weight;
  for (double& x : res.effective_weight.values()) x /= res.sigma;
  return res;
}

double lipschitz_bound(const MLPParams& net, int n_power_iters) {
  double bound = 1.0;
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    DenseLayer eff = net.layers[li];
    eff.weight = effective_weight(net.layers[li]);
    eff.spectral_norm = false;
    power_iterate(eff, n_power_iters);
    double layer_norm = norm2(mat_vec(eff.weight, eff.power_iter_vector));
    const auto& bn = net.batch_norms[li];
    if (bn) {
      double max_scale = 0.0;
      for (std::size_t c = 0; c < bn->gamma.size(); ++c) {
        max_scale = std::max(max_scale, std::abs(bn->gamma[c]) / std::sqrt(bn->running_var[c] + bn->eps));
      }
      layer_norm *= max_scale;
    }
    bound *= layer_norm * activation_lipschitz(net.layers[li].activation);
  }
  return bound;
}

std::vector<std::span<double>> parameter_spans(MLPParams& net) {
  std::vector<std::span<double>> out;
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    auto& layer = net.layers[li];
    out.emplace_back(layer.weight.values());
    out.emplace_back(layer.bias);
    if (net.batch_norms.size() > li && net.batch_norms[li]) {
      out.emplace_back(net.batch_norms[li]->gamma);
      out.emplace_back(net.batch_norms[li]->beta);
    }
  }
  return out;
}

std::vector<std::span<const double>> gradient_spans(const Gradients& grads) {
  std::vector<std::span<const double>> out;
  for (const auto& g : grads.layers) {
    out.emplace_back(g.d_weight.values());
    out.emplace_back(g.d_bias);
    if (!g.d_gamma.empty()) {
      out.emplace_back(g.d_gamma);
      out.emplace_back(g.d_beta);
    }
  }
  return out;
}

}  // namespace gcfn::nn

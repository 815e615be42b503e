#include "gcfn/cf_gan/cf_gan.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gcfn/errors.hpp"
#include "gcfn/nn/checkpoint.hpp"
#include "gcfn/util/hash.hpp"

namespace gcfn::gan {

using nlohmann::json;
using nn::Mode;

namespace {

void check_binary(std::span<const int> a, std::size_t rows) {
  if (a.size() != rows) throw ShapeError("sensitive vector length does not match batch rows");
  for (int v : a) {
    if (v != 0 && v != 1) throw ValidationError("sensitive attribute must be 0 or 1, got " + std::to_string(v));
  }
}

Matrix generator_input(const Generator& gen, const Matrix& x, std::span<const int> a, const Matrix& m) {
  if (x.cols() != gen.x_width || m.cols() != gen.m_width) {
    throw ShapeError("generator expects x width " + std::to_string(gen.x_width) + " and m width " +
                     std::to_string(gen.m_width) + ", got " + std::to_string(x.cols()) + " and " +
                     std::to_string(m.cols()));
  }
  if (x.rows() != m.rows()) throw ShapeError("generator: x and m row counts differ");
  check_binary(a, x.rows());
  Matrix in(x.rows(), x.cols() + 1 + m.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::size_t c = 0;
    for (double v : x.row_span(r)) in(r, c++) = v;
    in(r, c++) = a[r];
    for (double v : m.row_span(r)) in(r, c++) = v;
  }
  return in;
}

// Softmax over each categorical block of both halves, in place.
void block_softmax(const Generator& gen, Matrix& out) {
  for (std::size_t half = 0; half < 2; ++half) {
    for (const auto& b : gen.mediator_blocks) {
      if (b.kind != data::BlockKind::kCategorical) continue;
      const std::size_t c0 = half * gen.m_width + b.offset;
      for (std::size_t r = 0; r < out.rows(); ++r) {
        double mx = out(r, c0);
        for (std::size_t k = 1; k < b.width; ++k) mx = std::max(mx, out(r, c0 + k));
        double s = 0.0;
        for (std::size_t k = 0; k < b.width; ++k) s += (out(r, c0 + k) = std::exp(out(r, c0 + k) - mx));
        for (std::size_t k = 0; k < b.width; ++k) out(r, c0 + k) /= s;
      }
    }
  }
}

// Pulls d loss / d softmax-output back to the logits of each categorical block.
void block_softmax_backward(const Generator& gen, const Matrix& probs, Matrix& grad) {
  for (std::size_t half = 0; half < 2; ++half) {
    for (const auto& b : gen.mediator_blocks) {
      if (b.kind != data::BlockKind::kCategorical) continue;
      const std::size_t c0 = half * gen.m_width + b.offset;
      for (std::size_t r = 0; r < grad.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t k = 0; k < b.width; ++k) dot += grad(r, c0 + k) * probs(r, c0 + k);
        for (std::size_t k = 0; k < b.width; ++k) grad(r, c0 + k) = probs(r, c0 + k) * (grad(r, c0 + k) - dot);
      }
    }
  }
}

MediatorPair split_halves(const Matrix& out, std::size_t m_width) {
  return {out.col_block(0, m_width), out.col_block(m_width, m_width)};
}

Matrix disc_input(const Discriminator& disc, const Matrix& x, const MediatorPair& tilde) {
  if (x.cols() != disc.x_width || tilde.m0.cols() != disc.m_width || tilde.m1.cols() != disc.m_width) {
    throw ShapeError("discriminator input widths do not match");
  }
  return hconcat({&x, &tilde.m0, &tilde.m1});
}

Matrix softmax2(const Matrix& logits) {
  Matrix p(logits.rows(), 2);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const double mx = std::max(logits(r, 0), logits(r, 1));
    const double e0 = std::exp(logits(r, 0) - mx);
    const double e1 = std::exp(logits(r, 1) - mx);
    p(r, 0) = e0 / (e0 + e1);
    p(r, 1) = e1 / (e0 + e1);
  }
  return p;
}

double mean_log_factual(const Matrix& probs, std::span<const int> a) {
  double s = 0.0;
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const double p = probs(r, static_cast<std::size_t>(a[r]));
    if (!(p > 0.0 && p < 1.0)) {
      throw NumericError("discriminator probability " + std::to_string(p) + " outside (0, 1) at row " +
                         std::to_string(r));
    }
    s += std::log(p);
  }
  return s / static_cast<double>(probs.rows());
}

json block_to_json(const data::ColumnBlock& b) {
  return {{"name", b.name},
          {"kind", b.kind == data::BlockKind::kCategorical ? "categorical" : "continuous"},
          {"offset", b.offset},
          {"width", b.width},
          {"categories", b.categories}};
}

data::ColumnBlock block_from_json(const json& j) {
  data::ColumnBlock b;
  b.name = j.at("name").get<std::string>();
  b.kind = j.at("kind") == "categorical" ? data::BlockKind::kCategorical : data::BlockKind::kContinuous;
  b.offset = j.at("offset").get<std::size_t>();
  b.width = j.at("width").get<std::size_t>();
  b.categories = j.at("categories").get<std::vector<std::string>>();
  return b;
}

}  // namespace

Matrix MediatorPair::select(std::span<const int> a) const {
  require_same_shape(m0, m1, "mediator pair");
  if (a.size() != m0.rows()) throw ShapeError("mediator pair: sensitive vector length differs");
  Matrix out(m0.rows(), m0.cols());
  for (std::size_t r = 0; r < m0.rows(); ++r) {
    const Matrix& src = a[r] == 1 ? m1 : m0;
    std::copy_n(src.row_span(r).begin(), m0.cols(), out.row_span(r).begin());
  }
  return out;
}

Matrix MediatorPair::select_flipped(std::span<const int> a) const {
  std::vector<int> flipped(a.begin(), a.end());
  for (int& v : flipped) v = 1 - v;
  return select(flipped);
}

void GanTrainConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ValidationError("gan config: alpha must be >= 0");
  if (epochs == 0 || batch_size < 2 || k_alt == 0 || hidden == 0) {
    throw ValidationError("gan config: epochs, k_alt, hidden must be > 0 and batch_size >= 2");
  }
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("gan config: lr must be > 0");
}

json gan_config_to_json(const GanTrainConfig& c) {
  return {{"alpha", c.alpha}, {"epochs", c.epochs}, {"batch_size", c.batch_size}, {"lr", c.lr},
          {"k_alt", c.k_alt}, {"hidden", c.hidden},  {"seed", c.seed}};
}

GanTrainConfig gan_config_from_json(const json& j) {
  try {
    GanTrainConfig c;
    c.alpha = j.value("alpha", c.alpha);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.k_alt = j.value("k_alt", c.k_alt);
    c.hidden = j.value("hidden", c.hidden);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("gan config: ") + e.what());
  }
}

Generator make_generator(std::size_t x_width, const std::vector<data::ColumnBlock>& mediator_blocks,
                         std::size_t hidden, std::mt19937_64& rng) {
  Generator g;
  g.x_width = x_width;
  g.m_width = data::layout_width(mediator_blocks);
  g.mediator_blocks = mediator_blocks;
  nn::MlpSpec spec;
  spec.input_dim = x_width + 1 + g.m_width;
  spec.hidden = {hidden};
  spec.output_dim = 2 * g.m_width;
  spec.batch_norm_hidden = true;
  g.net = nn::make_mlp(spec, rng);
  return g;
}

Discriminator make_discriminator(std::size_t x_width, std::size_t m_width, std::size_t hidden,
                                 std::mt19937_64& rng) {
  Discriminator d;
  d.x_width = x_width;
  d.m_width = m_width;
  nn::MlpSpec spec;
  spec.input_dim = x_width + 2 * m_width;
  spec.hidden = {hidden};
  spec.output_dim = 2;
  d.net = nn::make_mlp(spec, rng);
  return d;
}

MediatorPair generate(const Generator& gen, const Matrix& x, std::span<const int> a, const Matrix& m, Mode mode) {
  Matrix out = nn::forward(gen.net, generator_input(gen, x, a, m), mode).output;
  block_softmax(gen, out);
  return split_halves(out, gen.m_width);
}

MediatorPair combine_tilde(const Matrix& m, std::span<const int> a, const MediatorPair& generated) {
  require_same_shape(m, generated.m0, "combine_tilde");
  require_same_shape(m, generated.m1, "combine_tilde");
  check_binary(a, m.rows());
  MediatorPair t = generated;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    Matrix& slot = a[r] == 1 ? t.m1 : t.m0;
    std::copy_n(m.row_span(r).begin(), m.cols(), slot.row_span(r).begin());
  }
  return t;
}

double reconstruction_loss(const Generator& gen, const Matrix& x, std::span<const int> a, const Matrix& m) {
  if (m.rows() == 0) throw ValidationError("reconstruction_loss: empty batch");
  return mean_row_sq_dist(m, generate(gen, x, a, m).select(a));
}

Matrix discriminator_probs(const Discriminator& disc, const Matrix& x, const MediatorPair& tilde) {
  return softmax2(nn::forward(disc.net, disc_input(disc, x, tilde), Mode::kEval).output);
}

double adversarial_loss(const Discriminator& disc, const Matrix& x, std::span<const int> a,
                        const MediatorPair& tilde) {
  check_binary(a, x.rows());
  return mean_log_factual(discriminator_probs(disc, x, tilde), a);
}

double discriminator_accuracy(const Discriminator& disc, const Generator& gen, const Matrix& x,
                              std::span<const int> a, const Matrix& m) {
  const auto tilde = combine_tilde(m, a, generate(gen, x, a, m));
  const Matrix p = discriminator_probs(disc, x, tilde);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < p.rows(); ++r) hits += p(r, static_cast<std::size_t>(a[r])) > 0.5 ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(p.rows());
}

Matrix generate_counterfactual(const Generator& gen, const data::Dataset& ds) {
  return generate(gen, ds.x, ds.a, ds.m).select_flipped(ds.a);
}

Matrix generate_factual(const Generator& gen, const data::Dataset& ds) {
  return generate(gen, ds.x, ds.a, ds.m).select(ds.a);
}

double discriminator_step(Discriminator& disc, nn::AdamState& opt, const Matrix& x, std::span<const int> a,
                          const MediatorPair& tilde) {
  check_binary(a, x.rows());
  auto d_pass = nn::forward(disc.net, disc_input(disc, x, tilde), Mode::kTrain);
  const Matrix p = softmax2(d_pass.output);
  const double l_adv = mean_log_factual(p, a);
  const double inv_b = 1.0 / static_cast<double>(x.rows());
  // Ascent on L_adv = descent on -L_adv.
  Matrix up(p.rows(), 2);
  for (std::size_t r = 0; r < p.rows(); ++r) {
    for (std::size_t j = 0; j < 2; ++j) up(r, j) = (p(r, j) - (static_cast<int>(j) == a[r] ? 1.0 : 0.0)) * inv_b;
  }
  nn::adam_step(opt, disc.net, nn::backward(disc.net, d_pass.cache, up));
  return l_adv;
}

GeneratorObjective generator_objective(const Generator& gen, const Discriminator& disc, const Matrix& x,
                                       std::span<const int> a, const Matrix& m, double alpha) {
  const std::size_t mw = gen.m_width;
  const std::size_t xw = gen.x_width;
  auto g_pass = nn::forward(gen.net, generator_input(gen, x, a, m), Mode::kTrain);
  Matrix g_out = g_pass.output;
  block_softmax(gen, g_out);
  const auto generated = split_halves(g_out, mw);
  const auto tilde = combine_tilde(m, a, generated);
  auto d_pass = nn::forward(disc.net, disc_input(disc, x, tilde), Mode::kTrain);
  const Matrix p = softmax2(d_pass.output);

  GeneratorObjective obj;
  obj.adversarial = mean_log_factual(p, a);
  obj.reconstruction = mean_row_sq_dist(m, generated.select(a));
  if (!std::isfinite(obj.adversarial) || !std::isfinite(obj.reconstruction)) {
    throw NumericError("non-finite generator loss");
  }
  const double inv_b = 1.0 / static_cast<double>(x.rows());
  Matrix up(p.rows(), 2);
  for (std::size_t r = 0; r < p.rows(); ++r) {
    for (std::size_t j = 0; j < 2; ++j) up(r, j) = ((static_cast<int>(j) == a[r] ? 1.0 : 0.0) - p(r, j)) * inv_b;
  }
  const Matrix d_in = nn::backward(disc.net, d_pass.cache, up).d_input;
  Matrix d_out(x.rows(), 2 * mw);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const std::size_t fact_off = static_cast<std::size_t>(a[r]) * mw;
    const std::size_t cf_off = static_cast<std::size_t>(1 - a[r]) * mw;
    for (std::size_t c = 0; c < mw; ++c) {
      // Only the counterfactual slot of D's input depends on G.
      d_out(r, cf_off + c) = d_in(r, xw + cf_off + c);
      d_out(r, fact_off + c) = alpha * 2.0 * (g_out(r, fact_off + c) - m(r, c)) * inv_b;
    }
  }
  block_softmax_backward(gen, g_out, d_out);
  obj.grads = nn::backward(gen.net, g_pass.cache, d_out);
  obj.cache = std::move(g_pass.cache);
  return obj;
}

GeneratorObjective generator_step(Generator& gen, nn::AdamState& opt, const Discriminator& disc, const Matrix& x,
                                  std::span<const int> a, const Matrix& m, double alpha) {
  GeneratorObjective obj = generator_objective(gen, disc, x, a, m, alpha);
  nn::adam_step(opt, gen.net, obj.grads);
  nn::commit_batch_norm_stats(gen.net, obj.cache);
  return obj;
}

GanBundle train_gan(const data::Dataset& train, const GanTrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  train.validate();
  const std::size_t n = train.rows();
  if (n < 2) throw ValidationError("train_gan: need at least two rows");

  std::mt19937_64 rng(cfg.seed);
  GanBundle bundle;
  bundle.config = cfg;
  bundle.schema = data::schema_to_json(train.schema);
  bundle.generator = make_generator(train.x_width(), train.mediator_blocks, cfg.hidden, rng);
  bundle.discriminator = make_discriminator(train.x_width(), train.m_width(), cfg.hidden, rng);
  Generator& gen = bundle.generator;
  Discriminator& disc = bundle.discriminator;
  nn::AdamState opt_g(cfg.lr), opt_d(cfg.lr);

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  const std::size_t bs = std::min(cfg.batch_size, n);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(perm.begin(), perm.end(), rng);
    double sum_adv = 0.0, sum_rec = 0.0;
    std::size_t g_steps = 0;
    try {
      for (std::size_t start = 0; start < n; start += bs) {
        const std::size_t end = std::min(start + bs, n);
        if (end - start < 2) break;  // batch norm needs two rows
        const std::span<const std::size_t> idx(perm.data() + start, end - start);
        const Matrix xb = train.x.gather_rows(idx);
        const Matrix mb = train.m.gather_rows(idx);
        std::vector<int> ab(idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k) ab[k] = train.a[idx[k]];

        for (std::size_t k = 0; k < cfg.k_alt; ++k) {
          const auto tilde = combine_tilde(mb, ab, generate(gen, xb, ab, mb, Mode::kTrain));
          discriminator_step(disc, opt_d, xb, ab, tilde);
        }
        for (std::size_t k = 0; k < cfg.k_alt; ++k) {
          const auto obj = generator_step(gen, opt_g, disc, xb, ab, mb, cfg.alpha);
          sum_adv += obj.adversarial;
          sum_rec += obj.reconstruction;
          ++g_steps;
        }
      }
    } catch (const NumericError& e) {
      throw TrainingError("gan training diverged at epoch " + std::to_string(epoch + 1) + ": " + e.what());
    }
    const double denom = static_cast<double>(std::max<std::size_t>(g_steps, 1));
    bundle.loss_history.push_back({sum_adv / denom, sum_rec / denom});
    if (on_epoch) on_epoch(epoch, bundle);
  }
  return bundle;
}

std::string GanBundle::fingerprint() const {
  return "gan-" + util::hex64(util::fnv1a64(nn::mlp_to_json(generator.net).dump()));
}

void GanBundle::save(const std::filesystem::path& path) const {
  nn::Checkpoint ck;
  ck.networks.emplace("generator", generator.net);
  ck.networks.emplace("discriminator", discriminator.net);
  json hist = json::array();
  for (const auto& e : loss_history) hist.push_back({e.adversarial, e.reconstruction});
  json blocks = json::array();
  for (const auto& b : generator.mediator_blocks) blocks.push_back(block_to_json(b));
  ck.meta = {{"kind", "gan"},
             {"config", gan_config_to_json(config)},
             {"loss_history", std::move(hist)},
             {"schema", schema},
             {"x_width", generator.x_width},
             {"m_width", generator.m_width},
             {"mediator_blocks", std::move(blocks)}};
  ck.save(path);
}

GanBundle GanBundle::load(const std::filesystem::path& path) {
  const auto ck = nn::Checkpoint::load(path);
  try {
    if (ck.meta.value("kind", std::string()) != "gan") {
      throw ValidationError("'" + path.string() + "' is not a GAN checkpoint");
    }
    GanBundle b;
    b.config = gan_config_from_json(ck.meta.at("config"));
    b.schema = ck.meta.at("schema");
    for (const auto& e : ck.meta.at("loss_history")) b.loss_history.push_back({e.at(0).get<double>(), e.at(1).get<double>()});
    b.generator.net = ck.networks.at("generator");
    b.generator.x_width = ck.meta.at("x_width").get<std::size_t>();
    b.generator.m_width = ck.meta.at("m_width").get<std::size_t>();
    for (const auto& jb : ck.meta.at("mediator_blocks")) b.generator.mediator_blocks.push_back(block_from_json(jb));
    b.discriminator.net = ck.networks.at("discriminator");
    b.discriminator.x_width = b.generator.x_width;
    b.discriminator.m_width = b.generator.m_width;
    return b;
  } catch (const std::out_of_range&) {
    throw ValidationError("'" + path.string() + "': GAN checkpoint lacks a generator or discriminator");
  } catch (const json::exception& e) {
    throw ValidationError("'" + path.string() + "': malformed GAN checkpoint: " + e.what());
  }
}

}  // namespace gcfn::gan

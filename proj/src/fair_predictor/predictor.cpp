#include "gcfn/fair_predictor/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gcfn/data/csv.hpp"
#include "gcfn/errors.hpp"
#include "gcfn/nn/adam.hpp"
#include "gcfn/nn/checkpoint.hpp"
#include "gcfn/nn/loss.hpp"

namespace gcfn::fair {

using nlohmann::json;
using nn::Mode;

namespace {

Matrix predictor_input(const Predictor& h, const Matrix& x, const Matrix& m) {
  if (x.cols() != h.x_width || m.cols() != h.m_width) {
    throw ShapeError("predictor expects x width " + std::to_string(h.x_width) + " and m width " +
                     std::to_string(h.m_width) + ", got " + std::to_string(x.cols()) + " and " +
                     std::to_string(m.cols()));
  }
  if (x.rows() != m.rows()) throw ShapeError("predictor: x and m row counts differ");
  return hconcat({&x, &m});
}

std::vector<double> first_column(const Matrix& out) {
  std::vector<double> p(out.rows());
  for (std::size_t r = 0; r < out.rows(); ++r) p[r] = out(r, 0);
  return p;
}

void check_generator(const Predictor& h, const gan::Generator& gen) {
  if (gen.x_width != h.x_width || gen.m_width != h.m_width) {
    throw ValidationError("generator widths (" + std::to_string(gen.x_width) + ", " + std::to_string(gen.m_width) +
                          ") do not match predictor (" + std::to_string(h.x_width) + ", " +
                          std::to_string(h.m_width) + ")");
  }
}

void accumulate(nn::Gradients& into, const nn::Gradients& g) {
  for (std::size_t li = 0; li < into.layers.size(); ++li) {
    auto add = [](std::vector<double>& a, const std::vector<double>& b) {
      for (std::size_t k = 0; k < a.size(); ++k) a[k] += b[k];
    };
    add(into.layers[li].d_weight.values(), g.layers[li].d_weight.values());
    add(into.layers[li].d_bias, g.layers[li].d_bias);
  }
}

}  // namespace

void PredictorTrainConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("predictor config: lambda must be >= 0");
  if (epochs == 0 || batch_size == 0 || hidden == 0) {
    throw ValidationError("predictor config: epochs, batch_size and hidden must be > 0");
  }
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("predictor config: lr must be > 0");
}

json predictor_config_to_json(const PredictorTrainConfig& c) {
  return {{"lambda", c.lambda},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"hidden", c.hidden},
          {"spectral_norm", c.spectral_norm},
          {"cache_counterfactuals", c.cache_counterfactuals},
          {"seed", c.seed}};
}

PredictorTrainConfig predictor_config_from_json(const json& j) {
  try {
    PredictorTrainConfig c;
    c.lambda = j.value("lambda", c.lambda);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.hidden = j.value("hidden", c.hidden);
    c.spectral_norm = j.value("spectral_norm", c.spectral_norm);
    c.cache_counterfactuals = j.value("cache_counterfactuals", c.cache_counterfactuals);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("predictor config: ") + e.what());
  }
}

Predictor make_predictor(std::size_t x_width, std::size_t m_width, std::size_t hidden, bool spectral_norm,
                         std::mt19937_64& rng) {
  Predictor h;
  h.x_width = x_width;
  h.m_width = m_width;
  h.spectral_norm = spectral_norm;
  nn::MlpSpec spec;
  spec.input_dim = x_width + m_width;
  spec.hidden = {hidden};
  spec.output_dim = 1;
  spec.output_activation = nn::Activation::kSigmoid;
  spec.spectral_norm = spectral_norm;
  h.net = nn::make_mlp(spec, rng);
  return h;
}

std::vector<double> predict(const Predictor& h, const Matrix& x, const Matrix& m) {
  return first_column(nn::forward(h.net, predictor_input(h, x, m), Mode::kEval).output);
}

std::vector<int> predict_labels(const Predictor& h, const Matrix& x, const Matrix& m) {
  const auto p = predict(h, x, m);
  std::vector<int> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] >= 0.5 ? 1 : 0;
  return out;
}

double rcm(const Predictor& h, const Matrix& x, const Matrix& m, const Matrix& m_cf) {
  require_same_shape(m, m_cf, "rcm");
  if (m.rows() == 0) throw ValidationError("rcm: empty batch");
  const auto p = predict(h, x, m);
  const auto q = predict(h, x, m_cf);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - q[i]) * (p[i] - q[i]);
  return s / static_cast<double>(p.size());
}

double rcm(const Predictor& h, const Matrix& x, std::span<const int> a, const Matrix& m, const gan::Generator& gen) {
  check_generator(h, gen);
  return rcm(h, x, m, gan::generate(gen, x, a, m).select_flipped(a));
}

double total_loss(const Predictor& h, const Matrix& x, std::span<const int> a, const Matrix& m,
                  std::span<const int> y, const gan::Generator& gen, double lambda) {
  if (!(lambda >= 0.0)) throw ValidationError("total_loss: lambda must be >= 0");
  const double ce = nn::cross_entropy(predict(h, x, m), y);
  return ce + lambda * rcm(h, x, a, m, gen);
}

double mediator_lipschitz(const Predictor& h, int n_power_iters) {
  nn::MLPParams net = h.net;
  auto& first = net.layers.front();
  const Matrix w = nn::effective_weight(first);
  first.weight = w.col_block(h.x_width, h.m_width);
  first.spectral_norm = false;
  // Generic deterministic start vector.
  first.power_iter_vector.resize(h.m_width);
  double norm = 0.0;
  for (std::size_t k = 0; k < h.m_width; ++k) {
    first.power_iter_vector[k] = 1.0 + 0.1 * static_cast<double>(k);
    norm += first.power_iter_vector[k] * first.power_iter_vector[k];
  }
  for (double& v : first.power_iter_vector) v /= std::sqrt(norm);
  return nn::lipschitz_bound(net, n_power_iters);
}

PredictorBundle train_predictor(const data::Dataset& train, const gan::GanBundle& gan,
                                const PredictorTrainConfig& cfg, const PredictorEpochCallback& on_epoch) {
  cfg.validate();
  train.validate();
  const json schema = data::schema_to_json(train.schema);
  if (gan.schema != schema) throw ValidationError("train_predictor: GAN was trained on a different schema");
  const std::size_t n = train.rows();
  if (n == 0) throw ValidationError("train_predictor: empty training set");

  std::mt19937_64 rng(cfg.seed);
  PredictorBundle bundle;
  bundle.config = cfg;
  bundle.gan_ref = gan.fingerprint();
  bundle.schema = schema;
  bundle.standardization = train.standardization;
  bundle.predictor = make_predictor(train.x_width(), train.m_width(), cfg.hidden, cfg.spectral_norm, rng);
  Predictor& h = bundle.predictor;
  check_generator(h, gan.generator);
  nn::AdamState opt(cfg.lr);

  Matrix cf_all;
  if (cfg.cache_counterfactuals) cf_all = gan::generate_counterfactual(gan.generator, train);

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  const std::size_t bs = std::min(cfg.batch_size, n);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(perm.begin(), perm.end(), rng);
    double sum_ce = 0.0, sum_rcm = 0.0;
    std::size_t steps = 0;
    try {
      for (std::size_t start = 0; start < n; start += bs) {
        const std::size_t end = std::min(start + bs, n);
        const std::span<const std::size_t> idx(perm.data() + start, end - start);
        const Matrix xb = train.x.gather_rows(idx);
        const Matrix mb = train.m.gather_rows(idx);
        std::vector<int> ab(idx.size()), yb(idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k) {
          ab[k] = train.a[idx[k]];
          yb[k] = train.y[idx[k]];
        }
        const Matrix cfb = cfg.cache_counterfactuals
                               ? cf_all.gather_rows(idx)
                               : gan::generate(gan.generator, xb, ab, mb).select_flipped(ab);

        if (h.spectral_norm) nn::refresh_spectral_vectors(h.net, 1);
        auto pass_f = nn::forward(h.net, predictor_input(h, xb, mb), Mode::kTrain);
        auto pass_c = nn::forward(h.net, predictor_input(h, xb, cfb), Mode::kTrain);
        const auto p = first_column(pass_f.output);
        const auto q = first_column(pass_c.output);
        const double ce = nn::cross_entropy(p, yb);
        double r = 0.0;
        for (std::size_t k = 0; k < p.size(); ++k) r += (p[k] - q[k]) * (p[k] - q[k]);
        r /= static_cast<double>(p.size());
        if (!std::isfinite(ce) || !std::isfinite(r)) throw NumericError("non-finite predictor loss");

        const auto ce_grad = nn::cross_entropy_grad(p, yb);
        const double scale = 2.0 * cfg.lambda / static_cast<double>(p.size());
        Matrix up_f(p.size(), 1), up_c(p.size(), 1);
        for (std::size_t k = 0; k < p.size(); ++k) {
          up_f(k, 0) = ce_grad[k] + scale * (p[k] - q[k]);
          up_c(k, 0) = -scale * (p[k] - q[k]);
        }
        nn::Gradients grads = nn::backward(h.net, pass_f.cache, up_f);
        if (cfg.lambda > 0.0) accumulate(grads, nn::backward(h.net, pass_c.cache, up_c));
        nn::adam_step(opt, h.net, grads);
        sum_ce += ce;
        sum_rcm += r;
        ++steps;
      }
    } catch (const NumericError& e) {
      throw TrainingError("predictor training diverged at epoch " + std::to_string(epoch + 1) + ": " + e.what());
    }
    bundle.loss_history.push_back({sum_ce / static_cast<double>(steps), sum_rcm / static_cast<double>(steps)});
    if (on_epoch) on_epoch(epoch, bundle);
  }
  bundle.lipschitz_cert = mediator_lipschitz(h);
  return bundle;
}

void PredictorBundle::save(const std::filesystem::path& path) const {
  nn::Checkpoint ck;
  ck.networks.emplace("predictor", predictor.net);
  json hist = json::array();
  for (const auto& e : loss_history) hist.push_back({e.cross_entropy, e.rcm});
  ck.meta = {{"kind", "predictor"},
             {"config", predictor_config_to_json(config)},
             {"gan_ref", gan_ref},
             {"loss_history", std::move(hist)},
             {"lipschitz_cert", lipschitz_cert},
             {"schema", schema},
             {"standardization", data::standardization_to_json(standardization)},
             {"x_width", predictor.x_width},
             {"m_width", predictor.m_width},
             {"spectral_norm", predictor.spectral_norm}};
  ck.save(path);
}

PredictorBundle PredictorBundle::load(const std::filesystem::path& path) {
  const auto ck = nn::Checkpoint::load(path);
  try {
    if (ck.meta.value("kind", std::string()) != "predictor") {
      throw ValidationError("'" + path.string() + "' is not a predictor checkpoint");
    }
    PredictorBundle b;
    b.config = predictor_config_from_json(ck.meta.at("config"));
    b.gan_ref = ck.meta.at("gan_ref").get<std::string>();
    for (const auto& e : ck.meta.at("loss_history")) b.loss_history.push_back({e.at(0).get<double>(), e.at(1).get<double>()});
    b.lipschitz_cert = ck.meta.at("lipschitz_cert").get<double>();
    b.schema = ck.meta.at("schema");
    b.standardization = data::standardization_from_json(ck.meta.at("standardization"));
    b.predictor.net = ck.networks.at("predictor");
    b.predictor.x_width = ck.meta.at("x_width").get<std::size_t>();
    b.predictor.m_width = ck.meta.at("m_width").get<std::size_t>();
    b.predictor.spectral_norm = ck.meta.at("spectral_norm").get<bool>();
    return b;
  } catch (const std::out_of_range&) {
    throw ValidationError("'" + path.string() + "': predictor checkpoint lacks its network");
  } catch (const json::exception& e) {
    throw ValidationError("'" + path.string() + "': malformed predictor checkpoint: " + e.what());
  }
}

std::size_t predict_csv(const PredictorBundle& bundle, const std::filesystem::path& in_csv,
                        const std::filesystem::path& out_csv) {
  const data::RoleSchema schema = data::schema_from_json(bundle.schema);
  data::IngestOptions opts;
  opts.features_only = true;
  data::CsvTable table = data::read_csv(in_csv, opts.delimiter, opts.comment_prefix);
  if (!schema.has_header) {
    table.rows.insert(table.rows.begin(), table.header);
    table.header = schema.column_names;
  }
  data::RoleSchema as_read = schema;
  as_read.has_header = true;  // header already resolved above
  data::Dataset ds = data::ingest_table(table, as_read, opts);
  bundle.standardization.apply_x(ds.x);
  bundle.standardization.apply_m(ds.m);
  const auto p = predict(bundle.predictor, ds.x, ds.m);

  data::CsvTable out;
  out.header = table.header;
  out.header.push_back("p_hat");
  out.rows.reserve(ds.rows());
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    auto row = table.rows[ds.row_ids[i]];
    row.push_back(data::format_double(p[i]));
    out.rows.push_back(std::move(row));
  }
  data::write_csv(out_csv, out);
  return out.rows.size();
}

}  // namespace gcfn::fair

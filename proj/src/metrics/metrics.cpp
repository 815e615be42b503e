#include "gcfn/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "gcfn/data/csv.hpp"
#include "gcfn/errors.hpp"

namespace gcfn::metrics {

using nlohmann::json;

namespace {

void check_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
}

void check_binary(std::span<const int> v, const char* what) {
  for (int x : v) {
    if (x != 0 && x != 1) throw ValidationError(std::string(what) + ": values must be 0 or 1");
  }
}

std::string format_gamma(double g) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2g", g);
  return buf;
}

void put_confusion(RunMetrics& r, const std::string& prefix, const Confusion& c) {
  r.values[prefix + ".n"] = static_cast<double>(c.n);
  if (c.acc) r.values[prefix + ".acc"] = *c.acc;
  if (c.ppv) r.values[prefix + ".ppv"] = *c.ppv;
  if (c.fpr) r.values[prefix + ".fpr"] = *c.fpr;
  if (c.fnr) r.values[prefix + ".fnr"] = *c.fnr;
}

}  // namespace

double cf_metric(const fair::Predictor& h, const Matrix& x, const Matrix& m, const Matrix& m_ref) {
  return fair::rcm(h, x, m, m_ref);
}

double cf_true(const fair::Predictor& h, const data::Dataset& ds) {
  if (!ds.m_cf) throw ValidationError("cf_true: dataset has no ground-truth counterfactual mediators");
  return cf_metric(h, ds.x, ds.m, *ds.m_cf);
}

double cf_gen(const fair::Predictor& h, const data::Dataset& ds, const gan::Generator& gen) {
  return cf_metric(h, ds.x, ds.m, gan::generate_counterfactual(gen, ds));
}

double accuracy(std::span<const int> y_true, std::span<const int> y_pred) {
  check_same_length(y_true.size(), y_pred.size(), "accuracy");
  if (y_true.empty()) throw ValidationError("accuracy: empty input");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) hit += y_true[i] == y_pred[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(y_true.size());
}

double utility(double accuracy, double cf, double gamma) {
  if (!(gamma >= 0.0)) throw ValidationError("utility: gamma must be >= 0");
  return accuracy - gamma * cf;
}

std::vector<double> default_gamma_grid() {
  std::vector<double> g;
  for (int k = 1; k <= 10; ++k) g.push_back(k / 10.0);
  return g;
}

NormalizedMse normalized_mse(const Matrix& m, const Matrix& m_cf, const Matrix& m_hat) {
  require_same_shape(m, m_cf, "normalized_mse");
  require_same_shape(m, m_hat, "normalized_mse");
  if (m.rows() == 0) throw ValidationError("normalized_mse: empty input");
  const double norm = mean_row_sq_dist(m, m_cf);
  if (!(norm > 0.0)) throw NumericError("normalized_mse: degenerate normalizer, M equals M_cf everywhere");
  return {1.0, mean_row_sq_dist(m, m_hat) / norm, mean_row_sq_dist(m_cf, m_hat) / norm};
}

Confusion confusion(std::span<const int> y_true, std::span<const int> y_pred) {
  check_same_length(y_true.size(), y_pred.size(), "confusion");
  check_binary(y_true, "confusion");
  check_binary(y_pred, "confusion");
  Confusion c;
  c.n = y_true.size();
  for (std::size_t i = 0; i < c.n; ++i) {
    if (y_pred[i] == 1) {
      (y_true[i] == 1 ? c.tp : c.fp) += 1;
    } else {
      (y_true[i] == 0 ? c.tn : c.fn) += 1;
    }
  }
  auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  c.acc = ratio(c.tp + c.tn, c.n);
  c.ppv = ratio(c.tp, c.tp + c.fp);
  c.fpr = ratio(c.fp, c.fp + c.tn);
  c.fnr = ratio(c.fn, c.fn + c.tp);
  return c;
}

ConfusionReport confusion_metrics(std::span<const int> y_true, std::span<const int> y_pred, std::span<const int> a) {
  check_same_length(y_true.size(), a.size(), "confusion_metrics");
  check_binary(a, "confusion_metrics");
  ConfusionReport r;
  r.overall = confusion(y_true, y_pred);
  for (int g = 0; g < 2; ++g) {
    std::vector<int> yt, yp;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i] != g) continue;
      yt.push_back(y_true[i]);
      yp.push_back(y_pred[i]);
    }
    if (!yt.empty()) r.by_group[g] = confusion(yt, yp);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Quantile oracle

namespace {

// Knots of the interpolated ECDF: distinct sorted values and their mid-rank probabilities.
struct Knots {
  std::vector<double> v, p;
};

Knots knots_of(const std::vector<double>& sorted) {
  Knots k;
  const double n = static_cast<double>(sorted.size());
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    // ranks i..j-1 share one value; use the average of (r + 0.5) / n
    k.v.push_back(sorted[i]);
    k.p.push_back((0.5 * static_cast<double>(i + j - 1) + 0.5) / n);
    i = j;
  }
  return k;
}

double interpolate(const std::vector<double>& from, const std::vector<double>& to, double t) {
  if (t <= from.front()) return to.front();
  if (t >= from.back()) return to.back();
  const auto it = std::upper_bound(from.begin(), from.end(), t);
  const std::size_t k = static_cast<std::size_t>(it - from.begin());
  const double w = (t - from[k - 1]) / (from[k] - from[k - 1]);
  return to[k - 1] + w * (to[k] - to[k - 1]);
}

}  // namespace

QuantileOracle::QuantileOracle(const Matrix& x, std::span<const int> a, std::span<const double> m,
                               const Options& options) {
  const std::size_t n = x.rows();
  check_same_length(n, a.size(), "QuantileOracle");
  check_same_length(n, m.size(), "QuantileOracle");
  check_binary(a, "QuantileOracle");
  if (n == 0) throw ValidationError("QuantileOracle: empty input");
  if (options.n_bins == 0) throw ValidationError("QuantileOracle: n_bins must be > 0");

  std::set<std::vector<double>> distinct;
  for (std::size_t r = 0; r < n && distinct.size() <= options.max_exact_keys; ++r) {
    const auto row = x.row_span(r);
    distinct.emplace(row.begin(), row.end());
  }
  exact_ = distinct.size() <= options.max_exact_keys;
  if (exact_) {
    for (const auto& key : distinct) keys_.emplace(key, keys_.size());
    cells_.resize(keys_.size());
  } else {
    if (x.cols() != 1) {
      throw ValidationError("QuantileOracle: continuous binning needs a single covariate column, got " +
                            std::to_string(x.cols()));
    }
    std::vector<double> xs(x.values());
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 1; k < options.n_bins; ++k) edges_.push_back(xs[k * n / options.n_bins]);
    cells_.resize(options.n_bins);
  }
  for (std::size_t r = 0; r < n; ++r) cells_[bin_of(x.row_span(r))][a[r]].push_back(m[r]);
  knot_v_.resize(cells_.size());
  knot_p_.resize(cells_.size());
  for (std::size_t b = 0; b < cells_.size(); ++b) {
    for (int g = 0; g < 2; ++g) {
      std::sort(cells_[b][g].begin(), cells_[b][g].end());
      Knots k = knots_of(cells_[b][g]);
      knot_v_[b][g] = std::move(k.v);
      knot_p_[b][g] = std::move(k.p);
    }
  }
}

std::size_t QuantileOracle::bin_of(std::span<const double> x_row) const {
  if (exact_) {
    const auto it = keys_.find(std::vector<double>(x_row.begin(), x_row.end()));
    if (it == keys_.end()) throw CoverageError("QuantileOracle: covariate value not seen when fitting");
    return it->second;
  }
  if (x_row.size() != 1) throw ShapeError("QuantileOracle: expected one covariate");
  return static_cast<std::size_t>(std::upper_bound(edges_.begin(), edges_.end(), x_row[0]) - edges_.begin());
}

const std::vector<double>& QuantileOracle::cell(std::size_t bin, int a) const {
  const auto& v = cells_.at(bin)[a != 0];
  if (v.empty()) {
    throw CoverageError("QuantileOracle: empty cell (bin " + std::to_string(bin) + ", a=" + std::to_string(a) + ")");
  }
  return v;
}

double QuantileOracle::cdf(std::size_t bin, int a, double m) const {
  cell(bin, a);
  const auto& v = knot_v_[bin][a != 0];
  const auto& p = knot_p_[bin][a != 0];
  if (v.size() == 1) return p.front();
  return interpolate(v, p, m);
}

double QuantileOracle::quantile(std::size_t bin, int a, double u) const {
  cell(bin, a);
  const auto& v = knot_v_[bin][a != 0];
  const auto& p = knot_p_[bin][a != 0];
  if (v.size() == 1) return v.front();
  return interpolate(p, v, u);
}

double QuantileOracle::counterfactual(std::span<const double> x_row, int a, int a_target, double m,
                                      Branch branch) const {
  const std::size_t bin = bin_of(x_row);
  cell(bin, a_target);  // coverage check before any work
  const double u = cdf(bin, a, m);
  return quantile(bin, a_target, branch == Branch::kIncreasing ? u : 1.0 - u);
}

double QuantileOracle::counterfactual(std::span<const double> x_row, int a, double m, Branch branch) const {
  return counterfactual(x_row, a, 1 - a, m, branch);
}

std::vector<double> bgm_oracle_counterfactuals(const QuantileOracle& oracle, const Matrix& x,
                                               std::span<const int> a, std::span<const double> m, Branch branch) {
  check_same_length(x.rows(), a.size(), "bgm_oracle_counterfactuals");
  check_same_length(x.rows(), m.size(), "bgm_oracle_counterfactuals");
  std::vector<double> out(m.size());
  for (std::size_t r = 0; r < m.size(); ++r) out[r] = oracle.counterfactual(x.row_span(r), a[r], m[r], branch);
  return out;
}

// ---------------------------------------------------------------------------
// Densities

Histogram density_export(std::span<const double> values, std::span<const int> groups, std::size_t n_bins) {
  check_same_length(values.size(), groups.size(), "density_export");
  check_binary(groups, "density_export");
  if (n_bins < 2) throw ValidationError("density_export: n_bins must be >= 2");
  Histogram h;
  h.n_bins = n_bins;
  std::array<std::vector<std::size_t>, 2> counts{std::vector<std::size_t>(n_bins, 0), std::vector<std::size_t>(n_bins, 0)};
  std::array<std::size_t, 2> totals{0, 0};
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("density_export: values must lie in [0, 1]");
    const std::size_t b = std::min(n_bins - 1, static_cast<std::size_t>(v * static_cast<double>(n_bins)));
    counts[groups[i]][b] += 1;
    totals[groups[i]] += 1;
  }
  const double width = 1.0 / static_cast<double>(n_bins);
  for (int g = 0; g < 2; ++g) {
    if (totals[g] == 0) {
      h.empty_groups.push_back(g);
      continue;
    }
    for (std::size_t b = 0; b < n_bins; ++b) {
      h.rows.push_back({g, static_cast<double>(b) * width, static_cast<double>(b + 1) * width,
                        static_cast<double>(counts[g][b]) / (static_cast<double>(totals[g]) * width)});
    }
  }
  return h;
}

double tv_distance(const Histogram& hist) {
  if (!hist.empty_groups.empty()) throw ValidationError("tv_distance: a group has no values");
  std::vector<double> p0(hist.n_bins), p1(hist.n_bins);
  std::size_t i0 = 0, i1 = 0;
  for (const auto& r : hist.rows) {
    const double mass = r.density * (r.bin_hi - r.bin_lo);
    if (r.group == 0) p0.at(i0++) = mass;
    else p1.at(i1++) = mass;
  }
  double s = 0.0;
  for (std::size_t b = 0; b < hist.n_bins; ++b) s += std::abs(p0[b] - p1[b]);
  return 0.5 * s;
}

void write_histogram_csv(const Histogram& hist, const std::filesystem::path& path) {
  data::CsvTable t;
  t.header = {"group", "bin_lo", "bin_hi", "density"};
  for (const auto& r : hist.rows) {
    t.rows.push_back({std::to_string(r.group), data::format_double(r.bin_lo), data::format_double(r.bin_hi),
                      data::format_double(r.density)});
  }
  data::write_csv(path, t);
}

// ---------------------------------------------------------------------------
// Bound audit and reports

BoundAudit bound_audit(const fair::Predictor& h, double lipschitz, const data::Dataset& ds,
                       const gan::Generator& gen) {
  if (!ds.m_cf) throw ValidationError("bound_audit: dataset has no ground-truth counterfactual mediators");
  if (!(lipschitz >= 0.0)) throw ValidationError("bound_audit: Lipschitz constant must be >= 0");
  const Matrix m_hat = gan::generate_counterfactual(gen, ds);
  BoundAudit b;
  b.cf = cf_metric(h, ds.x, ds.m, *ds.m_cf);
  b.lipschitz = lipschitz;
  b.recon_error = mean_row_sq_dist(*ds.m_cf, m_hat);
  b.rcm = cf_metric(h, ds.x, ds.m, m_hat);
  b.rhs = 2.0 * lipschitz * lipschitz * b.recon_error + 2.0 * b.rcm;
  b.holds = b.cf <= b.rhs;
  return b;
}

std::optional<double> RunMetrics::get(const std::string& key) const {
  const auto it = values.find(key);
  if (it == values.end()) return std::nullopt;
  return it->second;
}

json RunMetrics::to_json() const { return json(values); }

RunMetrics evaluate(const fair::PredictorBundle& bundle, const gan::Generator& gen, const data::Dataset& test,
                    const std::vector<double>& gammas) {
  const auto& h = bundle.predictor;
  RunMetrics r;
  const auto labels = fair::predict_labels(h, test.x, test.m);
  const double acc = accuracy(test.y, labels);
  r.values["n_test"] = static_cast<double>(test.rows());
  r.values["accuracy"] = acc;

  const Matrix m_hat = gan::generate_counterfactual(gen, test);
  r.values["cf_gen"] = cf_metric(h, test.x, test.m, m_hat);
  double cf_for_utility = r.values["cf_gen"];
  if (test.m_cf) {
    r.values["cf_true"] = cf_metric(h, test.x, test.m, *test.m_cf);
    cf_for_utility = r.values["cf_true"];
    Matrix raw_m = test.m, raw_cf = *test.m_cf, raw_hat = m_hat;
    test.standardization.invert_m(raw_m);
    test.standardization.invert_m(raw_cf);
    test.standardization.invert_m(raw_hat);
    const auto nm = normalized_mse(raw_m, raw_cf, raw_hat);
    r.values["nmse.m_vs_cf"] = nm.m_vs_cf;
    r.values["nmse.m_vs_hat"] = nm.m_vs_hat;
    r.values["nmse.cf_vs_hat"] = nm.cf_vs_hat;
    const auto b = bound_audit(h, bundle.lipschitz_cert, test, gen);
    r.values["bound.cf"] = b.cf;
    r.values["bound.lipschitz"] = b.lipschitz;
    r.values["bound.recon_error"] = b.recon_error;
    r.values["bound.rcm"] = b.rcm;
    r.values["bound.rhs"] = b.rhs;
    r.values["bound.holds"] = b.holds ? 1.0 : 0.0;
  }
  if (!gammas.empty()) {
    double sum = 0.0;
    for (double g : gammas) {
      const double u = utility(acc, cf_for_utility, g);
      r.values["utility@" + format_gamma(g)] = u;
      sum += u;
    }
    r.values["utility.mean"] = sum / static_cast<double>(gammas.size());
  }
  const auto conf = confusion_metrics(test.y, labels, test.a);
  put_confusion(r, "confusion.all", conf.overall);
  for (int g = 0; g < 2; ++g) {
    if (conf.by_group[g]) put_confusion(r, "confusion.a" + std::to_string(g), *conf.by_group[g]);
  }
  return r;
}

std::vector<std::string> MetricsReport::keys() const {
  std::set<std::string> k;
  for (const auto& r : runs) {
    for (const auto& [name, _] : r.values) k.insert(name);
  }
  return {k.begin(), k.end()};
}

std::optional<double> MetricsReport::mean(const std::string& key) const {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : runs) {
    if (const auto v = r.get(key)) {
      s += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

std::optional<double> MetricsReport::stddev(const std::string& key) const {
  const auto mu = mean(key);
  if (!mu) return std::nullopt;
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : runs) {
    if (const auto v = r.get(key)) {
      s += (*v - *mu) * (*v - *mu);
      ++n;
    }
  }
  if (n < 2) return 0.0;
  return std::sqrt(s / static_cast<double>(n - 1));
}

json MetricsReport::to_json() const {
  json j;
  j["n_runs"] = n_runs();
  json summary = json::object();
  for (const auto& k : keys()) {
    std::size_t n = 0;
    for (const auto& r : runs) n += r.get(k) ? 1 : 0;
    summary[k] = {{"mean", *mean(k)}, {"std", *stddev(k)}, {"n", n}};
  }
  j["summary"] = std::move(summary);
  json rs = json::array();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    rs.push_back({{"label", i < run_labels.size() ? run_labels[i] : std::to_string(i)}, {"metrics", runs[i].to_json()}});
  }
  j["runs"] = std::move(rs);
  return j;
}

MetricsReport MetricsReport::from_json(const json& j) {
  try {
    MetricsReport rep;
    for (const auto& r : j.at("runs")) {
      rep.run_labels.push_back(r.at("label").get<std::string>());
      RunMetrics m;
      m.values = r.at("metrics").get<std::map<std::string, double>>();
      rep.runs.push_back(std::move(m));
    }
    return rep;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("metrics report: ") + e.what());
  }
}

void MetricsReport::write_csv(const std::filesystem::path& path) const {
  data::CsvTable t;
  const auto ks = keys();
  t.header = {"run"};
  t.header.insert(t.header.end(), ks.begin(), ks.end());
  for (std::size_t i = 0; i < runs.size(); ++i) {
    std::vector<std::string> row{i < run_labels.size() ? run_labels[i] : std::to_string(i)};
    for (const auto& k : ks) {
      const auto v = runs[i].get(k);
      row.push_back(v ? data::format_double(*v) : "");
    }
    t.rows.push_back(std::move(row));
  }
  data::write_csv(path, t);
}

}  // namespace gcfn::metrics

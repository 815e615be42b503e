#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gcfn/cf_gan/cf_gan.hpp"
#include "gcfn/data/dataset.hpp"
#include "gcfn/fair_predictor/predictor.hpp"
#include "gcfn/nn/matrix.hpp"

namespace gcfn::metrics {

/// mean (h(x, m) - h(x, m_ref))².
double cf_metric(const fair::Predictor& h, const Matrix& x, const Matrix& m, const Matrix& m_ref);
/// CF against the simulator's ground-truth counterfactual. ValidationError when the
/// dataset has none (real data).
double cf_true(const fair::Predictor& h, const data::Dataset& ds);
/// CF against the generator's counterfactual slot.
double cf_gen(const fair::Predictor& h, const data::Dataset& ds, const gan::Generator& gen);

double accuracy(std::span<const int> y_true, std::span<const int> y_pred);
/// accuracy - gamma * cf.
double utility(double accuracy, double cf, double gamma);
/// {0.1, 0.2, ..., 1.0}
std::vector<double> default_gamma_grid();

struct NormalizedMse {
  double m_vs_cf = 0.0;   // always 1 by construction
  double m_vs_hat = 0.0;
  double cf_vs_hat = 0.0;
};

/// Pairwise MSEs divided by MSE(M, M_cf). NumericError when that normalizer is 0.
NormalizedMse normalized_mse(const Matrix& m, const Matrix& m_cf, const Matrix& m_hat);

struct Confusion {
  std::size_t n = 0, tp = 0, fp = 0, tn = 0, fn = 0;
  // Absent when the denominator is empty (e.g. FPR for a group without negatives).
  std::optional<double> acc, ppv, fpr, fnr;
};

struct ConfusionReport {
  Confusion overall;
  std::array<std::optional<Confusion>, 2> by_group;  // indexed by A; absent for an empty group
};

Confusion confusion(std::span<const int> y_true, std::span<const int> y_pred);
ConfusionReport confusion_metrics(std::span<const int> y_true, std::span<const int> y_pred, std::span<const int> a);

enum class Branch { kIncreasing, kDecreasing };

/// Empirical conditional CDFs of one scalar mediator per (covariate bin, A) cell, used to
/// build quantile-matching counterfactuals m' = F⁻¹_{a'}(F_a(m)) (or 1 - F_a(m)).
class QuantileOracle {
 public:
  struct Options {
    std::size_t n_bins = 10;        // equal-frequency bins for a continuous scalar covariate
    std::size_t max_exact_keys = 32;  // covariates with at most this many distinct rows bin by exact value
  };

  QuantileOracle(const Matrix& x, std::span<const int> a, std::span<const double> m, const Options& options);
  QuantileOracle(const Matrix& x, std::span<const int> a, std::span<const double> m)
      : QuantileOracle(x, a, m, Options{}) {}

  std::size_t bin_of(std::span<const double> x_row) const;
  std::size_t n_bins() const { return cells_.size(); }
  bool exact_bins() const { return exact_; }
  /// Empirical CDF at m in a cell: mid-ranks (i + 0.5) / n at the order statistics,
  /// linear interpolation between them, clamped outside.
  double cdf(std::size_t bin, int a, double m) const;
  double quantile(std::size_t bin, int a, double u) const;
  /// CoverageError when the (bin, a') cell is empty.
  double counterfactual(std::span<const double> x_row, int a, double m, Branch branch) const;
  double counterfactual(std::span<const double> x_row, int a, int a_target, double m, Branch branch) const;
  std::size_t cell_size(std::size_t bin, int a) const { return cells_.at(bin)[a != 0].size(); }

 private:
  const std::vector<double>& cell(std::size_t bin, int a) const;

  bool exact_ = false;
  std::vector<double> edges_;                           // interior edges, continuous case
  std::map<std::vector<double>, std::size_t> keys_;     // exact case
  std::vector<std::array<std::vector<double>, 2>> cells_;  // sorted mediator values
  // Interpolation knots per cell: distinct values and their mid-rank probabilities.
  std::vector<std::array<std::vector<double>, 2>> knot_v_, knot_p_;
};

/// Oracle counterfactuals for every row (flipped A) of a dataset with one mediator column.
std::vector<double> bgm_oracle_counterfactuals(const QuantileOracle& oracle, const Matrix& x,
                                               std::span<const int> a, std::span<const double> m, Branch branch);

struct HistogramRow {
  int group = 0;
  double bin_lo = 0.0, bin_hi = 0.0, density = 0.0;
};

struct Histogram {
  std::size_t n_bins = 0;
  std::vector<HistogramRow> rows;
  std::vector<int> empty_groups;  // requested groups without values; no rows emitted for them
};

/// Per-group normalized histograms of values in [0,1] (groups 0 and 1).
Histogram density_export(std::span<const double> values, std::span<const int> groups, std::size_t n_bins);
/// Half the L1 distance between the two groups' bin probabilities. ValidationError if a group is empty.
double tv_distance(const Histogram& hist);
void write_histogram_csv(const Histogram& hist, const std::filesystem::path& path);

struct BoundAudit {
  double cf = 0.0;
  double lipschitz = 0.0;
  double recon_error = 0.0;  // E||M_cf - M_hat||²
  double rcm = 0.0;
  double rhs = 0.0;          // 2 C² recon_error + 2 rcm
  bool holds = false;
};

/// Checks CF <= 2 C² E||M_cf - M_hat||² + 2 R_cm on the stored (standardized) scale.
BoundAudit bound_audit(const fair::Predictor& h, double lipschitz, const data::Dataset& ds,
                       const gan::Generator& gen);

/// One evaluation run, flattened to named scalars ("confusion.a1.fpr", "nmse.cf_vs_hat", ...).
/// Undefined quantities are simply absent.
struct RunMetrics {
  std::map<std::string, double> values;

  std::optional<double> get(const std::string& key) const;
  nlohmann::json to_json() const;
};

/// Evaluates a trained predictor on held-out data: accuracy, cf_gen, utility over `gammas`,
/// confusion rates; plus cf_true, normalized MSE (raw scale) and the bound audit when the
/// dataset carries ground-truth counterfactuals.
RunMetrics evaluate(const fair::PredictorBundle& bundle, const gan::Generator& gen, const data::Dataset& test,
                    const std::vector<double>& gammas = default_gamma_grid());

/// Aggregate over runs: per key mean and sample std, and the count of runs that have it.
struct MetricsReport {
  std::vector<RunMetrics> runs;
  std::vector<std::string> run_labels;  // e.g. "seed=3"

  std::size_t n_runs() const { return runs.size(); }
  std::optional<double> mean(const std::string& key) const;
  std::optional<double> stddev(const std::string& key) const;
  std::vector<std::string> keys() const;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
  /// One row per run, one column per metric; blank cells for absent values.
  void write_csv(const std::filesystem::path& path) const;
};

}  // namespace gcfn::metrics

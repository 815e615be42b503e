#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gcfn/data/schema.hpp"
#include "gcfn/nn/matrix.hpp"

namespace gcfn::data {

/// Per-column affine map applied to continuous columns: stored = (raw - mean) / scale.
/// One-hot columns keep mean 0 and scale 1.
struct Standardization {
  std::vector<double> x_mean, x_scale;
  std::vector<double> m_mean, m_scale;

  static Standardization identity(std::size_t x_width, std::size_t m_width);
  bool is_identity() const;

  void apply_x(Matrix& x) const;
  void invert_x(Matrix& x) const;
  void apply_m(Matrix& m) const;
  void invert_m(Matrix& m) const;
};

nlohmann::json standardization_to_json(const Standardization& s);
Standardization standardization_from_json(const nlohmann::json& j);

/// Realized exogenous noise of a simulator, one named column per noise source.
struct NoiseRecord {
  std::vector<std::string> names;
  Matrix values;

  std::size_t index(const std::string& name) const;
  double at(std::size_t row, const std::string& name) const;
};

struct Dataset {
  RoleSchema schema;
  std::vector<ColumnBlock> covariate_blocks;
  std::vector<ColumnBlock> mediator_blocks;
  Matrix x;
  std::vector<int> a;
  Matrix m;
  std::vector<int> y;
  std::optional<Matrix> m_cf;       // ground-truth counterfactual mediators (simulators only)
  std::optional<NoiseRecord> noise; // simulators only
  Standardization standardization;
  std::map<std::string, std::vector<double>> aux;
  std::vector<std::size_t> row_ids;  // index into the originating table
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t rows() const { return a.size(); }
  std::size_t x_width() const { return x.cols(); }
  std::size_t m_width() const { return m.cols(); }

  /// Throws ValidationError when row counts or value domains are inconsistent.
  void validate() const;
  Dataset subset(std::span<const std::size_t> idx) const;

  /// Mediators and counterfactual mediators mapped back to the raw scale.
  Matrix raw_m() const;
  std::optional<Matrix> raw_m_cf() const;
  Matrix raw_x() const;
};

struct SplitResult {
  Dataset train;
  Dataset test;
};

/// Seeded row shuffle into disjoint train/test parts (test size = round(n·f)).
/// Standardization statistics of continuous columns are fit on train and applied to both.
SplitResult split(const Dataset& ds, double test_fraction, std::uint64_t seed);

/// Fits standardization on `train` (raw scale) and applies it to both parts, for data that
/// ships with a fixed train/test split.
SplitResult standardize_pair(const Dataset& train, const Dataset& test);

/// Mean/scale of each continuous column of `raw` (scale 1 for one-hot or constant columns).
void fit_columns(const Matrix& raw, const std::vector<ColumnBlock>& blocks, std::vector<double>& mean,
                 std::vector<double>& scale);

}  // namespace gcfn::data

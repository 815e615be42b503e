#include "gcfn/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gcfn/errors.hpp"

namespace gcfn::data {
namespace {

void affine(Matrix& mat, const std::vector<double>& mean, const std::vector<double>& scale, bool forward) {
  if (mat.cols() != mean.size() || mat.cols() != scale.size()) {
    throw ShapeError("standardization width does not match matrix");
  }
  for (std::size_t r = 0; r < mat.rows(); ++r)
    for (std::size_t c = 0; c < mat.cols(); ++c) {
      mat(r, c) = forward ? (mat(r, c) - mean[c]) / scale[c] : mat(r, c) * scale[c] + mean[c];
    }
}

}  // namespace

Standardization Standardization::identity(std::size_t x_width, std::size_t m_width) {
  Standardization s;
  s.x_mean.assign(x_width, 0.0);
  s.x_scale.assign(x_width, 1.0);
  s.m_mean.assign(m_width, 0.0);
  s.m_scale.assign(m_width, 1.0);
  return s;
}

bool Standardization::is_identity() const {
  auto all = [](const std::vector<double>& v, double x) {
    return std::all_of(v.begin(), v.end(), [x](double e) { return e == x; });
  };
  return all(x_mean, 0.0) && all(m_mean, 0.0) && all(x_scale, 1.0) && all(m_scale, 1.0);
}

nlohmann::json standardization_to_json(const Standardization& s) {
  return {{"x_mean", s.x_mean}, {"x_scale", s.x_scale}, {"m_mean", s.m_mean}, {"m_scale", s.m_scale}};
}

Standardization standardization_from_json(const nlohmann::json& j) {
  try {
    Standardization s;
    s.x_mean = j.at("x_mean").get<std::vector<double>>();
    s.x_scale = j.at("x_scale").get<std::vector<double>>();
    s.m_mean = j.at("m_mean").get<std::vector<double>>();
    s.m_scale = j.at("m_scale").get<std::vector<double>>();
    if (s.x_mean.size() != s.x_scale.size() || s.m_mean.size() != s.m_scale.size()) {
      throw ValidationError("standardization: mean and scale lengths differ");
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("standardization: ") + e.what());
  }
}

void Standardization::apply_x(Matrix& x) const { affine(x, x_mean, x_scale, true); }
void Standardization::invert_x(Matrix& x) const { affine(x, x_mean, x_scale, false); }
void Standardization::apply_m(Matrix& m) const { affine(m, m_mean, m_scale, true); }
void Standardization::invert_m(Matrix& m) const { affine(m, m_mean, m_scale, false); }

std::size_t NoiseRecord::index(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ValidationError("noise record has no column '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

double NoiseRecord::at(std::size_t row, const std::string& name) const { return values(row, index(name)); }

void Dataset::validate() const {
  const std::size_t n = a.size();
  if (x.rows() != n || m.rows() != n || y.size() != n) {
    throw ValidationError("dataset: role columns have different row counts");
  }
  if (m_cf && (m_cf->rows() != n || m_cf->cols() != m.cols())) {
    throw ValidationError("dataset: counterfactual mediators do not match mediator shape");
  }
  if (noise && noise->values.rows() != n) throw ValidationError("dataset: noise record row count differs");
  if (!row_ids.empty() && row_ids.size() != n) throw ValidationError("dataset: row_ids length differs");
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i] != 0 && a[i] != 1) throw ValidationError("dataset: sensitive attribute not binary at row " + std::to_string(i));
    if (y[i] != 0 && y[i] != 1) throw ValidationError("dataset: target not binary at row " + std::to_string(i));
  }
  if (layout_width(mediator_blocks) != m.cols() || layout_width(covariate_blocks) != x.cols()) {
    throw ValidationError("dataset: column layout does not match matrix widths");
  }
  for (const auto& [name, col] : aux) {
    if (col.size() != n) throw ValidationError("dataset: auxiliary column '" + name + "' row count differs");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> idx) const {
  Dataset out;
  out.schema = schema;
  out.covariate_blocks = covariate_blocks;
  out.mediator_blocks = mediator_blocks;
  out.standardization = standardization;
  out.provenance = provenance;
  out.x = x.gather_rows(idx);
  out.m = m.gather_rows(idx);
  if (m_cf) out.m_cf = m_cf->gather_rows(idx);
  if (noise) out.noise = NoiseRecord{noise->names, noise->values.gather_rows(idx)};
  out.a.reserve(idx.size());
  out.y.reserve(idx.size());
  out.row_ids.reserve(idx.size());
  for (std::size_t i : idx) {
    out.a.push_back(a[i]);
    out.y.push_back(y[i]);
    out.row_ids.push_back(row_ids.empty() ? i : row_ids[i]);
  }
  for (const auto& [name, col] : aux) {
    std::vector<double> v;
    v.reserve(idx.size());
    for (std::size_t i : idx) v.push_back(col[i]);
    out.aux.emplace(name, std::move(v));
  }
  return out;
}

Matrix Dataset::raw_m() const {
  Matrix r = m;
  standardization.invert_m(r);
  return r;
}

std::optional<Matrix> Dataset::raw_m_cf() const {
  if (!m_cf) return std::nullopt;
  Matrix r = *m_cf;
  standardization.invert_m(r);
  return r;
}

Matrix Dataset::raw_x() const {
  Matrix r = x;
  standardization.invert_x(r);
  return r;
}

void fit_columns(const Matrix& raw, const std::vector<ColumnBlock>& blocks, std::vector<double>& mean,
                 std::vector<double>& scale) {
  mean.assign(raw.cols(), 0.0);
  scale.assign(raw.cols(), 1.0);
  const double n = static_cast<double>(raw.rows());
  if (raw.rows() == 0) return;
  for (const auto& b : blocks) {
    if (b.kind != BlockKind::kContinuous) continue;
    const std::size_t c = b.offset;
    double s = 0.0;
    for (std::size_t r = 0; r < raw.rows(); ++r) s += raw(r, c);
    const double mu = s / n;
    double ss = 0.0;
    for (std::size_t r = 0; r < raw.rows(); ++r) ss += (raw(r, c) - mu) * (raw(r, c) - mu);
    const double sd = std::sqrt(ss / n);
    mean[c] = mu;
    scale[c] = sd > 0.0 ? sd : 1.0;
  }
}

SplitResult split(const Dataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ValidationError("split: test_fraction must lie in (0, 1)");
  }
  const std::size_t n = ds.rows();
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
  if (n_test == 0 || n_test >= n) {
    throw ValidationError("split: " + std::to_string(n) + " rows with fraction " + std::to_string(test_fraction) +
                          " leaves an empty part");
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::size_t> train_idx(perm.begin(), perm.end() - static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> test_idx(perm.end() - static_cast<std::ptrdiff_t>(n_test), perm.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());

  SplitResult out = standardize_pair(ds.subset(train_idx), ds.subset(test_idx));
  for (Dataset* part : {&out.train, &out.test}) {
    part->provenance["split"] = {{"seed", seed}, {"test_fraction", test_fraction}};
  }
  return out;
}

namespace {

Dataset to_raw(const Dataset& ds) {
  Dataset raw = ds;
  raw.x = ds.raw_x();
  raw.m = ds.raw_m();
  raw.m_cf = ds.raw_m_cf();
  raw.standardization = Standardization::identity(ds.x_width(), ds.m_width());
  return raw;
}

}  // namespace

SplitResult standardize_pair(const Dataset& train, const Dataset& test) {
  if (schema_to_json(train.schema) != schema_to_json(test.schema) || train.x_width() != test.x_width() ||
      train.m_width() != test.m_width()) {
    throw ValidationError("standardize_pair: train and test were read under different schemas");
  }
  // Work on the raw scale, then fit on train only.
  SplitResult out{to_raw(train), to_raw(test)};
  Standardization st;
  fit_columns(out.train.x, train.covariate_blocks, st.x_mean, st.x_scale);
  fit_columns(out.train.m, train.mediator_blocks, st.m_mean, st.m_scale);
  for (Dataset* part : {&out.train, &out.test}) {
    st.apply_x(part->x);
    st.apply_m(part->m);
    if (part->m_cf) st.apply_m(*part->m_cf);
    part->standardization = st;
  }
  return out;
}

}  // namespace gcfn::data

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace gcfn {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  /// Single-row matrix from a list of values.
  static Matrix row(std::vector<double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row_span(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  bool all_finite() const noexcept;
  void fill(double v);

  Matrix transposed() const;
  /// Rows picked by index, in the given order.
  Matrix gather_rows(std::span<const std::size_t> idx) const;
  /// Columns [begin, begin + count).
  Matrix col_block(std::size_t begin, std::size_t count) const;
  void set_col_block(std::size_t begin, const Matrix& block);

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// a (n×k) · b (k×m)
Matrix matmul(const Matrix& a, const Matrix& b);
/// a (n×k) · bᵀ where b is (m×k)
Matrix matmul_bt(const Matrix& a, const Matrix& b);
/// aᵀ · b where a is (k×n), b is (k×m)
Matrix matmul_at(const Matrix& a, const Matrix& b);

/// Horizontal concatenation; all parts share the row count.
Matrix hconcat(std::initializer_list<const Matrix*> parts);

/// Column vector (n×1) from values.
Matrix column(std::span<const double> values);

void require_same_shape(const Matrix& a, const Matrix& b, const std::string& what);

/// Mean over rows of the squared euclidean row distance.
double mean_row_sq_dist(const Matrix& a, const Matrix& b);

}  // namespace gcfn

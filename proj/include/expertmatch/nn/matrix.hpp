#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace em::nn {

// Dense row-major matrix of doubles. The whole engine works in 64-bit.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  void fill(double v);
  bool all_finite() const noexcept;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Throws kNonFinite naming `what` if any entry is NaN or infinite.
void require_finite(const Matrix& m, const char* what);
void require_same_shape(const Matrix& a, const Matrix& b, const char* what);

// out = a * b^T  (a: n x k, b: m x k)
Matrix matmul_transposed(const Matrix& a, const Matrix& b);
// Same product, computed one row at a time through a fixed kernel: each
// output row depends only on the matching input row, never on batch size.
Matrix rowwise_matmul_transposed(const Matrix& a, const Matrix& b);
// out = a * b    (a: n x k, b: k x m)
Matrix matmul(const Matrix& a, const Matrix& b);
// out += a^T * b (a: n x r, b: n x c, out: r x c)
void accumulate_transposed_product(const Matrix& a, const Matrix& b, Matrix& out);

}  // namespace em::nn

#include "expertmatch/nn/matrix.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>

#include "expertmatch/error.hpp"

namespace em::nn {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap view(const Matrix& m) {
  return ConstMap(m.values().data(), static_cast<Eigen::Index>(m.rows()),
                  static_cast<Eigen::Index>(m.cols()));
}

MutMap view(Matrix& m) {
  return MutMap(m.values().data(), static_cast<Eigen::Index>(m.rows()),
                static_cast<Eigen::Index>(m.cols()));
}

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    fail(ErrorCode::kDimension, "matrix data length " + std::to_string(data_.size()) +
                                    " does not match " + std::to_string(rows) + "x" +
                                    std::to_string(cols));
  }
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
  const std::size_t cols = rows.empty() ? 0 : rows.front().size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) fail(ErrorCode::kDimension, "ragged rows in Matrix::from_rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Matrix(rows.size(), cols, std::move(data));
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_finite(const Matrix& m, const char* what) {
  if (!m.all_finite()) fail(ErrorCode::kNonFinite, std::string("non-finite values in ") + what);
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    fail(ErrorCode::kDimension,
         std::string(what) + ": shape mismatch " + shape(a) + " vs " + shape(b));
  }
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    fail(ErrorCode::kDimension, "matmul_transposed: " + shape(a) + " * (" + shape(b) + ")^T");
  }
  Matrix out(a.rows(), b.rows());
  view(out).noalias() = view(a) * view(b).transpose();
  return out;
}

Matrix rowwise_matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    fail(ErrorCode::kDimension, "matmul_transposed: " + shape(a) + " * (" + shape(b) + ")^T");
  }
  Matrix out(a.rows(), b.rows());
  const ConstMap weights = view(b);
  Eigen::VectorXd x(static_cast<Eigen::Index>(a.cols()));
  Eigen::VectorXd y(static_cast<Eigen::Index>(b.rows()));
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto src = a.row(r);
    std::copy(src.begin(), src.end(), x.data());
    y.noalias() = weights * x;
    std::copy(y.data(), y.data() + y.size(), out.row(r).begin());
  }
  return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    fail(ErrorCode::kDimension, "matmul: " + shape(a) + " * " + shape(b));
  }
  Matrix out(a.rows(), b.cols());
  view(out).noalias() = view(a) * view(b);
  return out;
}

void accumulate_transposed_product(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols()) {
    fail(ErrorCode::kDimension, "accumulate_transposed_product: (" + shape(a) + ")^T * " +
                                    shape(b) + " into " + shape(out));
  }
  view(out).noalias() += view(a).transpose() * view(b);
}

}  // namespace em::nn

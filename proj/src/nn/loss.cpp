#include "expertmatch/nn/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "expertmatch/error.hpp"

namespace em::nn {

LossResult mse_loss(const Matrix& prediction, const Matrix& target) {
  require_same_shape(prediction, target, "mse_loss");
  if (prediction.empty()) fail(ErrorCode::kDimension, "mse_loss on an empty matrix");
  const auto p = prediction.values();
  const auto t = target.values();
  const double count = static_cast<double>(p.size());
  LossResult out{0.0, Matrix(prediction.rows(), prediction.cols())};
  auto g = out.grad.values();
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - t[i];
    sum += d * d;
    g[i] = 2.0 * d / count;
  }
  out.loss = sum / count;
  if (!std::isfinite(out.loss)) fail(ErrorCode::kNonFinite, "mse_loss is not finite");
  return out;
}

Matrix softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto z = logits.row(r);
    auto y = out.row(r);
    const double max = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) {
      y[c] = std::exp(z[c] - max);
      denom += y[c];
    }
    for (double& v : y) v /= denom;
  }
  return out;
}

LossResult softmax_cross_entropy(const Matrix& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows()) {
    fail(ErrorCode::kDimension, "softmax_cross_entropy: " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(logits.rows()) + " rows");
  }
  if (logits.empty()) fail(ErrorCode::kDimension, "softmax_cross_entropy on an empty matrix");
  const std::size_t classes = logits.cols();
  const double batch = static_cast<double>(logits.rows());
  LossResult out{0.0, Matrix(logits.rows(), classes)};
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      fail(ErrorCode::kInvalidArgument, "label " + std::to_string(label) + " outside [0, " +
                                            std::to_string(classes) + ")");
    }
    const auto z = logits.row(r);
    auto g = out.grad.row(r);
    const double max = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      g[c] = std::exp(z[c] - max);
      denom += g[c];
    }
    const double log_denom = std::log(denom);
    total += log_denom - (z[static_cast<std::size_t>(label)] - max);
    for (std::size_t c = 0; c < classes; ++c) {
      const double p = g[c] / denom;
      g[c] = (p - (static_cast<int>(c) == label ? 1.0 : 0.0)) / batch;
    }
  }
  out.loss = total / batch;
  if (!std::isfinite(out.loss)) fail(ErrorCode::kNonFinite, "softmax_cross_entropy is not finite");
  return out;
}

}  // namespace em::nn

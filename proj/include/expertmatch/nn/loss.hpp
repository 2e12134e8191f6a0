#pragma once

#include <span>

#include "expertmatch/nn/matrix.hpp"

namespace em::nn {

struct LossResult {
  double loss = 0.0;
  Matrix grad;  // d loss / d prediction, same shape as the prediction
};

// Mean over every entry of (prediction - target)^2.
LossResult mse_loss(const Matrix& prediction, const Matrix& target);

// Mean negative log-likelihood of softmax(logits) at `labels`.
LossResult softmax_cross_entropy(const Matrix& logits, std::span<const int> labels);

// Row-wise numerically stable softmax.
Matrix softmax(const Matrix& logits);

}  // namespace em::nn

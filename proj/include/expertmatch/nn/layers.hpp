#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "expertmatch/nn/matrix.hpp"
#include "expertmatch/rng.hpp"

namespace em::nn {

enum class Mode { kTrain, kEval };

// A trainable tensor and its accumulated gradient, as seen by the optimizer.
struct ParamRef {
  Matrix* value;
  Matrix* grad;
};

enum class InitScheme { kHeUniform, kXavierUniform };

// Fully connected layer: y = x W^T + b, W is out x in.
class DenseLayer {
 public:
  DenseLayer() = default;
  DenseLayer(std::size_t in_dim, std::size_t out_dim);
  DenseLayer(Matrix weights, Matrix bias);

  std::size_t in_dim() const noexcept { return weights_.cols(); }
  std::size_t out_dim() const noexcept { return weights_.rows(); }

  void initialize(InitScheme scheme, Rng& rng);

  // Training path: caches the input for backward().
  Matrix forward(const Matrix& input);
  // Inference path: no state is touched.
  Matrix infer(const Matrix& input) const;
  // Accumulates dW, db and returns dL/dinput.
  Matrix backward(const Matrix& grad_out);

  void zero_grad();
  void clear_cache() { cached_input_.reset(); }
  std::vector<ParamRef> parameters();

  const Matrix& weights() const noexcept { return weights_; }
  const Matrix& bias() const noexcept { return bias_; }
  Matrix& weights() noexcept { return weights_; }
  Matrix& bias() noexcept { return bias_; }
  const Matrix& weight_grad() const noexcept { return weight_grad_; }
  const Matrix& bias_grad() const noexcept { return bias_grad_; }

 private:
  Matrix weights_;
  Matrix bias_;  // 1 x out
  Matrix weight_grad_;
  Matrix bias_grad_;
  std::optional<Matrix> cached_input_;
};

// Per-feature batch normalization over the batch dimension.
class BatchNorm1d {
 public:
  static constexpr double kDefaultMomentum = 0.1;
  static constexpr double kDefaultEpsilon = 1e-5;

  BatchNorm1d() = default;
  explicit BatchNorm1d(std::size_t features, double momentum = kDefaultMomentum,
                       double epsilon = kDefaultEpsilon);

  std::size_t features() const noexcept { return gamma_.cols(); }
  Mode mode() const noexcept { return mode_; }
  void set_mode(Mode mode) noexcept { mode_ = mode; }
  double momentum() const noexcept { return momentum_; }
  double epsilon() const noexcept { return epsilon_; }

  // Train mode normalizes with batch statistics (biased variance) and folds
  // them into the running statistics (unbiased variance). Eval mode uses the
  // running statistics. Train mode needs at least two rows.
  Matrix forward(const Matrix& input);
  // Always uses running statistics; const.
  Matrix infer(const Matrix& input) const;
  Matrix backward(const Matrix& grad_out);

  void zero_grad();
  void clear_cache() { cache_.reset(); }
  std::vector<ParamRef> parameters();

  const Matrix& gamma() const noexcept { return gamma_; }
  const Matrix& beta() const noexcept { return beta_; }
  Matrix& gamma() noexcept { return gamma_; }
  Matrix& beta() noexcept { return beta_; }
  const std::vector<double>& running_mean() const noexcept { return running_mean_; }
  const std::vector<double>& running_var() const noexcept { return running_var_; }
  const Matrix& gamma_grad() const noexcept { return gamma_grad_; }
  const Matrix& beta_grad() const noexcept { return beta_grad_; }

  // Restores persisted state. Shapes must agree with `features`.
  void restore(Matrix gamma, Matrix beta, std::vector<double> running_mean,
               std::vector<double> running_var, double momentum, double epsilon);

 private:
  struct Cache {
    Mode mode;
    Matrix normalized;             // x_hat
    std::vector<double> inv_std;   // per feature
  };

  Matrix gamma_;
  Matrix beta_;
  Matrix gamma_grad_;
  Matrix beta_grad_;
  std::vector<double> running_mean_;
  std::vector<double> running_var_;
  double momentum_ = kDefaultMomentum;
  double epsilon_ = kDefaultEpsilon;
  Mode mode_ = Mode::kTrain;
  std::optional<Cache> cache_;
};

enum class ActivationKind { kRelu, kSigmoid, kIdentity };

const char* activation_name(ActivationKind kind) noexcept;

double activate(ActivationKind kind, double x) noexcept;

class Activation {
 public:
  Activation() = default;
  explicit Activation(ActivationKind kind) : kind_(kind) {}

  ActivationKind kind() const noexcept { return kind_; }

  Matrix forward(const Matrix& input);
  Matrix infer(const Matrix& input) const;
  Matrix backward(const Matrix& grad_out) const;
  void clear_cache() { cached_input_.reset(); cached_output_.reset(); }

 private:
  ActivationKind kind_ = ActivationKind::kIdentity;
  std::optional<Matrix> cached_input_;
  std::optional<Matrix> cached_output_;
};

}  // namespace em::nn

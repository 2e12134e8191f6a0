#include "expertmatch/nn/layers.hpp"

#include <cmath>
#include <string>

#include "expertmatch/error.hpp"

namespace em::nn {

// ---- DenseLayer -------------------------------------------------------------

DenseLayer::DenseLayer(std::size_t in_dim, std::size_t out_dim)
    : weights_(out_dim, in_dim),
      bias_(1, out_dim),
      weight_grad_(out_dim, in_dim),
      bias_grad_(1, out_dim) {
  if (in_dim == 0 || out_dim == 0) fail(ErrorCode::kDimension, "dense layer with zero dimension");
}

DenseLayer::DenseLayer(Matrix weights, Matrix bias)
    : weights_(std::move(weights)), bias_(std::move(bias)) {
  if (bias_.rows() != 1 || bias_.cols() != weights_.rows()) {
    fail(ErrorCode::kDimension, "dense bias must be 1 x " + std::to_string(weights_.rows()));
  }
  weight_grad_ = Matrix(weights_.rows(), weights_.cols());
  bias_grad_ = Matrix(1, bias_.cols());
}

void DenseLayer::initialize(InitScheme scheme, Rng& rng) {
  const double fan_in = static_cast<double>(in_dim());
  const double fan_out = static_cast<double>(out_dim());
  const double limit = scheme == InitScheme::kHeUniform ? std::sqrt(6.0 / fan_in)
                                                        : std::sqrt(6.0 / (fan_in + fan_out));
  for (double& w : weights_.values()) w = rng.uniform(-limit, limit);
  bias_.fill(0.0);
}

namespace {

void add_bias(Matrix& out, const Matrix& bias) {
  const auto b = bias.row(0);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += b[c];
  }
  require_finite(out, "dense layer output");
}

}  // namespace

Matrix DenseLayer::infer(const Matrix& input) const {
  if (input.cols() != in_dim()) {
    fail(ErrorCode::kDimension, "dense_forward: input has " + std::to_string(input.cols()) +
                                    " columns, layer expects " + std::to_string(in_dim()));
  }
  Matrix out = rowwise_matmul_transposed(input, weights_);
  add_bias(out, bias_);
  return out;
}

Matrix DenseLayer::forward(const Matrix& input) {
  if (input.cols() != in_dim()) {
    fail(ErrorCode::kDimension, "dense_forward: input has " + std::to_string(input.cols()) +
                                    " columns, layer expects " + std::to_string(in_dim()));
  }
  Matrix out = matmul_transposed(input, weights_);
  add_bias(out, bias_);
  cached_input_ = input;
  return out;
}

Matrix DenseLayer::backward(const Matrix& grad_out) {
  if (!cached_input_) fail(ErrorCode::kState, "dense_backward called before forward");
  const Matrix& input = *cached_input_;
  if (grad_out.rows() != input.rows() || grad_out.cols() != out_dim()) {
    fail(ErrorCode::kDimension, "dense_backward: gradient shape does not match forward output");
  }
  accumulate_transposed_product(grad_out, input, weight_grad_);
  auto bg = bias_grad_.row(0);
  for (std::size_t r = 0; r < grad_out.rows(); ++r) {
    const auto g = grad_out.row(r);
    for (std::size_t c = 0; c < g.size(); ++c) bg[c] += g[c];
  }
  return matmul(grad_out, weights_);
}

void DenseLayer::zero_grad() {
  weight_grad_.fill(0.0);
  bias_grad_.fill(0.0);
}

std::vector<ParamRef> DenseLayer::parameters() {
  return {{&weights_, &weight_grad_}, {&bias_, &bias_grad_}};
}

// ---- BatchNorm1d ------------------------------------------------------------

BatchNorm1d::BatchNorm1d(std::size_t features, double momentum, double epsilon)
    : gamma_(1, features, 1.0),
      beta_(1, features, 0.0),
      gamma_grad_(1, features),
      beta_grad_(1, features),
      running_mean_(features, 0.0),
      running_var_(features, 1.0),
      momentum_(momentum),
      epsilon_(epsilon) {
  if (features == 0) fail(ErrorCode::kDimension, "batch norm with zero features");
  if (!(momentum > 0.0 && momentum < 1.0)) {
    fail(ErrorCode::kInvalidArgument, "batch norm momentum must lie in (0, 1)");
  }
  if (!(epsilon > 0.0)) fail(ErrorCode::kInvalidArgument, "batch norm epsilon must be positive");
}

void BatchNorm1d::restore(Matrix gamma, Matrix beta, std::vector<double> running_mean,
                          std::vector<double> running_var, double momentum, double epsilon) {
  const std::size_t f = gamma.cols();
  if (gamma.rows() != 1 || beta.rows() != 1 || beta.cols() != f || running_mean.size() != f ||
      running_var.size() != f) {
    fail(ErrorCode::kDimension, "batch norm state has inconsistent shapes");
  }
  for (double v : running_var) {
    if (!(v >= 0.0)) fail(ErrorCode::kInvalidArgument, "batch norm running variance is negative");
  }
  *this = BatchNorm1d(f, momentum, epsilon);
  gamma_ = std::move(gamma);
  beta_ = std::move(beta);
  running_mean_ = std::move(running_mean);
  running_var_ = std::move(running_var);
}

Matrix BatchNorm1d::infer(const Matrix& input) const {
  if (input.cols() != features()) {
    fail(ErrorCode::kDimension, "batchnorm_forward: expected " + std::to_string(features()) +
                                    " features, got " + std::to_string(input.cols()));
  }
  Matrix out(input.rows(), input.cols());
  const auto g = gamma_.row(0);
  const auto b = beta_.row(0);
  for (std::size_t r = 0; r < input.rows(); ++r) {
    const auto x = input.row(r);
    auto y = out.row(r);
    for (std::size_t c = 0; c < x.size(); ++c) {
      y[c] = (x[c] - running_mean_[c]) / std::sqrt(running_var_[c] + epsilon_) * g[c] + b[c];
    }
  }
  require_finite(out, "batch norm output");
  return out;
}

Matrix BatchNorm1d::forward(const Matrix& input) {
  if (mode_ == Mode::kEval) {
    Matrix out = infer(input);
    Cache cache{Mode::kEval, Matrix(input.rows(), input.cols()), std::vector<double>(features())};
    for (std::size_t c = 0; c < features(); ++c) {
      cache.inv_std[c] = 1.0 / std::sqrt(running_var_[c] + epsilon_);
    }
    for (std::size_t r = 0; r < input.rows(); ++r) {
      const auto x = input.row(r);
      auto xh = cache.normalized.row(r);
      for (std::size_t c = 0; c < x.size(); ++c) xh[c] = (x[c] - running_mean_[c]) * cache.inv_std[c];
    }
    cache_ = std::move(cache);
    return out;
  }
  if (input.cols() != features()) {
    fail(ErrorCode::kDimension, "batchnorm_forward: expected " + std::to_string(features()) +
                                    " features, got " + std::to_string(input.cols()));
  }
  const std::size_t n = input.rows();
  if (n < 2) fail(ErrorCode::kInvalidArgument, "batch norm in train mode needs a batch of at least 2");

  const std::size_t f = features();
  std::vector<double> mean(f, 0.0);
  std::vector<double> var(f, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const auto x = input.row(r);
    for (std::size_t c = 0; c < f; ++c) mean[c] += x[c];
  }
  for (double& m : mean) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto x = input.row(r);
    for (std::size_t c = 0; c < f; ++c) {
      const double d = x[c] - mean[c];
      var[c] += d * d;
    }
  }
  for (double& v : var) v /= static_cast<double>(n);

  Cache cache{Mode::kTrain, Matrix(n, f), std::vector<double>(f)};
  for (std::size_t c = 0; c < f; ++c) cache.inv_std[c] = 1.0 / std::sqrt(var[c] + epsilon_);

  Matrix out(n, f);
  const auto g = gamma_.row(0);
  const auto b = beta_.row(0);
  for (std::size_t r = 0; r < n; ++r) {
    const auto x = input.row(r);
    auto xh = cache.normalized.row(r);
    auto y = out.row(r);
    for (std::size_t c = 0; c < f; ++c) {
      xh[c] = (x[c] - mean[c]) * cache.inv_std[c];
      y[c] = xh[c] * g[c] + b[c];
    }
  }
  require_finite(out, "batch norm output");

  const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
  for (std::size_t c = 0; c < f; ++c) {
    running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * mean[c];
    running_var_[c] = (1.0 - momentum_) * running_var_[c] + momentum_ * var[c] * unbias;
  }
  cache_ = std::move(cache);
  return out;
}

Matrix BatchNorm1d::backward(const Matrix& grad_out) {
  if (!cache_) fail(ErrorCode::kState, "batchnorm backward called before forward");
  const std::size_t f = features();
  if (grad_out.cols() != f) fail(ErrorCode::kDimension, "batchnorm backward: gradient width");
  const std::size_t n = grad_out.rows();
  const auto g = gamma_.row(0);
  auto gg = gamma_grad_.row(0);
  auto bg = beta_grad_.row(0);
  Matrix grad_in(n, f);

  const Matrix& xh = cache_->normalized;
  if (xh.rows() != n) fail(ErrorCode::kDimension, "batchnorm backward: gradient batch size");

  if (cache_->mode == Mode::kEval) {
    // Running statistics are constants: the map is affine per feature.
    for (std::size_t r = 0; r < n; ++r) {
      const auto go = grad_out.row(r);
      const auto x = xh.row(r);
      auto gi = grad_in.row(r);
      for (std::size_t c = 0; c < f; ++c) {
        bg[c] += go[c];
        gg[c] += go[c] * x[c];
        gi[c] = go[c] * g[c] * cache_->inv_std[c];
      }
    }
    return grad_in;
  }

  std::vector<double> sum_g(f, 0.0);
  std::vector<double> sum_g_xh(f, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const auto go = grad_out.row(r);
    const auto x = xh.row(r);
    for (std::size_t c = 0; c < f; ++c) {
      sum_g[c] += go[c];
      sum_g_xh[c] += go[c] * x[c];
    }
  }
  for (std::size_t c = 0; c < f; ++c) {
    bg[c] += sum_g[c];
    gg[c] += sum_g_xh[c];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto go = grad_out.row(r);
    const auto x = xh.row(r);
    auto gi = grad_in.row(r);
    for (std::size_t c = 0; c < f; ++c) {
      gi[c] = g[c] * cache_->inv_std[c] *
              (go[c] - inv_n * sum_g[c] - x[c] * inv_n * sum_g_xh[c]);
    }
  }
  return grad_in;
}

void BatchNorm1d::zero_grad() {
  gamma_grad_.fill(0.0);
  beta_grad_.fill(0.0);
}

std::vector<ParamRef> BatchNorm1d::parameters() {
  return {{&gamma_, &gamma_grad_}, {&beta_, &beta_grad_}};
}

// ---- Activation -------------------------------------------------------------

const char* activation_name(ActivationKind kind) noexcept {
  switch (kind) {
    case ActivationKind::kRelu: return "relu";
    case ActivationKind::kSigmoid: return "sigmoid";
    case ActivationKind::kIdentity: return "identity";
  }
  return "unknown";
}

double activate(ActivationKind kind, double x) noexcept {
  switch (kind) {
    case ActivationKind::kRelu: return x > 0.0 ? x : 0.0;
    case ActivationKind::kSigmoid:
      if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
      else {
        const double e = std::exp(x);
        return e / (1.0 + e);
      }
    case ActivationKind::kIdentity: return x;
  }
  return x;
}

Matrix Activation::infer(const Matrix& input) const {
  Matrix out(input.rows(), input.cols());
  const auto in = input.values();
  auto o = out.values();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = activate(kind_, in[i]);
  return out;
}

Matrix Activation::forward(const Matrix& input) {
  Matrix out = infer(input);
  cached_input_ = input;
  cached_output_ = out;
  return out;
}

Matrix Activation::backward(const Matrix& grad_out) const {
  if (!cached_input_) fail(ErrorCode::kState, "activation backward called before forward");
  require_same_shape(grad_out, *cached_input_, "activation backward");
  Matrix grad_in(grad_out.rows(), grad_out.cols());
  const auto go = grad_out.values();
  const auto x = cached_input_->values();
  const auto y = cached_output_->values();
  auto gi = grad_in.values();
  for (std::size_t i = 0; i < go.size(); ++i) {
    switch (kind_) {
      case ActivationKind::kRelu: gi[i] = x[i] > 0.0 ? go[i] : 0.0; break;
      case ActivationKind::kSigmoid: gi[i] = go[i] * y[i] * (1.0 - y[i]); break;
      case ActivationKind::kIdentity: gi[i] = go[i]; break;
    }
  }
  return grad_in;
}

}  // namespace em::nn

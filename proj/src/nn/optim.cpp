#include "expertmatch/nn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "expertmatch/error.hpp"

namespace em::nn {

void adam_step(std::span<const ParamRef> params, AdamState& state, double lr) {
  for (const auto& p : params) {
    require_same_shape(*p.value, *p.grad, "adam_step");
    if (!p.grad->all_finite()) fail(ErrorCode::kNonFinite, "adam_step: non-finite gradient");
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.value->rows(), p.value->cols());
      state.second_moment.emplace_back(p.value->rows(), p.value->cols());
    }
  }
  if (state.first_moment.size() != params.size()) {
    fail(ErrorCode::kDimension, "adam_step: parameter list changed between steps");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(*params[i].value, state.first_moment[i], "adam_step moments");
  }

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].value->values();
    const auto g = params[i].grad->values();
    auto m = state.first_moment[i].values();
    auto v = state.second_moment[i].values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      w[j] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

void validate(const TrainConfig& config) {
  if (!(config.initial_lr > 0.0) || !std::isfinite(config.initial_lr)) {
    fail(ErrorCode::kInvalidArgument, "initial learning rate must be positive");
  }
  if (!(config.decay_factor > 0.0)) fail(ErrorCode::kInvalidArgument, "decay factor must be positive");
  if (config.decay_every == 0) fail(ErrorCode::kInvalidArgument, "decay_every must be positive");
  if (config.max_epochs == 0) fail(ErrorCode::kInvalidArgument, "max_epochs must be positive");
  if (config.batch_size < 2) fail(ErrorCode::kInvalidArgument, "batch size must be at least 2");
}

double lr_at_epoch(const TrainConfig& config, std::size_t epoch) {
  if (epoch >= config.max_epochs) {
    fail(ErrorCode::kInvalidArgument, "epoch " + std::to_string(epoch) + " beyond max_epochs " +
                                          std::to_string(config.max_epochs));
  }
  const auto steps = static_cast<double>(epoch / config.decay_every);
  return config.initial_lr * std::pow(config.decay_factor, steps);
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size,
                                                   Rng& rng) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const std::size_t end = std::min(count, start + batch_size);
    if (end - start == 1 && !batches.empty()) {
      batches.back().push_back(order[start]);
    } else {
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                           order.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  return batches;
}

}  // namespace em::nn

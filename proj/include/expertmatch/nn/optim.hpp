#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "expertmatch/nn/layers.hpp"
#include "expertmatch/nn/matrix.hpp"

namespace em::nn {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step_count = 0;
  std::vector<Matrix> first_moment;   // lazily shaped on the first step
  std::vector<Matrix> second_moment;
};

// One bias-corrected Adam update. Gradients are checked for finiteness
// before anything is written; on failure parameters and state are untouched.
void adam_step(std::span<const ParamRef> params, AdamState& state, double lr);

struct TrainConfig {
  double initial_lr = 1e-2;
  double decay_factor = 0.1;
  std::size_t decay_every = 15;
  std::size_t max_epochs = 45;
  std::size_t batch_size = 128;
  std::uint64_t seed = 1;
};

void validate(const TrainConfig& config);

// initial_lr * decay_factor^floor(epoch / decay_every)
double lr_at_epoch(const TrainConfig& config, std::size_t epoch);

// Shuffled minibatch index lists for one epoch. A trailing batch of a single
// sample is merged into the previous batch so train-mode batch norm always
// sees at least two rows.
std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size,
                                                   Rng& rng);

}  // namespace em::nn

#pragma once

#include <cstddef>
#include <variant>
#include <vector>

#include "expertmatch/nn/layers.hpp"
#include "expertmatch/nn/matrix.hpp"

namespace em::nn {

using Layer = std::variant<DenseLayer, BatchNorm1d, Activation>;

// Ordered stack of layers. forward()/backward() are the training path;
// infer() never mutates and is safe to call concurrently.
class Network {
 public:
  Network() = default;
  explicit Network(std::vector<Layer> layers) : layers_(std::move(layers)) {}

  std::size_t layer_count() const noexcept { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  Layer& layer(std::size_t i) { return layers_.at(i); }

  void set_mode(Mode mode);

  Matrix forward(const Matrix& input);
  Matrix backward(const Matrix& grad_out);
  // Runs layers [begin, end).
  Matrix infer(const Matrix& input, std::size_t begin, std::size_t end) const;
  Matrix infer(const Matrix& input) const { return infer(input, 0, layers_.size()); }

  void zero_grad();
  void clear_caches();
  std::vector<ParamRef> parameters();

  friend bool operator==(const Network& a, const Network& b);

 private:
  std::vector<Layer> layers_;
};

}  // namespace em::nn

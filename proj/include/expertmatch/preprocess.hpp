#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace em {

inline constexpr std::size_t kSampleDim = 784;
inline constexpr std::size_t kImageSide = 28;

// Canonical routed unit: exactly 784 finite values.
class Sample {
 public:
  Sample() : values_(kSampleDim, 0.0) {}
  explicit Sample(std::vector<double> values, std::optional<int> label = std::nullopt);

  std::span<const double> values() const noexcept { return values_; }
  const std::vector<double>& storage() const noexcept { return values_; }
  std::optional<int> label() const noexcept { return label_; }
  void set_label(std::optional<int> label) noexcept { label_ = label; }

  friend bool operator==(const Sample&, const Sample&) = default;

 private:
  std::vector<double> values_;
  std::optional<int> label_;
};

// Image of height x width x channels, stored row-major with interleaved
// channels. `max_value` is 255 for 8-bit data and 1 for real-valued data.
struct RawImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<double> pixels;
  double max_value = 255.0;

  static RawImage from_bytes(std::size_t height, std::size_t width, std::size_t channels,
                             std::span<const unsigned char> bytes);
};

// Grayscale (luminance for 3+ channels), corner-aligned bilinear resize to
// 28x28, scale to [0, 1], row-major flatten.
Sample image_to_sample(const RawImage& image);

// output[i] = mean(input[floor(i*L/n) .. ceil((i+1)*L/n)))
std::vector<double> adaptive_avg_pool_1d(std::span<const double> input,
                                         std::size_t target = kSampleDim);

inline Sample vector_to_sample(std::span<const double> input) {
  return Sample(adaptive_avg_pool_1d(input, kSampleDim));
}

// Per-feature standardization statistics.
struct Standardization {
  std::vector<double> mean;
  std::vector<double> stddev;

  friend bool operator==(const Standardization&, const Standardization&) = default;
};

// (v - mean) / stddev elementwise; every stddev entry must be positive.
Sample standardize(const Sample& sample, const Standardization& stats);

// Population statistics over `samples`. Features whose spread is below
// `min_stddev` get stddev 1 so they pass through centred but unscaled.
Standardization fit_standardization(std::span<const Sample> samples, double min_stddev = 1e-8);

}  // namespace em

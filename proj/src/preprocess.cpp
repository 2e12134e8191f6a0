#include "expertmatch/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "expertmatch/error.hpp"

namespace em {

Sample::Sample(std::vector<double> values, std::optional<int> label)
    : values_(std::move(values)), label_(label) {
  if (values_.size() != kSampleDim) {
    fail(ErrorCode::kDimension, "sample must have " + std::to_string(kSampleDim) +
                                    " values, got " + std::to_string(values_.size()));
  }
  for (double v : values_) {
    if (!std::isfinite(v)) fail(ErrorCode::kNonFinite, "sample contains a non-finite value");
  }
}

RawImage RawImage::from_bytes(std::size_t height, std::size_t width, std::size_t channels,
                              std::span<const unsigned char> bytes) {
  if (bytes.size() != height * width * channels) {
    fail(ErrorCode::kDimension, "image byte count " + std::to_string(bytes.size()) +
                                    " does not match " + std::to_string(height) + "x" +
                                    std::to_string(width) + "x" + std::to_string(channels));
  }
  RawImage img{height, width, channels, std::vector<double>(bytes.begin(), bytes.end()), 255.0};
  return img;
}

namespace {

std::vector<double> to_gray(const RawImage& img) {
  const std::size_t n = img.height * img.width;
  std::vector<double> gray(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* px = img.pixels.data() + i * img.channels;
    // 1 channel: intensity; 2: intensity + alpha; 3+: RGB(+A).
    gray[i] = img.channels >= 3 ? 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2] : px[0];
  }
  return gray;
}

// Corner-aligned source coordinate: output 0 maps to input 0, output n-1 to
// input m-1.
struct Tap {
  std::size_t lo;
  std::size_t hi;
  double frac;
};

// Exact at t = 0 and whenever a == b.
double lerp(double a, double b, double t) { return a + t * (b - a); }

Tap tap(std::size_t out_index, std::size_t out_size, std::size_t in_size) {
  if (in_size == 1 || out_size == 1) return {0, 0, 0.0};
  const double pos = static_cast<double>(out_index) * static_cast<double>(in_size - 1) /
                     static_cast<double>(out_size - 1);
  const auto lo = std::min(static_cast<std::size_t>(pos), in_size - 1);
  const std::size_t hi = std::min(lo + 1, in_size - 1);
  return {lo, hi, pos - static_cast<double>(lo)};
}

}  // namespace

Sample image_to_sample(const RawImage& image) {
  if (image.height == 0 || image.width == 0 || image.channels == 0) {
    fail(ErrorCode::kInvalidArgument, "image has a zero dimension");
  }
  if (image.pixels.size() != image.height * image.width * image.channels) {
    fail(ErrorCode::kDimension, "image pixel buffer does not match its dimensions");
  }
  if (!(image.max_value > 0.0)) fail(ErrorCode::kInvalidArgument, "image max_value must be positive");

  const std::vector<double> gray = to_gray(image);
  std::vector<double> out(kSampleDim);
  for (std::size_t y = 0; y < kImageSide; ++y) {
    const Tap ty = tap(y, kImageSide, image.height);
    for (std::size_t x = 0; x < kImageSide; ++x) {
      const Tap tx = tap(x, kImageSide, image.width);
      const double* row_lo = gray.data() + ty.lo * image.width;
      const double* row_hi = gray.data() + ty.hi * image.width;
      const double top = lerp(row_lo[tx.lo], row_lo[tx.hi], tx.frac);
      const double bottom = lerp(row_hi[tx.lo], row_hi[tx.hi], tx.frac);
      const double v = lerp(top, bottom, ty.frac) / image.max_value;
      out[y * kImageSide + x] = std::clamp(v, 0.0, 1.0);
    }
  }
  return Sample(std::move(out));
}

std::vector<double> adaptive_avg_pool_1d(std::span<const double> input, std::size_t target) {
  if (input.empty()) fail(ErrorCode::kInvalidArgument, "adaptive_avg_pool_1d on an empty vector");
  if (target == 0) fail(ErrorCode::kInvalidArgument, "adaptive_avg_pool_1d target must be positive");
  const std::size_t len = input.size();
  std::vector<double> out(target);
  for (std::size_t i = 0; i < target; ++i) {
    const std::size_t start = i * len / target;
    const std::size_t end = ((i + 1) * len + target - 1) / target;
    double sum = 0.0;
    for (std::size_t j = start; j < end; ++j) sum += input[j];
    out[i] = sum / static_cast<double>(end - start);
  }
  return out;
}

Sample standardize(const Sample& sample, const Standardization& stats) {
  if (stats.mean.size() != kSampleDim || stats.stddev.size() != kSampleDim) {
    fail(ErrorCode::kDimension, "standardization statistics must have 784 entries");
  }
  std::vector<double> out(kSampleDim);
  const auto v = sample.values();
  for (std::size_t i = 0; i < kSampleDim; ++i) {
    if (!(stats.stddev[i] > 0.0)) {
      fail(ErrorCode::kInvalidArgument, "standardization stddev at index " + std::to_string(i) +
                                            " is not positive");
    }
    out[i] = (v[i] - stats.mean[i]) / stats.stddev[i];
  }
  return Sample(std::move(out), sample.label());
}

Standardization fit_standardization(std::span<const Sample> samples, double min_stddev) {
  if (samples.empty()) fail(ErrorCode::kEmpty, "cannot fit standardization on zero samples");
  Standardization stats{std::vector<double>(kSampleDim, 0.0), std::vector<double>(kSampleDim, 0.0)};
  for (const auto& s : samples) {
    const auto v = s.values();
    for (std::size_t i = 0; i < kSampleDim; ++i) stats.mean[i] += v[i];
  }
  const double n = static_cast<double>(samples.size());
  for (double& m : stats.mean) m /= n;
  for (const auto& s : samples) {
    const auto v = s.values();
    for (std::size_t i = 0; i < kSampleDim; ++i) {
      const double d = v[i] - stats.mean[i];
      stats.stddev[i] += d * d;
    }
  }
  for (double& sd : stats.stddev) {
    sd = std::sqrt(sd / n);
    if (!(sd >= min_stddev)) sd = 1.0;
  }
  return stats;
}

}  // namespace em

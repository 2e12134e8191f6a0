#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "expertmatch/error.hpp"
#include "expertmatch/preprocess.hpp"
#include "support.hpp"

using namespace em;

namespace {

RawImage constant_image(std::size_t h, std::size_t w, std::size_t c, double v) {
  return RawImage{h, w, c, std::vector<double>(h * w * c, v), 255.0};
}

}  // namespace

TEST_CASE("sample contract") {
  CHECK_THROWS_AS(Sample(std::vector<double>(783, 0.0)), Error);
  std::vector<double> v(kSampleDim, 0.0);
  v[5] = std::nan("");
  CHECK_THROWS_AS(Sample{v}, Error);
  CHECK(Sample().values().size() == kSampleDim);
}

TEST_CASE("image to sample: constants survive resizing") {
  const Sample s = image_to_sample(constant_image(28, 28, 1, 255.0));
  for (double v : s.values()) CHECK(v == 1.0);
  const Sample big = image_to_sample(constant_image(56, 56, 1, 100.0));
  for (double v : big.values()) CHECK(v == 100.0 / 255.0);
  const Sample rgb = image_to_sample(constant_image(32, 32, 3, 40.0));
  for (double v : rgb.values()) CHECK(std::abs(v - 40.0 / 255.0) < 1e-12);
  CHECK_THROWS_AS(image_to_sample(RawImage{0, 5, 1, {}, 255.0}), Error);
}

TEST_CASE("image to sample: 28x28 grayscale is a plain rescale") {
  Rng rng(3);
  RawImage img{28, 28, 1, std::vector<double>(784), 255.0};
  for (double& p : img.pixels) p = static_cast<double>(rng.below(256));
  const Sample s = image_to_sample(img);
  for (std::size_t i = 0; i < 784; ++i) CHECK(s.values()[i] == img.pixels[i] / 255.0);
}

TEST_CASE("image to sample: luminance of color pixels") {
  RawImage img{28, 28, 3, {}, 255.0};
  for (int i = 0; i < 784; ++i) img.pixels.insert(img.pixels.end(), {200.0, 100.0, 50.0});
  const double y = (0.299 * 200 + 0.587 * 100 + 0.114 * 50) / 255.0;
  const Sample s = image_to_sample(img);
  for (double v : s.values()) CHECK(std::abs(v - y) < 1e-12);
}

TEST_CASE("image to sample: 2x2 bilinear upsampling") {
  const unsigned char px[] = {0, 255, 0, 255};
  const Sample s = image_to_sample(RawImage::from_bytes(2, 2, 1, px));
  // Corner-aligned bilinear: column j samples x = j / 27 of the way across.
  for (std::size_t r = 0; r < 28; ++r)
    for (std::size_t c = 0; c < 28; ++c) CHECK(std::abs(s.values()[r * 28 + c] - c / 27.0) < 1e-12);
  for (std::size_t r = 1; r < 28; ++r)
    for (std::size_t c = 0; c < 28; ++c) CHECK(s.values()[r * 28 + c] == s.values()[c]);
  for (std::size_t c = 1; c < 28; ++c) CHECK(s.values()[c] >= s.values()[c - 1]);
}

TEST_CASE("image values land in [0, 1]") {
  Rng rng(12);
  for (int t = 0; t < 20; ++t) {
    const std::size_t h = 1 + rng.below(60), w = 1 + rng.below(60), c = 1 + rng.below(4);
    RawImage img{h, w, c, std::vector<double>(h * w * c), 255.0};
    for (double& p : img.pixels) p = static_cast<double>(rng.below(256));
    const Sample s = image_to_sample(img);
    for (double v : s.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("adaptive average pooling") {
  Rng rng(17);
  std::vector<double> id(784);
  for (double& v : id) v = rng.normal();
  CHECK(adaptive_avg_pool_1d(id) == id);

  const std::vector<double> four{0, 2, 4, 6};
  CHECK(adaptive_avg_pool_1d(four, 2) == std::vector<double>{1, 5});
  CHECK_THROWS_AS(adaptive_avg_pool_1d(std::vector<double>{}), Error);

  for (std::size_t len : {561u, 2000u, 1u, 783u, 785u, 3072u}) {
    std::vector<double> x(len);
    for (double& v : x) v = rng.normal();
    const auto out = adaptive_avg_pool_1d(x);
    REQUIRE(out.size() == 784);
    for (std::size_t i = 0; i < 784; ++i) {
      const auto lo = static_cast<std::size_t>(std::floor(static_cast<double>(i * len) / 784.0));
      const auto hi = static_cast<std::size_t>(std::ceil(static_cast<double>((i + 1) * len) / 784.0));
      double sum = 0.0, mn = x[lo], mx = x[lo];
      for (std::size_t j = lo; j < hi; ++j) {
        sum += x[j];
        mn = std::min(mn, x[j]);
        mx = std::max(mx, x[j]);
      }
      CHECK(std::abs(out[i] - sum / static_cast<double>(hi - lo)) < 1e-12);
      CHECK(out[i] >= mn - 1e-12);
      CHECK(out[i] <= mx + 1e-12);
    }
  }
}

TEST_CASE("standardize") {
  Rng rng(5);
  const Sample x = test::random_sample(rng, -3, 3);
  const std::vector<double> v(x.values().begin(), x.values().end());
  const Standardization to_zero{v, std::vector<double>(784, 1.0)};
  const Sample zero = standardize(x, to_zero);
  for (double z : zero.values()) CHECK(z == 0.0);
  const Standardization identity{std::vector<double>(784, 0.0), std::vector<double>(784, 1.0)};
  CHECK(standardize(x, identity).values().size() == 784);
  CHECK(standardize(x, identity) == x);

  Standardization r{std::vector<double>(784), std::vector<double>(784)};
  for (std::size_t i = 0; i < 784; ++i) {
    r.mean[i] = rng.normal();
    r.stddev[i] = rng.uniform(0.1, 4.0);
  }
  const Sample s = standardize(x, r);
  for (std::size_t i = 0; i < 784; ++i) CHECK(std::abs(s.values()[i] - (v[i] - r.mean[i]) / r.stddev[i]) < 1e-12);

  r.stddev[100] = 0.0;
  CHECK_THROWS_AS(standardize(x, r), Error);
}

TEST_CASE("fit standardization") {
  Rng rng(8);
  std::vector<Sample> xs;
  for (int i = 0; i < 50; ++i) {
    Sample s = test::random_sample(rng, -2, 5);
    std::vector<double> v(s.values().begin(), s.values().end());
    v[0] = 3.0;  // constant feature
    xs.emplace_back(v);
  }
  const Standardization st = fit_standardization(xs);
  CHECK(st.stddev[0] == 1.0);
  CHECK(st.mean[0] == 3.0);
  for (std::size_t f = 1; f < 784; f += 97) {
    double m = 0.0, var = 0.0;
    for (const auto& s : xs) {
      const double z = standardize(s, st).values()[f];
      m += z / 50;
      var += z * z / 50;
    }
    CHECK(std::abs(m) < 1e-9);
    CHECK(std::abs(var - 1.0) < 1e-9);
  }
}

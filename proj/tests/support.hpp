#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "expertmatch/expert_index.hpp"
#include "expertmatch/nn/matrix.hpp"
#include "expertmatch/rng.hpp"

namespace em::test {

inline nn::Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  nn::Matrix m(r, c);
  for (double& v : m.values()) v = scale * rng.normal();
  return m;
}

inline double rel_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-4});
  return std::abs(a - b) / denom;
}

// Central difference of a scalar function of `x`, perturbing entry i.
inline double numeric_partial(nn::Matrix& x, std::size_t i, const std::function<double()>& f,
                              double h = 1e-6) {
  const double saved = x.values()[i];
  x.values()[i] = saved + h;
  const double up = f();
  x.values()[i] = saved - h;
  const double down = f();
  x.values()[i] = saved;
  return (up - down) / (2.0 * h);
}

inline Sample random_sample(Rng& rng, double lo = 0.0, double hi = 1.0) {
  std::vector<double> v(kSampleDim);
  for (double& x : v) x = rng.uniform(lo, hi);
  return Sample(std::move(v));
}

// An initialized, untrained autoencoder with randomized batch-norm state.
inline Autoencoder random_autoencoder(std::uint64_t seed,
                                      nn::ActivationKind out = nn::ActivationKind::kSigmoid) {
  Rng rng(seed);
  Autoencoder ae(out);
  ae.initialize(rng);
  auto& bn = std::get<nn::BatchNorm1d>(ae.network().layer(1));
  std::vector<double> mean(kHiddenDim), var(kHiddenDim);
  nn::Matrix gamma(1, kHiddenDim), beta(1, kHiddenDim);
  for (std::size_t i = 0; i < kHiddenDim; ++i) {
    mean[i] = rng.normal(0.0, 0.2);
    var[i] = rng.uniform(0.5, 2.0);
    gamma(0, i) = rng.uniform(0.5, 1.5);
    beta(0, i) = rng.normal(0.0, 0.3);
  }
  bn.restore(gamma, beta, mean, var, bn.momentum(), bn.epsilon());
  bn.set_mode(nn::Mode::kEval);
  return ae;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("em-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::filesystem::path source_root() { return EM_SOURCE_DIR; }

}  // namespace em::test

namespace em::test {

inline std::vector<Sample> labeled_samples(Rng& rng, std::size_t n, int classes) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s = random_sample(rng);
    s.set_label(static_cast<int>(i % static_cast<std::size_t>(classes)));
    out.push_back(std::move(s));
  }
  return out;
}

inline ExpertEntry make_entry(const std::string& id, std::uint64_t seed, bool centroids = true, int classes = 3) {
  ExpertEntry e;
  e.expert_id = id;
  e.display_name = id + " expert";
  e.autoencoder = random_autoencoder(seed);
  if (centroids) {
    Rng rng(seed + 1000);
    e.centroids = compute_centroids(e.autoencoder, labeled_samples(rng, 30, classes));
  }
  e.preprocessing.kind = InputKind::kImage;
  e.preprocessing.source_length = 784;
  e.fingerprint = {seed, 0, 0};
  return e;
}

}  // namespace em::test

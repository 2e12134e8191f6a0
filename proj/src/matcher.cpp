#include "expertmatch/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "expertmatch/error.hpp"

namespace em {

namespace {

using Clock = std::chrono::steady_clock;

void require_experts(const Registry& registry) {
  if (registry.empty()) fail(ErrorCode::kEmpty, "registry has no experts");
}

}  // namespace

bool MatchResult::same_outcome(const MatchResult& other) const {
  return coarse_losses == other.coarse_losses && coarse_index == other.coarse_index &&
         coarse_ranking == other.coarse_ranking && fine == other.fine;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    fail(ErrorCode::kDimension, "cosine_similarity: lengths " + std::to_string(a.size()) +
                                    " and " + std::to_string(b.size()));
  }
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (!(na > 0.0) || !(nb > 0.0)) fail(ErrorCode::kDegenerate, "cosine_similarity of a zero-norm vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::size_t argmin_first(std::span<const double> values) {
  if (values.empty()) fail(ErrorCode::kEmpty, "argmin of an empty list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] < values[best]) best = i;
  }
  return best;
}

std::vector<std::size_t> ascending_ranking(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  return order;
}

MatchResult coarse_match(const Registry& registry, const Sample& x) {
  const auto start = Clock::now();
  require_experts(registry);
  MatchResult result;
  result.coarse_losses.reserve(registry.size());
  for (const auto& entry : registry.entries()) {
    result.coarse_losses.push_back(entry.autoencoder.reconstruction_loss(x));
  }
  result.coarse_index = argmin_first(result.coarse_losses);
  result.coarse_ranking = ascending_ranking(result.coarse_losses);
  result.elapsed = Clock::now() - start;
  return result;
}

std::vector<MatchResult> coarse_match_batch(const Registry& registry, std::span<const Sample> xs) {
  require_experts(registry);
  std::vector<MatchResult> results(xs.size());
  for (auto& r : results) r.coarse_losses.resize(registry.size());
  for (std::size_t k = 0; k < registry.size(); ++k) {
    const std::vector<double> losses = registry.at(k).autoencoder.reconstruction_losses(xs);
    for (std::size_t i = 0; i < xs.size(); ++i) results[i].coarse_losses[k] = losses[i];
  }
  for (auto& r : results) {
    r.coarse_index = argmin_first(r.coarse_losses);
    r.coarse_ranking = ascending_ranking(r.coarse_losses);
  }
  return results;
}

FineMatch fine_match_encoded(const ClassCentroids& centroids, std::span<const double> encoding) {
  if (centroids.size() == 0) fail(ErrorCode::kCapability, "expert has an empty centroid set");
  double norm = 0.0;
  for (double v : encoding) norm += v * v;
  if (!(norm > 0.0)) fail(ErrorCode::kDegenerate, "sample encoding has zero norm");

  FineMatch out;
  out.class_ids = centroids.class_ids;
  out.scores.reserve(centroids.size());
  for (const auto& mu : centroids.centroids) out.scores.push_back(cosine_similarity(encoding, mu));
  std::size_t best = 0;
  for (std::size_t i = 1; i < out.scores.size(); ++i) {
    if (out.scores[i] > out.scores[best]) best = i;
  }
  out.class_position = best;
  out.fine_class = centroids.class_ids[best];
  return out;
}

FineMatch fine_match(const ExpertEntry& entry, const Sample& x) {
  if (!entry.centroids) {
    fail(ErrorCode::kCapability, "expert '" + entry.expert_id + "' has no class centroids");
  }
  return fine_match_encoded(*entry.centroids, entry.autoencoder.encode(x));
}

MatchResult hierarchical_match(const Registry& registry, const Sample& x) {
  const auto start = Clock::now();
  MatchResult result = coarse_match(registry, x);
  const ExpertEntry& chosen = registry.at(result.coarse_index);
  if (chosen.centroids) result.fine = fine_match(chosen, x);
  result.elapsed = Clock::now() - start;
  return result;
}

}  // namespace em

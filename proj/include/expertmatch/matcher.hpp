#pragma once

#include <chrono>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "expertmatch/expert_index.hpp"

namespace em {

struct FineMatch {
  int fine_class = 0;
  std::size_t class_position = 0;  // index into the entry's centroid list
  std::vector<double> scores;      // cosine per class, centroid order
  std::vector<int> class_ids;

  friend bool operator==(const FineMatch&, const FineMatch&) = default;
};

struct MatchResult {
  std::vector<double> coarse_losses;        // registry order
  std::size_t coarse_index = 0;             // k*
  std::vector<std::size_t> coarse_ranking;  // ascending loss, ties by index
  std::optional<FineMatch> fine;
  std::chrono::nanoseconds elapsed{0};

  // Everything except timing.
  bool same_outcome(const MatchResult& other) const;
};

// a.b / (|a||b|), clamped to [-1, 1]. Zero-norm inputs are kDegenerate.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// First index of the minimum.
std::size_t argmin_first(std::span<const double> values);
// Indices sorted by ascending value; equal values keep index order.
std::vector<std::size_t> ascending_ranking(std::span<const double> values);

MatchResult coarse_match(const Registry& registry, const Sample& x);
// Coarse routing for many samples. Every result is bit-identical to
// coarse_match on the same sample (elapsed is left zero).
std::vector<MatchResult> coarse_match_batch(const Registry& registry, std::span<const Sample> xs);

FineMatch fine_match(const ExpertEntry& entry, const Sample& x);
// Fine match from a precomputed encoding.
FineMatch fine_match_encoded(const ClassCentroids& centroids, std::span<const double> encoding);

// Coarse match, then fine match on k* when that expert has centroids.
MatchResult hierarchical_match(const Registry& registry, const Sample& x);

}  // namespace em

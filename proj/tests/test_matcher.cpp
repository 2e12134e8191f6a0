#include <doctest.h>

#include <cmath>

#include "expertmatch/error.hpp"
#include "expertmatch/matcher.hpp"
#include "support.hpp"

using namespace em;

namespace {

Registry random_registry(std::size_t k, std::uint64_t seed) {
  Registry r;
  for (std::size_t i = 0; i < k; ++i) {
    r.add(test::make_entry("e" + std::to_string(i), seed * 100 + i, i % 2 == 0, 2 + static_cast<int>(i % 3)));
  }
  return r;
}

}  // namespace

TEST_CASE("cosine similarity") {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> a(16), b(16);
    for (double& v : a) v = rng.normal();
    for (double& v : b) v = rng.normal();
    CHECK(std::abs(cosine_similarity(a, a) - 1.0) < 1e-12);
    double dot = 0, na = 0, nb = 0;
    for (int i = 0; i < 16; ++i) {
      dot += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    const double ref = dot / std::sqrt(na * nb);
    CHECK(std::abs(cosine_similarity(a, b) - ref) < 1e-12);
    const double s = rng.uniform(0.01, 100.0);
    auto as = a;
    for (double& v : as) v *= s;
    CHECK(std::abs(cosine_similarity(as, b) - cosine_similarity(a, b)) < 1e-12);
  }
  CHECK(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
  try {
    cosine_similarity(std::vector<double>{0, 0}, std::vector<double>{0, 1});
    FAIL("expected a degenerate error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDegenerate);
  }
}

TEST_CASE("coarse match equals an exhaustive scan for K <= 6") {
  Rng rng(2);
  for (std::size_t k = 1; k <= 6; ++k) {
    const Registry r = random_registry(k, k);
    for (int t = 0; t < 20; ++t) {
      const Sample x = test::random_sample(rng, -1, 2);
      const MatchResult m = coarse_match(r, x);
      REQUIRE(m.coarse_losses.size() == k);
      std::size_t best = 0;
      for (std::size_t i = 0; i < k; ++i) {
        const double l = r.at(i).autoencoder.reconstruction_loss(x);
        CHECK(m.coarse_losses[i] == l);
        if (l < m.coarse_losses[best]) best = i;
      }
      CHECK(m.coarse_index == best);
      CHECK(m.coarse_ranking.front() == best);
      for (std::size_t i = 1; i < k; ++i) {
        CHECK(m.coarse_losses[m.coarse_ranking[i - 1]] <= m.coarse_losses[m.coarse_ranking[i]]);
      }
      if (k == 1) CHECK(m.coarse_index == 0);
    }
  }
  CHECK_THROWS_AS(coarse_match(Registry{}, Sample{}), Error);
}

TEST_CASE("argmin invariance under positive scaling and shifting") {
  Rng rng(3);
  for (int t = 0; t < 500; ++t) {
    const std::size_t k = 1 + rng.below(8);
    std::vector<double> losses(k);
    for (double& l : losses) l = rng.uniform(0.0, 1.0);
    const std::size_t idx = argmin_first(losses);
    const auto rank = ascending_ranking(losses);
    const double a = rng.uniform(0.1, 10.0), b = rng.uniform(-5.0, 5.0);
    std::vector<double> scaled(k), shifted(k);
    for (std::size_t i = 0; i < k; ++i) {
      scaled[i] = a * losses[i];
      shifted[i] = losses[i] + b;
    }
    CHECK(argmin_first(scaled) == idx);
    CHECK(argmin_first(shifted) == idx);
    CHECK(ascending_ranking(scaled) == rank);
    CHECK(ascending_ranking(shifted) == rank);
  }
}

TEST_CASE("ties go to the lower index") {
  CHECK(argmin_first(std::vector<double>{2, 1, 1, 3}) == 1);
  CHECK(ascending_ranking(std::vector<double>{2, 1, 1, 0}) == std::vector<std::size_t>{3, 1, 2, 0});

  Registry r;
  ExpertEntry e = test::make_entry("first", 1);
  r.add(test::make_entry("zero", 9));
  r.add(e);
  e.expert_id = "duplicate";
  r.add(e);
  Rng rng(4);
  for (int t = 0; t < 30; ++t) {
    const MatchResult m = coarse_match(r, test::random_sample(rng));
    CHECK(m.coarse_losses[1] == m.coarse_losses[2]);
    CHECK(m.coarse_index != 2);
    const auto p1 = std::find(m.coarse_ranking.begin(), m.coarse_ranking.end(), 1u);
    const auto p2 = std::find(m.coarse_ranking.begin(), m.coarse_ranking.end(), 2u);
    CHECK(p1 < p2);
  }

  ClassCentroids c;
  c.class_ids = {4, 7};
  c.centroids = {std::vector<double>(kHiddenDim, 1.0), std::vector<double>(kHiddenDim, 1.0)};
  c.counts = {1, 1};
  CHECK(fine_match_encoded(c, std::vector<double>(kHiddenDim, 2.0)).fine_class == 4);
}

TEST_CASE("fine match") {
  const ExpertEntry e = test::make_entry("e", 5, true, 4);
  const ClassCentroids& c = *e.centroids;
  const FineMatch exact = fine_match_encoded(c, c.centroids[3]);
  CHECK(exact.fine_class == 3);
  CHECK(std::abs(exact.scores[3] - 1.0) < 1e-12);

  Rng rng(6);
  ClassCentroids spread;
  for (int k = 0; k < 6; ++k) {
    std::vector<double> mu(kHiddenDim);
    for (double& v : mu) v = rng.uniform(0.0, 1.0);
    spread.class_ids.push_back(k);
    spread.centroids.push_back(std::move(mu));
    spread.counts.push_back(1);
  }
  for (int t = 0; t < 100; ++t) {
    std::vector<double> h(kHiddenDim);
    for (double& v : h) v = rng.uniform(0.0, 1.0);
    const int base = fine_match_encoded(spread, h).fine_class;
    auto hs = h;
    const double scale = rng.uniform(0.01, 50.0);
    for (double& v : hs) v *= scale;
    CHECK(fine_match_encoded(spread, hs).fine_class == base);
    ClassCentroids cs = spread;
    for (auto& mu : cs.centroids) {
      const double s = rng.uniform(0.01, 50.0);
      for (double& v : mu) v *= s;
    }
    CHECK(fine_match_encoded(cs, h).fine_class == base);
  }

  ExpertEntry single = test::make_entry("one", 7, false);
  Rng r1(8);
  auto xs = test::labeled_samples(r1, 5, 1);
  single.centroids = compute_centroids(single.autoencoder, xs);
  for (int t = 0; t < 10; ++t) CHECK(fine_match(single, test::random_sample(rng)).fine_class == 0);

  const ExpertEntry bare = test::make_entry("bare", 9, false);
  try {
    fine_match(bare, Sample{});
    FAIL("expected a capability error");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::kCapability);
  }
  try {
    fine_match_encoded(c, std::vector<double>(kHiddenDim, 0.0));
    FAIL("expected a degenerate error");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::kDegenerate);
  }
}

TEST_CASE("hierarchical match composes coarse and fine") {
  Registry only;
  only.add(test::make_entry("solo", 11));
  Rng rng(12);
  const MatchResult solo = hierarchical_match(only, test::random_sample(rng));
  CHECK(solo.coarse_index == 0);
  CHECK(solo.fine.has_value());

  Registry bare;
  bare.add(test::make_entry("bare", 13, false));
  CHECK_FALSE(hierarchical_match(bare, test::random_sample(rng)).fine.has_value());

  const Registry r = random_registry(5, 14);
  for (int t = 0; t < 50; ++t) {
    const Sample x = test::random_sample(rng, -1, 2);
    const MatchResult h = hierarchical_match(r, x);
    const MatchResult c = coarse_match(r, x);
    CHECK(h.coarse_losses == c.coarse_losses);
    CHECK(h.coarse_index == c.coarse_index);
    CHECK(h.coarse_ranking == c.coarse_ranking);
    const ExpertEntry& chosen = r.at(c.coarse_index);
    CHECK(h.fine.has_value() == chosen.centroids.has_value());
    if (chosen.centroids) CHECK(*h.fine == fine_match(chosen, x));
    CHECK(hierarchical_match(r, x).same_outcome(h));
  }
}

TEST_CASE("batch coarse match is bit-identical to the single-sample path") {
  const Registry r = random_registry(4, 20);
  Rng rng(21);
  std::vector<Sample> xs;
  for (int i = 0; i < 300; ++i) xs.push_back(test::random_sample(rng, -1, 2));
  const auto batch = coarse_match_batch(r, xs);
  for (std::size_t i = 0; i < xs.size(); ++i) CHECK(batch[i].same_outcome(coarse_match(r, xs[i])));
}

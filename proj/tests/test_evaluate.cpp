#include <doctest.h>

#include "expertmatch/error.hpp"
#include "expertmatch/evaluate.hpp"
#include "expertmatch/matcher.hpp"
#include "support.hpp"

using namespace em;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kInternal;
}

Dataset synthetic(const std::string& name, std::uint64_t seed, double base, int classes = 3) {
  SyntheticSpec s;
  s.name = name;
  s.num_classes = classes;
  s.count = 600;
  s.dims = 784;
  s.margin = 8.0;
  s.sigma = 0.3;
  s.structured_fraction = 0.9;
  s.rank = 6;
  s.base_level = base;
  s.base_spread = 0.5;
  s.seed = seed;
  return generate_synthetic(s);
}

nn::TrainConfig quick(std::uint64_t seed) {
  nn::TrainConfig c;
  c.max_epochs = 6;
  c.decay_every = 3;
  c.seed = seed;
  return c;
}

ExpertEntry expert_for(const Dataset& d, std::uint64_t seed) {
  ExpertEntry e;
  e.expert_id = d.name;
  e.display_name = d.name;
  e.autoencoder = train_autoencoder(d.samples, quick(seed), nn::ActivationKind::kIdentity);
  e.centroids = compute_centroids(e.autoencoder, d.samples);
  e.preprocessing = {InputKind::kPooledVector, d.source_length, std::nullopt};
  return e;
}

struct Fixture {
  Dataset a = synthetic("alpha", 1, 2.0);
  Dataset b = synthetic("beta", 2, -2.0, 4);
  Registry registry;
  Fixture() {
    registry.add(expert_for(a, 1));
    registry.add(expert_for(b, 2));
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("coarse evaluation on the experts' own data") {
  Fixture& f = fixture();
  const ClientSet sets[] = {{"alpha", "A", f.a.samples}, {"beta", "A", f.b.samples}};
  const AccuracyTable t = eval_coarse(f.registry, sets);
  CHECK(t.find("alpha", "A")->accuracy() == 100.0);
  CHECK(t.find("beta", "A")->accuracy() == 100.0);
  CHECK(t.client_average("A") == 100.0);
  CHECK(t.client_total("A") == 1200);

  // No drift between the harness and per-sample library calls.
  for (const auto& set : sets) {
    const std::size_t target = *f.registry.index_of(set.dataset);
    std::size_t correct = 0;
    for (const auto& x : set.samples) correct += coarse_match(f.registry, x).coarse_index == target;
    CHECK(t.find(set.dataset, "A")->correct == correct);
  }

  Registry single;
  single.add(f.registry.at(0));
  const ClientSet solo[] = {{"alpha", "B", f.b.samples}};
  CHECK(eval_coarse(single, solo).cells[0].accuracy() == 100.0);

  const ClientSet missing[] = {{"gamma", "A", f.a.samples}};
  CHECK(code_of([&] { eval_coarse(f.registry, missing); }) == ErrorCode::kNotFound);
}

TEST_CASE("fine evaluation") {
  Fixture& f = fixture();
  const ExpertEntry& e = f.registry.at(1);
  // One sample per class whose encoding defines the centroid.
  std::vector<Sample> defining;
  for (int c = 0; c < 4; ++c) {
    for (const auto& s : f.b.samples) {
      if (*s.label() == c) {
        defining.push_back(s);
        break;
      }
    }
  }
  ExpertEntry one = e;
  one.centroids = compute_centroids(one.autoencoder, defining);
  const FineEval full = eval_fine(one, defining);
  CHECK(full.accuracy() == 100.0);

  // Random labels land near chance.
  Rng rng(3);
  std::vector<Sample> shuffled = f.b.samples;
  for (auto& s : shuffled) s.set_label(static_cast<int>(rng.below(4)));
  CHECK(std::abs(eval_fine(e, shuffled).accuracy() - 25.0) < 6.0);

  std::vector<Sample> wrong{f.b.samples[0]};
  wrong[0].set_label(9);
  CHECK(code_of([&] { eval_fine(e, wrong); }) == ErrorCode::kInvalidArgument);
  ExpertEntry bare = e;
  bare.centroids.reset();
  CHECK(code_of([&] { eval_fine(bare, f.b.samples); }) == ErrorCode::kCapability);
}

TEST_CASE("MLP baseline separates two synthetic datasets") {
  Fixture& f = fixture();
  const NamedSamples named[] = {{"alpha", f.a.samples}, {"beta", f.b.samples}};
  std::vector<double> losses;
  const DatasetClassifier mlp = train_mlp_baseline(named, quick(5), &losses);
  CHECK(losses.size() == 6);
  const ClientSet sets[] = {{"alpha", "A", f.a.samples}, {"beta", "A", f.b.samples}};
  const AccuracyTable t = eval_dataset_id(mlp, sets);
  CHECK(t.client_average("A") >= 99.9);

  const DatasetClassifier again = train_mlp_baseline(named, quick(5));
  CHECK(again.network() == mlp.network());
  CHECK(code_of([&] { train_mlp_baseline(std::span(named).first(1), quick(5)); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("experiment config parsing") {
  const ExperimentConfig c = parse_experiment_config(R"({
    "base_dir": "/data",
    "split": {"seed": 9},
    "train": {"epochs": 3, "decay_every": 1, "seed": 4},
    "mlp_baseline": false,
    "max_train_samples": 100,
    "datasets": [
      {"name": "m", "loader": "idx-images", "images": "i.gz", "labels": "/abs/l.gz", "classes": 10},
      {"name": "s", "loader": "synthetic", "kind": "image", "classes": 3, "count": 50, "seed": 2},
      {"name": "c", "loader": "csv-vectors", "path": "v.csv", "standardize": true}
    ]})");
  REQUIRE(c.datasets.size() == 3);
  CHECK(c.datasets[0].images_path == "/data/i.gz");
  CHECK(c.datasets[0].labels_path == "/abs/l.gz");
  CHECK(c.datasets[1].synthetic.kind == InputKind::kImage);
  CHECK(c.datasets[1].synthetic.count == 50);
  CHECK(c.datasets[2].standardize);
  CHECK(c.split.seed == 9);
  CHECK(c.split.server == 0.5);
  CHECK(c.train.max_epochs == 3);
  CHECK(c.train.batch_size == 128);
  CHECK_FALSE(c.mlp_baseline);
  CHECK(c.max_train_samples == 100u);

  CHECK(code_of([] { parse_experiment_config("{}"); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([] { parse_experiment_config(R"({"datasets": [{"name": "x", "loader": "ftp"}]})"); }) ==
        ErrorCode::kInvalidArgument);
  CHECK(code_of([] {
          parse_experiment_config(R"({"datasets": [
            {"name": "x", "loader": "synthetic", "classes": 2, "count": 10},
            {"name": "x", "loader": "synthetic", "classes": 2, "count": 10}]})");
        }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("small end-to-end experiment") {
  const ExperimentConfig c = parse_experiment_config(R"({
    "split": {"seed": 1},
    "train": {"epochs": 4, "decay_every": 2, "seed": 7},
    "datasets": [
      {"name": "img", "loader": "synthetic", "kind": "image", "height": 20, "width": 20, "channels": 3,
       "classes": 3, "count": 600, "margin": 8, "sigma": 0.1, "structured_fraction": 0.9, "rank": 6,
       "base_level": 0.5, "base_spread": 0.1, "seed": 1},
      {"name": "vec", "loader": "synthetic", "kind": "vector", "dims": 300, "classes": 2, "count": 600,
       "margin": 8, "structured_fraction": 0.9, "rank": 6, "base_spread": 1.0, "seed": 2, "standardize": true}
    ]})");
  const ExperimentReport r = run_experiment(c);
  CHECK(r.registry.size() == 2);
  CHECK(r.registry.at(0).autoencoder.output_activation() == nn::ActivationKind::kSigmoid);
  CHECK(r.registry.at(1).autoencoder.output_activation() == nn::ActivationKind::kIdentity);
  CHECK(r.registry.at(1).preprocessing.standardization.has_value());
  CHECK(r.registry.at(1).fingerprint.seed == 8);
  CHECK(r.split_sizes.at("img/server") == 300);
  CHECK(r.split_sizes.at("vec/client_b") == 150);
  CHECK(r.coarse.client_total("A") == 300);
  CHECK(r.coarse.client_average("A") == 100.0);
  CHECK(r.mlp.has_value());
  const std::string csv = r.csv();
  CHECK(csv.rfind("dataset,client,metric,value,seed\n", 0) == 0);
  CHECK(csv.find("img,A,ca_accuracy,100,7") != std::string::npos);
  CHECK(csv.find("average,B,fa_accuracy,") != std::string::npos);
  const std::string text = r.text();
  CHECK(text.find("100.00") != std::string::npos);
  CHECK(text.find("Seeds: img=7 vec=8") != std::string::npos);

  CHECK(run_experiment(c).csv() == csv);
}

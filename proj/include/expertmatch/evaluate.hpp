#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "expertmatch/datasets.hpp"
#include "expertmatch/expert_index.hpp"
#include "expertmatch/nn/network.hpp"
#include "expertmatch/nn/optim.hpp"

namespace em {

// One client's samples from one source dataset.
struct ClientSet {
  std::string dataset;  // must equal an expert_id for coarse evaluation
  std::string client;   // e.g. "A" or "B"
  std::span<const Sample> samples;
};

struct AccuracyCell {
  std::string dataset;
  std::string client;
  std::size_t correct = 0;
  std::size_t total = 0;

  double accuracy() const { return total ? 100.0 * static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

struct AccuracyTable {
  std::vector<AccuracyCell> cells;

  // Unweighted mean of per-dataset accuracies for one client.
  double client_average(const std::string& client) const;
  std::size_t client_total(const std::string& client) const;
  std::vector<std::string> clients() const;
  const AccuracyCell* find(const std::string& dataset, const std::string& client) const;
};

// Share of client samples whose k* is the expert named after their dataset.
AccuracyTable eval_coarse(const Registry& registry, std::span<const ClientSet> clients);

struct FineEval {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total ? 100.0 * static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

// Share of labeled samples whose n* equals their label, using this entry's
// autoencoder and centroids.
FineEval eval_fine(const ExpertEntry& entry, std::span<const Sample> labeled);

// MLP dataset-identity classifier: 784 -> 256 -> 128 -> C with batch norm and
// ReLU on both hidden layers, softmax output.
class DatasetClassifier {
 public:
  DatasetClassifier() = default;
  explicit DatasetClassifier(std::vector<std::string> dataset_names);

  const std::vector<std::string>& dataset_names() const noexcept { return names_; }
  nn::Network& network() noexcept { return network_; }
  const nn::Network& network() const noexcept { return network_; }

  std::vector<int> predict(std::span<const Sample> samples) const;

 private:
  std::vector<std::string> names_;
  nn::Network network_;
};

struct NamedSamples {
  std::string dataset;
  std::span<const Sample> samples;
};

DatasetClassifier train_mlp_baseline(std::span<const NamedSamples> datasets,
                                     const nn::TrainConfig& config,
                                     std::vector<double>* epoch_loss = nullptr);

AccuracyTable eval_dataset_id(const DatasetClassifier& classifier, std::span<const ClientSet> clients);

// ---- End-to-end protocol ----------------------------------------------------

enum class DatasetLoader { kIdxImages, kCsvVectors, kSynthetic };

struct DatasetSpec {
  std::string name;
  DatasetLoader loader = DatasetLoader::kSynthetic;
  std::string images_path;  // idx-images
  std::string labels_path;
  std::string csv_path;     // csv-vectors
  SyntheticSpec synthetic;  // synthetic
  int num_classes = 0;      // 0: take from the data
  bool standardize = false;  // fit on the server split, stored in the expert
};

// Parses a dataset spec from JSON text (see docs/experiment-config.md).
DatasetSpec parse_dataset_spec(const std::string& json_text);
Dataset load_dataset(const DatasetSpec& spec);

struct ExperimentConfig {
  std::vector<DatasetSpec> datasets;
  SplitSpec split;
  nn::TrainConfig train;
  bool centroids = true;  // compute centroids for every expert
  bool mlp_baseline = true;
  std::optional<std::size_t> max_train_samples;  // cap on server samples per expert
};

ExperimentConfig parse_experiment_config(const std::string& json_text);

struct CsvRow {
  std::string dataset;
  std::string client;
  std::string metric;
  double value = 0.0;
  std::uint64_t seed = 0;
};

struct ExperimentReport {
  Registry registry;
  AccuracyTable coarse;
  AccuracyTable fine;          // FA with the true expert's autoencoder
  AccuracyTable hierarchical;  // CA then FA; correct only when both are
  std::optional<AccuracyTable> mlp;
  std::map<std::string, std::size_t> split_sizes;  // "<dataset>/<split>" -> count
  std::vector<CsvRow> rows;

  std::string csv() const;
  std::string text() const;
};

using ProgressFn = void (*)(const char* message, void* user);

ExperimentReport run_experiment(const ExperimentConfig& config, ProgressFn progress = nullptr,
                                void* user = nullptr);

}  // namespace em

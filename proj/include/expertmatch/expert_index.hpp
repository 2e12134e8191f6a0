#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "expertmatch/nn/network.hpp"
#include "expertmatch/nn/optim.hpp"
#include "expertmatch/preprocess.hpp"

namespace em {

inline constexpr std::size_t kHiddenDim = 128;

// 784 -> 128 (batch norm, ReLU) -> 784 (output activation).
// Layer order: dense, batch norm, relu, dense, output activation.
class Autoencoder {
 public:
  static constexpr std::size_t kEncoderLayers = 3;

  explicit Autoencoder(nn::ActivationKind output = nn::ActivationKind::kSigmoid);
  // Adopts an already-built network; validates the layer layout.
  explicit Autoencoder(nn::Network network);

  void initialize(Rng& rng);

  // Bottleneck encoding: post-ReLU encoder output with eval-mode batch norm.
  std::vector<double> encode(const Sample& x) const;
  nn::Matrix encode_batch(const nn::Matrix& batch) const;
  std::vector<double> reconstruct(const Sample& x) const;
  nn::Matrix reconstruct_batch(const nn::Matrix& batch) const;
  // Mean over the 784 dimensions of the squared reconstruction error.
  double reconstruction_loss(const Sample& x) const;
  std::vector<double> reconstruction_losses(std::span<const Sample> xs) const;

  nn::ActivationKind output_activation() const;
  const nn::DenseLayer& encoder() const;
  const nn::BatchNorm1d& encoder_norm() const;
  const nn::DenseLayer& decoder() const;

  nn::Network& network() noexcept { return network_; }
  const nn::Network& network() const noexcept { return network_; }

  friend bool operator==(const Autoencoder&, const Autoencoder&) = default;

 private:
  nn::Network network_;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // mean minibatch loss per epoch
};

// Trains for config.max_epochs epochs with Adam on minibatch MSE; batch norm
// is left in eval mode. Deterministic for a given config.seed.
Autoencoder train_autoencoder(std::span<const Sample> samples, const nn::TrainConfig& config,
                              nn::ActivationKind output = nn::ActivationKind::kSigmoid,
                              TrainReport* report = nullptr);

struct ClassCentroids {
  std::vector<int> class_ids;                // ascending
  std::vector<std::vector<double>> centroids;  // one kHiddenDim vector per class
  std::vector<std::uint64_t> counts;

  std::size_t size() const noexcept { return class_ids.size(); }
  friend bool operator==(const ClassCentroids&, const ClassCentroids&) = default;
};

// Unweighted per-class mean of encode(x). Every sample needs a label. With
// `num_classes`, each class in [0, num_classes) must be present.
ClassCentroids compute_centroids(const Autoencoder& model, std::span<const Sample> labeled,
                                 std::optional<int> num_classes = std::nullopt);

enum class InputKind : std::uint8_t { kImage = 0, kPooledVector = 1 };

const char* input_kind_name(InputKind kind) noexcept;
InputKind parse_input_kind(const std::string& name);

struct Preprocessing {
  InputKind kind = InputKind::kImage;
  std::uint64_t source_length = 0;  // L for pooled vectors; 0 when unknown
  std::optional<Standardization> standardization;

  friend bool operator==(const Preprocessing&, const Preprocessing&) = default;
};

struct TrainFingerprint {
  std::uint64_t seed = 0;
  std::uint64_t epochs = 0;
  std::uint64_t samples = 0;

  friend bool operator==(const TrainFingerprint&, const TrainFingerprint&) = default;
};

struct ExpertEntry {
  std::string expert_id;
  std::string display_name;
  Autoencoder autoencoder;
  std::optional<ClassCentroids> centroids;
  Preprocessing preprocessing;
  TrainFingerprint fingerprint;

  friend bool operator==(const ExpertEntry&, const ExpertEntry&) = default;
};

// Checks internal consistency: non-empty unique-able id, network layout,
// centroid shapes and nonzero norms.
void validate(const ExpertEntry& entry);

inline constexpr std::uint32_t kRegistryFormatVersion = 1;

// Ordered expert table. Order is stable and defines tie-breaking.
class Registry {
 public:
  Registry() = default;

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::vector<ExpertEntry>& entries() const noexcept { return entries_; }
  const ExpertEntry& at(std::size_t i) const { return entries_.at(i); }

  // Appends; throws kConflict on a duplicate expert_id.
  void add(ExpertEntry entry);
  std::optional<std::size_t> index_of(const std::string& expert_id) const;

  friend bool operator==(const Registry&, const Registry&) = default;

 private:
  std::vector<ExpertEntry> entries_;
};

std::vector<std::uint8_t> serialize_registry(const Registry& registry);
Registry deserialize_registry(std::span<const std::uint8_t> bytes);

// Writes to a temporary sibling and renames over `path`.
void save_registry(const Registry& registry, const std::filesystem::path& path);
Registry load_registry(const std::filesystem::path& path);

}  // namespace em

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "expertmatch/expert_index.hpp"
#include "expertmatch/preprocess.hpp"

namespace em {

// Labeled canonical samples from one source.
struct Dataset {
  std::string name;
  int num_classes = 0;
  InputKind kind = InputKind::kImage;
  std::uint64_t source_length = 0;  // native length before canonicalization
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }
};

// Big-endian IDX pair. Images: magic 0x00000803 (n, h, w) or 0x00000804
// (n, h, w, c), unsigned bytes. Labels: magic 0x00000801. Gzip input is
// detected and inflated transparently.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::string name = "idx");

// Raw IDX payload helpers (exposed for tests and synthetic export).
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_idx_images(const std::filesystem::path& path, std::size_t height, std::size_t width,
                      std::size_t channels, std::span<const std::uint8_t> pixels,
                      std::size_t count);
void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels);

// Rows of `label,v1,...,vL`; blank lines and lines starting with '#' are
// skipped. Every row must have the same L. Vectors are pooled to 784.
Dataset load_csv_vectors(const std::filesystem::path& path, std::string name = "csv");
void write_csv_vectors(const std::filesystem::path& path, std::span<const int> labels,
                       std::span<const std::vector<double>> vectors);

struct SyntheticSpec {
  std::string name = "synthetic";
  InputKind kind = InputKind::kPooledVector;
  std::size_t dims = kSampleDim;  // vector length L
  std::size_t height = 32;        // image geometry
  std::size_t width = 32;
  std::size_t channels = 3;
  int num_classes = 2;
  std::size_t count = 1000;
  double margin = 10.0;  // distance between any two class means, in units of sigma
  double sigma = 1.0;    // per-coordinate noise standard deviation
  // Share of the noise variance carried by a random rank-`rank` subspace;
  // the rest is isotropic.
  double structured_fraction = 0.0;
  std::size_t rank = 8;
  double base_level = 0.0;   // mean of the dataset-wide offset
  double base_spread = 0.0;  // per-coordinate spread of that offset
  std::vector<double> class_weights;  // empty: balanced
  std::uint64_t seed = 1;

  std::size_t native_length() const {
    return kind == InputKind::kImage ? height * width * channels : dims;
  }
};

struct SyntheticData {
  std::vector<int> labels;
  std::vector<std::vector<double>> native;  // length native_length(); images in [0, 1]
  std::vector<std::vector<double>> class_means;
};

// Seeded Gaussian clusters in the native space. Class means sit on random
// orthonormal directions scaled so every pair is margin * sigma apart.
SyntheticData generate_synthetic_native(const SyntheticSpec& spec);
// Native draw converted to canonical samples (image_to_sample or pooling).
Dataset generate_synthetic(const SyntheticSpec& spec);

struct SplitSpec {
  double server = 0.50;
  double client_a = 0.25;
  double client_b = 0.25;
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::size_t> server;
  std::vector<std::size_t> client_a;
  std::vector<std::size_t> client_b;
};

// Seeded shuffle, then contiguous partition. Client sizes are
// floor(n * fraction); the server split takes the remainder.
SplitIndices split_indices(std::size_t count, const SplitSpec& spec);

struct DatasetSplit {
  Dataset server;
  Dataset client_a;
  Dataset client_b;
};

DatasetSplit split_dataset(const Dataset& dataset, const SplitSpec& spec);

// Fits standardization on the server split and applies it to all three.
Standardization standardize_split(DatasetSplit& split);

}  // namespace em

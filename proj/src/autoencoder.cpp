#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "expertmatch/error.hpp"
#include "expertmatch/expert_index.hpp"
#include "expertmatch/nn/loss.hpp"

namespace em {

using nn::ActivationKind;
using nn::Matrix;

namespace {

constexpr std::size_t kInferenceChunk = 256;

nn::Network build_autoencoder(ActivationKind output) {
  std::vector<nn::Layer> layers;
  layers.emplace_back(nn::DenseLayer(kSampleDim, kHiddenDim));
  layers.emplace_back(nn::BatchNorm1d(kHiddenDim));
  layers.emplace_back(nn::Activation(ActivationKind::kRelu));
  layers.emplace_back(nn::DenseLayer(kHiddenDim, kSampleDim));
  layers.emplace_back(nn::Activation(output));
  return nn::Network(std::move(layers));
}

Matrix stack(std::span<const Sample> samples) {
  Matrix m(samples.size(), kSampleDim);
  for (std::size_t r = 0; r < samples.size(); ++r) {
    std::copy(samples[r].storage().begin(), samples[r].storage().end(), m.row(r).begin());
  }
  return m;
}

Matrix gather(std::span<const Sample> samples, const std::vector<std::size_t>& rows) {
  Matrix m(rows.size(), kSampleDim);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& v = samples[rows[r]].storage();
    std::copy(v.begin(), v.end(), m.row(r).begin());
  }
  return m;
}

}  // namespace

Autoencoder::Autoencoder(ActivationKind output) : network_(build_autoencoder(output)) {
  network_.set_mode(nn::Mode::kEval);
}

Autoencoder::Autoencoder(nn::Network network) : network_(std::move(network)) {
  const auto bad = [](const std::string& why) {
    fail(ErrorCode::kInvalidArgument, "autoencoder layout: " + why);
  };
  if (network_.layer_count() != 5) bad("expected 5 layers");
  const auto* enc = std::get_if<nn::DenseLayer>(&network_.layer(0));
  const auto* bn = std::get_if<nn::BatchNorm1d>(&network_.layer(1));
  const auto* relu = std::get_if<nn::Activation>(&network_.layer(2));
  const auto* dec = std::get_if<nn::DenseLayer>(&network_.layer(3));
  const auto* out = std::get_if<nn::Activation>(&network_.layer(4));
  if (!enc || !bn || !relu || !dec || !out) bad("layer kinds");
  if (enc->in_dim() != kSampleDim || enc->out_dim() != kHiddenDim) bad("encoder must be 784->128");
  if (bn->features() != kHiddenDim) bad("batch norm must have 128 features");
  if (relu->kind() != ActivationKind::kRelu) bad("hidden activation must be relu");
  if (dec->in_dim() != kHiddenDim || dec->out_dim() != kSampleDim) bad("decoder must be 128->784");
  network_.set_mode(nn::Mode::kEval);
}

void Autoencoder::initialize(Rng& rng) {
  std::get<nn::DenseLayer>(network_.layer(0)).initialize(nn::InitScheme::kHeUniform, rng);
  std::get<nn::DenseLayer>(network_.layer(3)).initialize(nn::InitScheme::kXavierUniform, rng);
}

ActivationKind Autoencoder::output_activation() const {
  return std::get<nn::Activation>(network_.layer(4)).kind();
}
const nn::DenseLayer& Autoencoder::encoder() const {
  return std::get<nn::DenseLayer>(network_.layer(0));
}
const nn::BatchNorm1d& Autoencoder::encoder_norm() const {
  return std::get<nn::BatchNorm1d>(network_.layer(1));
}
const nn::DenseLayer& Autoencoder::decoder() const {
  return std::get<nn::DenseLayer>(network_.layer(3));
}

Matrix Autoencoder::encode_batch(const Matrix& batch) const {
  return network_.infer(batch, 0, kEncoderLayers);
}

Matrix Autoencoder::reconstruct_batch(const Matrix& batch) const { return network_.infer(batch); }

std::vector<double> Autoencoder::encode(const Sample& x) const {
  return encode_batch(Matrix(1, kSampleDim, x.storage())).storage();
}

std::vector<double> Autoencoder::reconstruct(const Sample& x) const {
  return reconstruct_batch(Matrix(1, kSampleDim, x.storage())).storage();
}

double Autoencoder::reconstruction_loss(const Sample& x) const {
  const std::vector<double> y = reconstruct(x);
  const auto v = x.values();
  double sum = 0.0;
  for (std::size_t i = 0; i < kSampleDim; ++i) {
    const double d = y[i] - v[i];
    sum += d * d;
  }
  return sum / static_cast<double>(kSampleDim);
}

std::vector<double> Autoencoder::reconstruction_losses(std::span<const Sample> xs) const {
  std::vector<double> out;
  out.reserve(xs.size());
  for (std::size_t start = 0; start < xs.size(); start += kInferenceChunk) {
    const auto chunk = xs.subspan(start, std::min(kInferenceChunk, xs.size() - start));
    const Matrix y = reconstruct_batch(stack(chunk));
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      const auto yr = y.row(r);
      const auto v = chunk[r].values();
      double sum = 0.0;
      for (std::size_t i = 0; i < kSampleDim; ++i) {
        const double d = yr[i] - v[i];
        sum += d * d;
      }
      out.push_back(sum / static_cast<double>(kSampleDim));
    }
  }
  return out;
}

Autoencoder train_autoencoder(std::span<const Sample> samples, const nn::TrainConfig& config,
                              ActivationKind output, TrainReport* report) {
  nn::validate(config);
  if (samples.size() < config.batch_size) {
    fail(ErrorCode::kInvalidArgument,
         "train_autoencoder needs at least batch_size (" + std::to_string(config.batch_size) +
             ") samples, got " + std::to_string(samples.size()));
  }
  Rng rng(config.seed);
  Autoencoder model(output);
  model.initialize(rng);
  nn::Network& net = model.network();
  net.set_mode(nn::Mode::kTrain);
  const std::vector<nn::ParamRef> params = net.parameters();
  nn::AdamState adam;

  if (report) report->epoch_loss.clear();
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const double lr = nn::lr_at_epoch(config, epoch);
    double total = 0.0;
    const auto batches = nn::make_batches(samples.size(), config.batch_size, rng);
    for (const auto& rows : batches) {
      const Matrix x = gather(samples, rows);
      net.zero_grad();
      const Matrix y = net.forward(x);
      const nn::LossResult loss = nn::mse_loss(y, x);
      net.backward(loss.grad);
      nn::adam_step(params, adam, lr);
      total += loss.loss;
    }
    if (report) report->epoch_loss.push_back(total / static_cast<double>(batches.size()));
  }
  net.set_mode(nn::Mode::kEval);
  net.zero_grad();
  net.clear_caches();
  return model;
}

ClassCentroids compute_centroids(const Autoencoder& model, std::span<const Sample> labeled,
                                 std::optional<int> num_classes) {
  if (labeled.empty()) fail(ErrorCode::kEmpty, "compute_centroids needs at least one sample");
  std::map<int, std::pair<std::vector<double>, std::uint64_t>> sums;
  for (std::size_t start = 0; start < labeled.size(); start += kInferenceChunk) {
    const auto chunk = labeled.subspan(start, std::min(kInferenceChunk, labeled.size() - start));
    const Matrix h = model.encode_batch(stack(chunk));
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      const auto label = chunk[r].label();
      if (!label) fail(ErrorCode::kInvalidArgument, "compute_centroids: sample without a label");
      if (num_classes && (*label < 0 || *label >= *num_classes)) {
        fail(ErrorCode::kInvalidArgument, "compute_centroids: label " + std::to_string(*label) +
                                              " outside [0, " + std::to_string(*num_classes) + ")");
      }
      auto& [sum, count] = sums[*label];
      if (sum.empty()) sum.assign(kHiddenDim, 0.0);
      const auto hr = h.row(r);
      for (std::size_t i = 0; i < kHiddenDim; ++i) sum[i] += hr[i];
      ++count;
    }
  }
  if (num_classes && sums.size() != static_cast<std::size_t>(*num_classes)) {
    fail(ErrorCode::kInvalidArgument, "compute_centroids: only " + std::to_string(sums.size()) +
                                          " of " + std::to_string(*num_classes) +
                                          " classes have samples");
  }
  ClassCentroids out;
  for (auto& [label, acc] : sums) {
    auto& [sum, count] = acc;
    double norm = 0.0;
    for (double& v : sum) {
      v /= static_cast<double>(count);
      norm += v * v;
    }
    if (!(norm > 0.0)) {
      fail(ErrorCode::kDegenerate, "centroid of class " + std::to_string(label) + " has zero norm");
    }
    out.class_ids.push_back(label);
    out.centroids.push_back(std::move(sum));
    out.counts.push_back(count);
  }
  return out;
}

}  // namespace em

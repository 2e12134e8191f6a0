#include "expertmatch/evaluate.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>

#include <json.hpp>

#include "expertmatch/error.hpp"
#include "expertmatch/matcher.hpp"
#include "expertmatch/nn/loss.hpp"

namespace em {

using nn::Matrix;

namespace {

constexpr std::size_t kChunk = 256;

Matrix stack(std::span<const Sample> samples) {
  Matrix m(samples.size(), kSampleDim);
  for (std::size_t r = 0; r < samples.size(); ++r) {
    std::copy(samples[r].storage().begin(), samples[r].storage().end(), m.row(r).begin());
  }
  return m;
}

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

// ---- Accuracy tables ----------------------------------------------------------

double AccuracyTable::client_average(const std::string& client) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& c : cells) {
    if (c.client == client) {
      sum += c.accuracy();
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

std::size_t AccuracyTable::client_total(const std::string& client) const {
  std::size_t total = 0;
  for (const auto& c : cells) {
    if (c.client == client) total += c.total;
  }
  return total;
}

std::vector<std::string> AccuracyTable::clients() const {
  std::vector<std::string> out;
  for (const auto& c : cells) {
    if (std::find(out.begin(), out.end(), c.client) == out.end()) out.push_back(c.client);
  }
  return out;
}

const AccuracyCell* AccuracyTable::find(const std::string& dataset, const std::string& client) const {
  for (const auto& c : cells) {
    if (c.dataset == dataset && c.client == client) return &c;
  }
  return nullptr;
}

AccuracyTable eval_coarse(const Registry& registry, std::span<const ClientSet> clients) {
  AccuracyTable table;
  for (const auto& set : clients) {
    const auto target = registry.index_of(set.dataset);
    if (!target) fail(ErrorCode::kNotFound, "dataset '" + set.dataset + "' has no expert in the registry");
    AccuracyCell cell{set.dataset, set.client, 0, set.samples.size()};
    for (const auto& r : coarse_match_batch(registry, set.samples)) {
      if (r.coarse_index == *target) ++cell.correct;
    }
    table.cells.push_back(std::move(cell));
  }
  return table;
}

FineEval eval_fine(const ExpertEntry& entry, std::span<const Sample> labeled) {
  if (!entry.centroids) {
    fail(ErrorCode::kCapability, "expert '" + entry.expert_id + "' has no class centroids");
  }
  const ClassCentroids& centroids = *entry.centroids;
  FineEval out;
  for (std::size_t start = 0; start < labeled.size(); start += kChunk) {
    const auto chunk = labeled.subspan(start, std::min(kChunk, labeled.size() - start));
    const Matrix h = entry.autoencoder.encode_batch(stack(chunk));
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      const auto label = chunk[r].label();
      if (!label) fail(ErrorCode::kInvalidArgument, "eval_fine: sample without a label");
      if (std::find(centroids.class_ids.begin(), centroids.class_ids.end(), *label) ==
          centroids.class_ids.end()) {
        fail(ErrorCode::kInvalidArgument, "eval_fine: label " + std::to_string(*label) +
                                              " is not a class of expert '" + entry.expert_id + "'");
      }
      const FineMatch m = fine_match_encoded(centroids, h.row(r));
      ++out.total;
      if (m.fine_class == *label) ++out.correct;
    }
  }
  return out;
}

// ---- MLP baseline -------------------------------------------------------------

DatasetClassifier::DatasetClassifier(std::vector<std::string> dataset_names)
    : names_(std::move(dataset_names)) {
  if (names_.size() < 2) fail(ErrorCode::kInvalidArgument, "dataset classifier needs at least 2 datasets");
  std::vector<nn::Layer> layers;
  layers.emplace_back(nn::DenseLayer(kSampleDim, 256));
  layers.emplace_back(nn::BatchNorm1d(256));
  layers.emplace_back(nn::Activation(nn::ActivationKind::kRelu));
  layers.emplace_back(nn::DenseLayer(256, 128));
  layers.emplace_back(nn::BatchNorm1d(128));
  layers.emplace_back(nn::Activation(nn::ActivationKind::kRelu));
  layers.emplace_back(nn::DenseLayer(128, names_.size()));
  network_ = nn::Network(std::move(layers));
  network_.set_mode(nn::Mode::kEval);
}

std::vector<int> DatasetClassifier::predict(std::span<const Sample> samples) const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const auto chunk = samples.subspan(start, std::min(kChunk, samples.size() - start));
    const Matrix logits = network_.infer(stack(chunk));
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      const auto row = logits.row(r);
      out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  return out;
}

DatasetClassifier train_mlp_baseline(std::span<const NamedSamples> datasets,
                                     const nn::TrainConfig& config,
                                     std::vector<double>* epoch_loss) {
  if (datasets.size() < 2) fail(ErrorCode::kInvalidArgument, "MLP baseline needs at least 2 datasets");
  nn::validate(config);
  std::vector<std::string> names;
  std::vector<const Sample*> rows;
  std::vector<int> labels;
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    names.push_back(datasets[d].dataset);
    for (const auto& s : datasets[d].samples) {
      rows.push_back(&s);
      labels.push_back(static_cast<int>(d));
    }
  }
  if (rows.size() < config.batch_size) {
    fail(ErrorCode::kInvalidArgument, "MLP baseline needs at least batch_size samples");
  }
  DatasetClassifier model(std::move(names));
  Rng rng(config.seed);
  nn::Network& net = model.network();
  const std::size_t n_layers = net.layer_count();
  for (std::size_t i = 0; i < n_layers; ++i) {
    if (auto* dense = std::get_if<nn::DenseLayer>(&net.layer(i))) {
      dense->initialize(i + 1 == n_layers ? nn::InitScheme::kXavierUniform : nn::InitScheme::kHeUniform, rng);
    }
  }
  net.set_mode(nn::Mode::kTrain);
  const auto params = net.parameters();
  nn::AdamState adam;
  if (epoch_loss) epoch_loss->clear();
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const double lr = nn::lr_at_epoch(config, epoch);
    const auto batches = nn::make_batches(rows.size(), config.batch_size, rng);
    double total = 0.0;
    for (const auto& batch : batches) {
      Matrix x(batch.size(), kSampleDim);
      std::vector<int> y(batch.size());
      for (std::size_t r = 0; r < batch.size(); ++r) {
        const auto& v = rows[batch[r]]->storage();
        std::copy(v.begin(), v.end(), x.row(r).begin());
        y[r] = labels[batch[r]];
      }
      net.zero_grad();
      const Matrix logits = net.forward(x);
      const nn::LossResult loss = nn::softmax_cross_entropy(logits, y);
      net.backward(loss.grad);
      nn::adam_step(params, adam, lr);
      total += loss.loss;
    }
    if (epoch_loss) epoch_loss->push_back(total / static_cast<double>(batches.size()));
  }
  net.set_mode(nn::Mode::kEval);
  net.zero_grad();
  net.clear_caches();
  return model;
}

AccuracyTable eval_dataset_id(const DatasetClassifier& classifier, std::span<const ClientSet> clients) {
  const auto& names = classifier.dataset_names();
  AccuracyTable table;
  for (const auto& set : clients) {
    const auto it = std::find(names.begin(), names.end(), set.dataset);
    if (it == names.end()) fail(ErrorCode::kNotFound, "dataset '" + set.dataset + "' unknown to the classifier");
    const int target = static_cast<int>(it - names.begin());
    AccuracyCell cell{set.dataset, set.client, 0, set.samples.size()};
    for (int p : classifier.predict(set.samples)) {
      if (p == target) ++cell.correct;
    }
    table.cells.push_back(std::move(cell));
  }
  return table;
}

// ---- Config -------------------------------------------------------------------

namespace {

using nlohmann::json;

std::string resolve(const std::string& path, const std::filesystem::path& base) {
  if (path.empty() || base.empty()) return path;
  const std::filesystem::path p(path);
  return p.is_absolute() ? path : (base / p).string();
}

DatasetSpec dataset_from_json(const json& j, const std::filesystem::path& base) {
  DatasetSpec spec;
  spec.name = j.at("name").get<std::string>();
  const std::string loader = j.at("loader").get<std::string>();
  spec.num_classes = j.value("classes", 0);
  spec.standardize = j.value("standardize", false);
  if (loader == "idx-images") {
    spec.loader = DatasetLoader::kIdxImages;
    spec.images_path = resolve(j.at("images").get<std::string>(), base);
    spec.labels_path = resolve(j.at("labels").get<std::string>(), base);
  } else if (loader == "csv-vectors") {
    spec.loader = DatasetLoader::kCsvVectors;
    spec.csv_path = resolve(j.at("path").get<std::string>(), base);
  } else if (loader == "synthetic") {
    spec.loader = DatasetLoader::kSynthetic;
    SyntheticSpec& s = spec.synthetic;
    s.name = spec.name;
    s.kind = parse_input_kind(j.value("kind", std::string("vector")));
    s.dims = j.value("dims", s.dims);
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    s.channels = j.value("channels", s.channels);
    s.num_classes = j.at("classes").get<int>();
    s.count = j.at("count").get<std::size_t>();
    s.margin = j.value("margin", s.margin);
    s.sigma = j.value("sigma", s.sigma);
    s.structured_fraction = j.value("structured_fraction", s.structured_fraction);
    s.rank = j.value("rank", s.rank);
    s.base_level = j.value("base_level", s.base_level);
    s.base_spread = j.value("base_spread", s.base_spread);
    s.class_weights = j.value("class_weights", std::vector<double>{});
    s.seed = j.value("seed", s.seed);
  } else {
    fail(ErrorCode::kInvalidArgument, "unknown dataset loader '" + loader + "'");
  }
  if (spec.loader != DatasetLoader::kSynthetic && spec.num_classes < 0) {
    fail(ErrorCode::kInvalidArgument, "dataset '" + spec.name + "': classes must be positive");
  }
  return spec;
}

template <typename Fn>
auto guarded_json(Fn&& fn) {
  try {
    return fn();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("config: ") + e.what());
  }
}

}  // namespace

DatasetSpec parse_dataset_spec(const std::string& json_text) {
  return guarded_json([&] { return dataset_from_json(json::parse(json_text), {}); });
}

Dataset load_dataset(const DatasetSpec& spec) {
  Dataset d;
  switch (spec.loader) {
    case DatasetLoader::kIdxImages: d = load_idx(spec.images_path, spec.labels_path, spec.name); break;
    case DatasetLoader::kCsvVectors: d = load_csv_vectors(spec.csv_path, spec.name); break;
    case DatasetLoader::kSynthetic: d = generate_synthetic(spec.synthetic); break;
  }
  if (spec.num_classes > 0) {
    if (d.num_classes > spec.num_classes) {
      fail(ErrorCode::kInvalidArgument, "dataset '" + spec.name + "' has labels beyond its " +
                                            std::to_string(spec.num_classes) + " classes");
    }
    d.num_classes = spec.num_classes;
  }
  return d;
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  return guarded_json([&] {
    const json j = json::parse(json_text);
    const std::filesystem::path base = j.value("base_dir", std::string());
    ExperimentConfig cfg;
    for (const auto& d : j.at("datasets")) cfg.datasets.push_back(dataset_from_json(d, base));
    if (cfg.datasets.empty()) fail(ErrorCode::kInvalidArgument, "config lists no datasets");
    std::set<std::string> names;
    for (const auto& d : cfg.datasets) {
      if (!names.insert(d.name).second) fail(ErrorCode::kInvalidArgument, "duplicate dataset name '" + d.name + "'");
    }
    if (j.contains("split")) {
      const json& s = j.at("split");
      cfg.split.server = s.value("server", cfg.split.server);
      cfg.split.client_a = s.value("client_a", cfg.split.client_a);
      cfg.split.client_b = s.value("client_b", cfg.split.client_b);
      cfg.split.seed = s.value("seed", cfg.split.seed);
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      cfg.train.initial_lr = t.value("lr", cfg.train.initial_lr);
      cfg.train.decay_factor = t.value("decay_factor", cfg.train.decay_factor);
      cfg.train.decay_every = t.value("decay_every", cfg.train.decay_every);
      cfg.train.max_epochs = t.value("epochs", cfg.train.max_epochs);
      cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
      cfg.train.seed = t.value("seed", cfg.train.seed);
    }
    cfg.centroids = j.value("centroids", cfg.centroids);
    cfg.mlp_baseline = j.value("mlp_baseline", cfg.mlp_baseline);
    if (j.contains("max_train_samples") && !j.at("max_train_samples").is_null()) {
      cfg.max_train_samples = j.at("max_train_samples").get<std::size_t>();
    }
    nn::validate(cfg.train);
    return cfg;
  });
}

// ---- Protocol -----------------------------------------------------------------

namespace {

void note(ProgressFn progress, void* user, const std::string& msg) {
  if (progress) progress(msg.c_str(), user);
}

nn::ActivationKind output_activation_for(const Dataset& d, bool standardized) {
  return d.kind == InputKind::kImage && !standardized ? nn::ActivationKind::kSigmoid
                                                      : nn::ActivationKind::kIdentity;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& config, ProgressFn progress, void* user) {
  nn::validate(config.train);
  ExperimentReport report;
  std::vector<DatasetSplit> splits;
  std::vector<std::uint64_t> seeds;

  for (std::size_t i = 0; i < config.datasets.size(); ++i) {
    const DatasetSpec& spec = config.datasets[i];
    note(progress, user, "loading " + spec.name);
    const Dataset data = load_dataset(spec);
    DatasetSplit split = split_dataset(data, config.split);
    report.split_sizes[spec.name + "/server"] = split.server.size();
    report.split_sizes[spec.name + "/client_a"] = split.client_a.size();
    report.split_sizes[spec.name + "/client_b"] = split.client_b.size();

    ExpertEntry entry;
    entry.expert_id = spec.name;
    entry.display_name = spec.name;
    entry.preprocessing.kind = data.kind;
    entry.preprocessing.source_length = data.source_length;
    if (spec.standardize) entry.preprocessing.standardization = standardize_split(split);

    std::span<const Sample> train = split.server.samples;
    if (config.max_train_samples && train.size() > *config.max_train_samples) {
      train = train.first(*config.max_train_samples);
    }
    nn::TrainConfig tc = config.train;
    tc.seed = config.train.seed + i;
    seeds.push_back(tc.seed);
    note(progress, user, "training autoencoder for " + spec.name + " on " +
                             std::to_string(train.size()) + " samples (seed " + std::to_string(tc.seed) + ")");
    entry.autoencoder = train_autoencoder(train, tc, output_activation_for(data, spec.standardize));
    entry.fingerprint = {tc.seed, tc.max_epochs, train.size()};
    if (config.centroids) {
      entry.centroids = compute_centroids(entry.autoencoder, split.server.samples,
                                          data.num_classes > 0 ? std::optional<int>(data.num_classes) : std::nullopt);
    }
    report.registry.add(std::move(entry));
    splits.push_back(std::move(split));
  }

  std::vector<ClientSet> clients;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    clients.push_back({config.datasets[i].name, "A", splits[i].client_a.samples});
  }
  for (std::size_t i = 0; i < splits.size(); ++i) {
    clients.push_back({config.datasets[i].name, "B", splits[i].client_b.samples});
  }

  note(progress, user, "coarse assignment");
  report.coarse = eval_coarse(report.registry, clients);

  if (config.centroids) {
    note(progress, user, "fine assignment");
    for (const auto& set : clients) {
      const ExpertEntry& entry = report.registry.at(*report.registry.index_of(set.dataset));
      const FineEval fe = eval_fine(entry, set.samples);
      report.fine.cells.push_back({set.dataset, set.client, fe.correct, fe.total});

      const std::size_t target = *report.registry.index_of(set.dataset);
      AccuracyCell cell{set.dataset, set.client, 0, set.samples.size()};
      for (const auto& s : set.samples) {
        const MatchResult m = hierarchical_match(report.registry, s);
        if (m.coarse_index == target && m.fine && m.fine->fine_class == *s.label()) ++cell.correct;
      }
      report.hierarchical.cells.push_back(std::move(cell));
    }
  }

  if (config.mlp_baseline && splits.size() >= 2) {
    note(progress, user, "training MLP baseline");
    std::vector<NamedSamples> named;
    for (std::size_t i = 0; i < splits.size(); ++i) {
      std::span<const Sample> train = splits[i].server.samples;
      if (config.max_train_samples && train.size() > *config.max_train_samples) {
        train = train.first(*config.max_train_samples);
      }
      named.push_back({config.datasets[i].name, train});
    }
    nn::TrainConfig tc = config.train;
    tc.seed = config.train.seed + splits.size();
    seeds.push_back(tc.seed);
    const DatasetClassifier mlp = train_mlp_baseline(named, tc);
    report.mlp = eval_dataset_id(mlp, clients);
  }

  const auto emit = [&](const AccuracyTable& t, const std::string& metric) {
    for (const auto& c : t.cells) {
      const std::size_t idx = *report.registry.index_of(c.dataset);
      report.rows.push_back({c.dataset, c.client, metric, c.accuracy(), seeds[idx]});
    }
    for (const auto& client : t.clients()) {
      report.rows.push_back({"average", client, metric, t.client_average(client), config.train.seed});
    }
  };
  emit(report.coarse, "ca_accuracy");
  if (config.centroids) {
    emit(report.fine, "fa_accuracy");
    emit(report.hierarchical, "ca_fa_accuracy");
  }
  if (report.mlp) {
    for (const auto& c : report.mlp->cells) {
      report.rows.push_back({c.dataset, c.client, "mlp_accuracy", c.accuracy(), seeds.back()});
    }
    for (const auto& client : report.mlp->clients()) {
      report.rows.push_back({"average", client, "mlp_accuracy", report.mlp->client_average(client), seeds.back()});
    }
  }
  for (const auto& [key, count] : report.split_sizes) {
    const auto slash = key.find('/');
    report.rows.push_back({key.substr(0, slash), key.substr(slash + 1), "samples",
                           static_cast<double>(count), config.split.seed});
  }
  return report;
}

std::string ExperimentReport::csv() const {
  std::ostringstream out;
  out << "dataset,client,metric,value,seed\n";
  for (const auto& r : rows) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", r.value);
    out << r.dataset << ',' << r.client << ',' << r.metric << ',' << buf << ',' << r.seed << '\n';
  }
  return out.str();
}

std::string ExperimentReport::text() const {
  std::ostringstream out;
  const auto table = [&](const std::string& title, const AccuracyTable& t) {
    out << title << "\n";
    std::vector<std::string> datasets;
    for (const auto& c : t.cells) {
      if (std::find(datasets.begin(), datasets.end(), c.dataset) == datasets.end()) datasets.push_back(c.dataset);
    }
    out << "  client";
    for (const auto& d : datasets) out << "  " << d;
    out << "  average  samples\n";
    for (const auto& client : t.clients()) {
      out << "  " << client;
      for (const auto& d : datasets) {
        const AccuracyCell* c = t.find(d, client);
        out << "  " << (c ? fmt2(c->accuracy()) : std::string("-"));
      }
      out << "  " << fmt2(t.client_average(client)) << "  " << t.client_total(client) << "\n";
    }
  };
  table("Coarse assignment (min reconstruction MSE), accuracy %", coarse);
  if (!fine.cells.empty()) {
    table("Fine assignment (max cosine to class centroid, true expert), accuracy %", fine);
    table("Hierarchical CA->FA, accuracy %", hierarchical);
  }
  if (mlp) table("MLP-softmax dataset identification, accuracy %", *mlp);
  out << "Seeds:";
  for (const auto& e : registry.entries()) out << " " << e.expert_id << "=" << e.fingerprint.seed;
  out << "\n";
  return out.str();
}

}  // namespace em

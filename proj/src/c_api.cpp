#include "expertmatch/c_api.h"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "expertmatch/datasets.hpp"
#include "expertmatch/evaluate.hpp"
#include "expertmatch/service.hpp"

struct em_dataset {
  em::Dataset data;
};
struct em_expert {
  em::ExpertEntry entry;
};
struct em_registry {
  em::Registry registry;
};
struct em_report {
  em::ExperimentReport report;
};
struct em_server {
  std::unique_ptr<em::service::Server> server;
};

namespace {

thread_local std::string g_last_error;

template <typename Fn>
em_status guard(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return EM_OK;
  } catch (const em::Error& e) {
    g_last_error = e.what();
    return static_cast<em_status>(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return EM_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return EM_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) em::fail(em::ErrorCode::kInvalidArgument, std::string(what) + " is null");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::string read_text(const char* path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) em::fail(em::ErrorCode::kIo, std::string("cannot open ") + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

extern "C" {

const char* em_last_error(void) { return g_last_error.c_str(); }

const char* em_status_name(em_status status) {
  if (status == EM_OK) return "ok";
  return em::error_code_name(static_cast<em::ErrorCode>(status));
}

void em_string_free(char* s) { std::free(s); }

// ---- Datasets ----

em_status em_dataset_load_idx(const char* images_path, const char* labels_path, const char* name,
                              em_dataset** out) {
  return guard([&] {
    require(images_path, "images_path");
    require(labels_path, "labels_path");
    require(out, "out");
    *out = new em_dataset{em::load_idx(images_path, labels_path, name ? name : "idx")};
  });
}

em_status em_dataset_load_csv(const char* path, const char* name, em_dataset** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = new em_dataset{em::load_csv_vectors(path, name ? name : "csv")};
  });
}

em_status em_dataset_from_spec(const char* spec_json, em_dataset** out) {
  return guard([&] {
    require(spec_json, "spec_json");
    require(out, "out");
    *out = new em_dataset{em::load_dataset(em::parse_dataset_spec(spec_json))};
  });
}

size_t em_dataset_size(const em_dataset* d) { return d ? d->data.size() : 0; }
int em_dataset_num_classes(const em_dataset* d) { return d ? d->data.num_classes : 0; }
const char* em_dataset_name(const em_dataset* d) { return d ? d->data.name.c_str() : ""; }
void em_dataset_free(em_dataset* d) { delete d; }

em_status em_synthetic_write(const char* spec_json, const char* out_prefix) {
  return guard([&] {
    require(spec_json, "spec_json");
    require(out_prefix, "out_prefix");
    const em::DatasetSpec spec = em::parse_dataset_spec(spec_json);
    if (spec.loader != em::DatasetLoader::kSynthetic) {
      em::fail(em::ErrorCode::kInvalidArgument, "spec loader must be 'synthetic'");
    }
    const em::SyntheticSpec& s = spec.synthetic;
    const em::SyntheticData data = em::generate_synthetic_native(s);
    const std::string prefix(out_prefix);
    if (s.kind == em::InputKind::kPooledVector) {
      em::write_csv_vectors(prefix + ".csv", data.labels, data.native);
      return;
    }
    std::vector<std::uint8_t> pixels;
    pixels.reserve(data.native.size() * s.native_length());
    for (const auto& img : data.native) {
      for (double v : img) pixels.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    }
    std::vector<std::uint8_t> labels(data.labels.begin(), data.labels.end());
    em::write_idx_images(prefix + "-images-idx3-ubyte", s.height, s.width, s.channels, pixels, data.native.size());
    em::write_idx_labels(prefix + "-labels-idx1-ubyte", labels);
  });
}

// ---- Experts ----

void em_train_options_default(em_train_options* o) {
  if (!o) return;
  const em::nn::TrainConfig c;
  o->learning_rate = c.initial_lr;
  o->decay_factor = c.decay_factor;
  o->decay_every = static_cast<uint32_t>(c.decay_every);
  o->epochs = static_cast<uint32_t>(c.max_epochs);
  o->batch_size = static_cast<uint32_t>(c.batch_size);
  o->seed = c.seed;
  o->use_server_split = 0;
  o->split_seed = 0;
  o->standardize = 0;
  o->compute_centroids = 1;
}

em_status em_expert_train(const em_dataset* d, const char* expert_id, const em_train_options* options,
                          em_expert** out) {
  return guard([&] {
    require(d, "dataset");
    require(out, "out");
    em_train_options o;
    em_train_options_default(&o);
    if (options) o = *options;
    em::nn::TrainConfig cfg;
    cfg.initial_lr = o.learning_rate;
    cfg.decay_factor = o.decay_factor;
    cfg.decay_every = o.decay_every;
    cfg.max_epochs = o.epochs;
    cfg.batch_size = o.batch_size;
    cfg.seed = o.seed;
    em::nn::validate(cfg);

    em::Dataset train = d->data;
    if (o.use_server_split) {
      em::SplitSpec split;
      split.seed = o.split_seed;
      train = em::split_dataset(d->data, split).server;
    }
    em::ExpertEntry e;
    e.expert_id = expert_id && *expert_id ? expert_id : d->data.name;
    e.display_name = e.expert_id;
    e.preprocessing.kind = train.kind;
    e.preprocessing.source_length = train.source_length;
    if (o.standardize) {
      const em::Standardization st = em::fit_standardization(train.samples);
      for (auto& s : train.samples) {
        const auto label = s.label();
        s = em::standardize(s, st);
        s.set_label(label);
      }
      e.preprocessing.standardization = st;
    }
    const auto act = train.kind == em::InputKind::kImage && !o.standardize ? em::nn::ActivationKind::kSigmoid
                                                                          : em::nn::ActivationKind::kIdentity;
    e.autoencoder = em::train_autoencoder(train.samples, cfg, act);
    e.fingerprint = {cfg.seed, cfg.max_epochs, train.size()};
    if (o.compute_centroids) {
      e.centroids = em::compute_centroids(e.autoencoder, train.samples);
    }
    em::validate(e);
    *out = new em_expert{std::move(e)};
  });
}

em_status em_expert_compute_centroids(em_expert* e, const em_dataset* d) {
  return guard([&] {
    require(e, "expert");
    require(d, "dataset");
    std::vector<em::Sample> samples = d->data.samples;
    if (const auto& st = e->entry.preprocessing.standardization) {
      for (auto& s : samples) {
        const auto label = s.label();
        s = em::standardize(s, *st);
        s.set_label(label);
      }
    }
    e->entry.centroids = em::compute_centroids(e->entry.autoencoder, samples);
  });
}

em_status em_expert_load(const char* path, em_expert** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = new em_expert{em::service::expert_from_wire(read_text(path))};
  });
}

em_status em_expert_save(const em_expert* e, const char* path) {
  return guard([&] {
    require(e, "expert");
    require(path, "path");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) em::fail(em::ErrorCode::kIo, std::string("cannot write ") + path);
    f << em::service::expert_to_wire(e->entry);
    if (!f.flush()) em::fail(em::ErrorCode::kIo, std::string("write failed: ") + path);
  });
}

em_status em_expert_to_json(const em_expert* e, char** out_json) {
  return guard([&] {
    require(e, "expert");
    require(out_json, "out_json");
    *out_json = dup_string(em::service::expert_to_wire(e->entry));
  });
}

em_status em_expert_from_json(const char* json, em_expert** out) {
  return guard([&] {
    require(json, "json");
    require(out, "out");
    *out = new em_expert{em::service::expert_from_wire(json)};
  });
}

const char* em_expert_id(const em_expert* e) { return e ? e->entry.expert_id.c_str() : ""; }
void em_expert_free(em_expert* e) { delete e; }

// ---- Registries ----

em_status em_registry_new(em_registry** out) {
  return guard([&] {
    require(out, "out");
    *out = new em_registry{};
  });
}

em_status em_registry_load(const char* path, em_registry** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = new em_registry{em::load_registry(path)};
  });
}

em_status em_registry_save(const em_registry* r, const char* path) {
  return guard([&] {
    require(r, "registry");
    require(path, "path");
    em::save_registry(r->registry, path);
  });
}

em_status em_registry_add(em_registry* r, const em_expert* e) {
  return guard([&] {
    require(r, "registry");
    require(e, "expert");
    r->registry.add(e->entry);
  });
}

size_t em_registry_size(const em_registry* r) { return r ? r->registry.size() : 0; }

em_status em_registry_describe(const em_registry* r, char** out_json) {
  return guard([&] {
    require(r, "registry");
    require(out_json, "out_json");
    nlohmann::json list = nlohmann::json::array();
    for (std::size_t i = 0; i < r->registry.size(); ++i) {
      const em::ExpertEntry& e = r->registry.at(i);
      nlohmann::json j = {{"index", i},
                          {"expert_id", e.expert_id},
                          {"display_name", e.display_name},
                          {"input_kind", em::input_kind_name(e.preprocessing.kind)},
                          {"source_length", e.preprocessing.source_length},
                          {"standardized", e.preprocessing.standardization.has_value()},
                          {"output_activation", em::nn::activation_name(e.autoencoder.output_activation())},
                          {"fingerprint",
                           {{"seed", e.fingerprint.seed},
                            {"epochs", e.fingerprint.epochs},
                            {"samples", e.fingerprint.samples}}}};
      j["classes"] = e.centroids ? nlohmann::json(e.centroids->class_ids) : nlohmann::json(nullptr);
      list.push_back(std::move(j));
    }
    *out_json = dup_string(nlohmann::json{{"format_version", em::kRegistryFormatVersion}, {"experts", list}}.dump(2));
  });
}

em_status em_registry_match(const em_registry* r, const char* request_json, char** out_response_json) {
  return guard([&] {
    require(r, "registry");
    require(request_json, "request_json");
    require(out_response_json, "out_response_json");
    const auto request = em::service::request_from_wire(request_json);
    *out_response_json = dup_string(em::service::response_to_wire(em::service::execute_match(r->registry, request)));
  });
}

void em_registry_free(em_registry* r) { delete r; }

// ---- Experiments ----

em_status em_experiment_run(const char* config_json, const char* base_dir, em_progress_fn progress, void* user,
                            em_report** out) {
  return guard([&] {
    require(config_json, "config_json");
    require(out, "out");
    nlohmann::json j = nlohmann::json::parse(config_json, nullptr, false);
    if (j.is_discarded() || !j.is_object()) em::fail(em::ErrorCode::kInvalidArgument, "config is not a JSON object");
    if (base_dir && *base_dir) {
      const std::filesystem::path given = j.value("base_dir", std::string());
      j["base_dir"] = given.is_absolute() ? given.string() : (std::filesystem::path(base_dir) / given).string();
    }
    const em::ExperimentConfig cfg = em::parse_experiment_config(j.dump());
    *out = new em_report{em::run_experiment(cfg, progress, user)};
  });
}

em_status em_report_csv(const em_report* r, char** out) {
  return guard([&] {
    require(r, "report");
    require(out, "out");
    *out = dup_string(r->report.csv());
  });
}

em_status em_report_text(const em_report* r, char** out) {
  return guard([&] {
    require(r, "report");
    require(out, "out");
    *out = dup_string(r->report.text());
  });
}

em_status em_report_save_registry(const em_report* r, const char* path) {
  return guard([&] {
    require(r, "report");
    require(path, "path");
    em::save_registry(r->report.registry, path);
  });
}

void em_report_free(em_report* r) { delete r; }

// ---- Service ----

em_status em_server_new(const em_server_options* options, em_server** out) {
  return guard([&] {
    require(out, "out");
    em::service::ServerConfig cfg;
    if (options) {
      if (options->host) cfg.host = options->host;
      cfg.port = options->port;
      if (options->registry_path) cfg.registry_path = options->registry_path;
      if (options->max_body_bytes) cfg.max_body_bytes = options->max_body_bytes;
      if (options->max_experts) cfg.max_experts = options->max_experts;
      if (options->use_environment) cfg = em::service::apply_environment(cfg);
    }
    *out = new em_server{std::make_unique<em::service::Server>(cfg)};
  });
}

em_status em_server_bind(em_server* s, int* out_port) {
  return guard([&] {
    require(s, "server");
    const int port = s->server->bind();
    if (out_port) *out_port = port;
  });
}

em_status em_server_run(em_server* s) {
  return guard([&] {
    require(s, "server");
    s->server->run();
  });
}

void em_server_stop(em_server* s) {
  if (s) s->server->stop();
}

void em_server_free(em_server* s) { delete s; }

em_status em_http_call(const char* base_url, const char* method, const char* path, const char* body,
                       int* out_status, char** out_body) {
  return guard([&] {
    require(base_url, "base_url");
    require(method, "method");
    require(path, "path");
    const auto reply = em::service::http_call(base_url, method, path, body ? body : "");
    if (out_status) *out_status = reply.status;
    if (out_body) *out_body = dup_string(reply.body);
  });
}

}  // extern "C"

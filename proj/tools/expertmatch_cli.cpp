// expertmatch command-line front end. Talks to the library through c_api.h only.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "expertmatch/c_api.h"

namespace {

struct CliError {
  int code;
};

void check(em_status s, const std::string& what) {
  if (s != EM_OK) {
    std::cerr << "error: " << what << ": " << em_status_name(s) << ": " << em_last_error() << "\n";
    throw CliError{static_cast<int>(s) + 1};
  }
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::cerr << "error: cannot open " << path << "\n";
    throw CliError{2};
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string take(char* s) {
  std::string out = s ? s : "";
  em_string_free(s);
  return out;
}

struct DatasetArgs {
  std::string spec;
  std::string idx_images;
  std::string idx_labels;
  std::string csv;
  std::string name;

  void add(CLI::App* app) {
    app->add_option("--dataset", spec, "Dataset spec JSON file");
    app->add_option("--idx-images", idx_images, "IDX image file (gzip allowed)");
    app->add_option("--idx-labels", idx_labels, "IDX label file");
    app->add_option("--csv", csv, "CSV vectors: label,v1,...,vL per row");
    app->add_option("--name", name, "Dataset name");
  }

  em_dataset* load() const {
    em_dataset* d = nullptr;
    if (!spec.empty()) {
      check(em_dataset_from_spec(read_text(spec).c_str(), &d), "load dataset spec");
    } else if (!idx_images.empty()) {
      check(em_dataset_load_idx(idx_images.c_str(), idx_labels.c_str(), name.empty() ? "idx" : name.c_str(), &d),
            "load IDX");
    } else if (!csv.empty()) {
      check(em_dataset_load_csv(csv.c_str(), name.empty() ? "csv" : name.c_str(), &d), "load CSV");
    } else {
      std::cerr << "error: give --dataset, --idx-images/--idx-labels or --csv\n";
      throw CliError{2};
    }
    return d;
  }
};

std::string json_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

em_server* g_server = nullptr;

void on_signal(int) {
  if (g_server) em_server_stop(g_server);
}

void progress(const char* message, void*) { std::cerr << "[eval] " << message << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"expertmatch: route samples to autoencoder experts"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train one autoencoder expert");
  DatasetArgs train_data;
  train_data.add(train);
  std::string train_id, train_out;
  em_train_options topt;
  em_train_options_default(&topt);
  bool no_centroids = false, server_split = false, standardize = false;
  train->add_option("--id", train_id, "Expert id (default: dataset name)");
  train->add_option("-o,--out", train_out, "Output expert JSON")->required();
  train->add_option("--epochs", topt.epochs);
  train->add_option("--batch-size", topt.batch_size);
  train->add_option("--lr", topt.learning_rate);
  train->add_option("--decay-factor", topt.decay_factor);
  train->add_option("--decay-every", topt.decay_every);
  train->add_option("--seed", topt.seed);
  train->add_flag("--server-split", server_split, "Train on the 50% server split only");
  train->add_option("--split-seed", topt.split_seed);
  train->add_flag("--standardize", standardize, "Fit per-feature standardization and store it");
  train->add_flag("--no-centroids", no_centroids);

  // centroids
  auto* cent = app.add_subcommand("centroids", "Recompute an expert's class centroids");
  DatasetArgs cent_data;
  cent_data.add(cent);
  std::string cent_expert, cent_out;
  cent->add_option("--expert", cent_expert, "Expert JSON")->required();
  cent->add_option("-o,--out", cent_out, "Output expert JSON (default: overwrite)");

  // registry
  auto* reg = app.add_subcommand("registry", "Build or inspect registry files");
  reg->require_subcommand(1);
  auto* pack = reg->add_subcommand("pack", "Pack expert JSON files into a registry");
  std::string pack_out;
  std::vector<std::string> pack_in;
  pack->add_option("-o,--out", pack_out, "Registry file")->required();
  pack->add_option("experts", pack_in, "Expert JSON files, in registry order")->required();
  auto* inspect = reg->add_subcommand("inspect", "Print a registry summary");
  std::string inspect_in;
  inspect->add_option("registry", inspect_in)->required();
  auto* push = reg->add_subcommand("push", "Register expert JSON files with a running server");
  std::string push_url;
  std::vector<std::string> push_in;
  push->add_option("--server", push_url, "host:port")->required();
  push->add_option("experts", push_in)->required();

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP matching service");
  std::string serve_registry, serve_listen = "127.0.0.1:8080";
  std::size_t serve_body = 0, serve_k = 0;
  serve->add_option("--registry", serve_registry, "Persisted registry path");
  serve->add_option("--listen", serve_listen, "host:port");
  serve->add_option("--max-body", serve_body, "Request size limit in bytes");
  serve->add_option("--max-experts", serve_k, "Expert count limit");

  // match
  auto* match = app.add_subcommand("match", "Match one sample locally or against a server");
  std::string m_registry, m_server, m_request, m_values, m_resolution = "hierarchical", m_expert, m_standardize;
  std::size_t m_topk = 0;
  match->add_option("--registry", m_registry, "Registry file (local match)");
  match->add_option("--server", m_server, "host:port (remote match)");
  match->add_option("--request", m_request, "Request JSON file");
  match->add_option("--values", m_values, "Comma-separated raw vector");
  match->add_option("--resolution", m_resolution)->check(CLI::IsMember({"coarse", "fine", "hierarchical"}));
  match->add_option("--top-k", m_topk);
  match->add_option("--expert", m_expert, "Expert for fine resolution");
  match->add_option("--standardize-with", m_standardize, "Expert whose standardization applies");

  // eval
  auto* eval = app.add_subcommand("eval", "Run the split / train / evaluate protocol");
  std::string e_config, e_csv, e_registry;
  bool e_quiet = false;
  eval->add_option("--config", e_config, "Experiment config JSON")->required();
  eval->add_option("--csv", e_csv, "Write CSV results here");
  eval->add_option("--registry-out", e_registry, "Save the trained registry");
  eval->add_flag("-q,--quiet", e_quiet);

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "Write a synthetic dataset to CSV or IDX");
  std::string s_spec, s_out;
  synth->add_option("--spec", s_spec, "Synthetic dataset spec JSON")->required();
  synth->add_option("-o,--out", s_out, "Output prefix")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      em_dataset* d = train_data.load();
      topt.use_server_split = server_split;
      topt.standardize = standardize;
      topt.compute_centroids = !no_centroids;
      em_expert* e = nullptr;
      const em_status s = em_expert_train(d, train_id.c_str(), &topt, &e);
      em_dataset_free(d);
      check(s, "train");
      const em_status w = em_expert_save(e, train_out.c_str());
      std::cout << "trained " << em_expert_id(e) << " (seed " << topt.seed << ") -> " << train_out << "\n";
      em_expert_free(e);
      check(w, "save expert");
    } else if (*cent) {
      em_expert* e = nullptr;
      check(em_expert_load(cent_expert.c_str(), &e), "load expert");
      em_dataset* d = cent_data.load();
      const em_status s = em_expert_compute_centroids(e, d);
      em_dataset_free(d);
      const std::string out = cent_out.empty() ? cent_expert : cent_out;
      const em_status w = s == EM_OK ? em_expert_save(e, out.c_str()) : s;
      em_expert_free(e);
      check(w, "centroids");
      std::cout << "centroids written to " << out << "\n";
    } else if (*pack) {
      em_registry* r = nullptr;
      check(em_registry_new(&r), "registry");
      em_status s = EM_OK;
      for (const auto& path : pack_in) {
        em_expert* e = nullptr;
        s = em_expert_load(path.c_str(), &e);
        if (s == EM_OK) s = em_registry_add(r, e);
        em_expert_free(e);
        if (s != EM_OK) break;
      }
      if (s == EM_OK) s = em_registry_save(r, pack_out.c_str());
      const std::size_t n = em_registry_size(r);
      em_registry_free(r);
      check(s, "registry pack");
      std::cout << "packed " << n << " experts into " << pack_out << "\n";
    } else if (*inspect) {
      em_registry* r = nullptr;
      check(em_registry_load(inspect_in.c_str(), &r), "load registry");
      char* text = nullptr;
      const em_status s = em_registry_describe(r, &text);
      em_registry_free(r);
      check(s, "describe");
      std::cout << take(text) << "\n";
    } else if (*push) {
      for (const auto& path : push_in) {
        int status = 0;
        char* body = nullptr;
        check(em_http_call(push_url.c_str(), "POST", "/v1/experts", read_text(path).c_str(), &status, &body),
              "register");
        std::cout << status << " " << take(body) << "\n";
        if (status != 201) throw CliError{1};
      }
    } else if (*serve) {
      const auto colon = serve_listen.rfind(':');
      if (colon == std::string::npos) {
        std::cerr << "error: --listen must be host:port\n";
        return 2;
      }
      const std::string host = serve_listen.substr(0, colon);
      em_server_options opt{host.c_str(), std::stoi(serve_listen.substr(colon + 1)),
                            serve_registry.empty() ? nullptr : serve_registry.c_str(), serve_body, serve_k, 1};
      check(em_server_new(&opt, &g_server), "server");
      int port = 0;
      check(em_server_bind(g_server, &port), "bind");
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "listening on port " << port << "\n";
      const em_status s = em_server_run(g_server);
      em_server_free(g_server);
      g_server = nullptr;
      check(s, "serve");
    } else if (*match) {
      std::string request;
      if (!m_request.empty()) {
        request = read_text(m_request);
      } else if (!m_values.empty()) {
        std::string values;
        std::stringstream ss(m_values);
        for (std::string item; std::getline(ss, item, ',');) {
          values += (values.empty() ? "" : ",") + json_quote(item);
        }
        request = "{\"raw\":{\"kind\":\"vector\",\"values\":[" + values + "]},\"resolution\":" +
                  json_quote(m_resolution);
        if (m_topk) request += ",\"top_k\":" + std::to_string(m_topk);
        if (!m_expert.empty()) request += ",\"expert_id\":" + json_quote(m_expert);
        if (!m_standardize.empty()) request += ",\"standardize_with\":" + json_quote(m_standardize);
        request += "}";
      } else {
        std::cerr << "error: give --request or --values\n";
        return 2;
      }
      if (!m_server.empty()) {
        int status = 0;
        char* body = nullptr;
        check(em_http_call(m_server.c_str(), "POST", "/v1/match", request.c_str(), &status, &body), "match");
        std::cout << take(body) << "\n";
        if (status != 200) return 1;
      } else if (!m_registry.empty()) {
        em_registry* r = nullptr;
        check(em_registry_load(m_registry.c_str(), &r), "load registry");
        char* out = nullptr;
        const em_status s = em_registry_match(r, request.c_str(), &out);
        em_registry_free(r);
        check(s, "match");
        std::cout << take(out) << "\n";
      } else {
        std::cerr << "error: give --registry or --server\n";
        return 2;
      }
    } else if (*eval) {
      const std::string base = std::filesystem::absolute(e_config).parent_path().string();
      em_report* rep = nullptr;
      check(em_experiment_run(read_text(e_config).c_str(), base.c_str(), e_quiet ? nullptr : progress, nullptr, &rep),
            "eval");
      char* text = nullptr;
      char* csv = nullptr;
      em_status s = em_report_text(rep, &text);
      if (s == EM_OK) s = em_report_csv(rep, &csv);
      if (s == EM_OK && !e_registry.empty()) s = em_report_save_registry(rep, e_registry.c_str());
      em_report_free(rep);
      const std::string t = take(text);
      const std::string c = take(csv);
      check(s, "report");
      std::cout << t;
      if (!e_csv.empty()) {
        std::ofstream f(e_csv, std::ios::trunc);
        f << c;
        if (!f.flush()) {
          std::cerr << "error: cannot write " << e_csv << "\n";
          return 1;
        }
      }
    } else if (*synth) {
      check(em_synthetic_write(read_text(s_spec).c_str(), s_out.c_str()), "synth-data");
      std::cout << "wrote " << s_out << "\n";
    }
  } catch (const CliError& e) {
    return e.code;
  }
  return 0;
}

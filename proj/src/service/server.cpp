#include <cstdlib>

#include <httplib.h>
#include <json.hpp>

#include "expertmatch/service.hpp"

namespace em::service {

using nlohmann::json;

int http_status_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kDimension:
    case ErrorCode::kNonFinite:
    case ErrorCode::kBadMagic:
    case ErrorCode::kTruncated:
    case ErrorCode::kChecksum:
    case ErrorCode::kVersion:
    case ErrorCode::kCountMismatch: return 400;
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kConflict:
    case ErrorCode::kState: return 409;
    case ErrorCode::kCapability:
    case ErrorCode::kDegenerate: return 422;
    case ErrorCode::kEmpty: return 503;
    case ErrorCode::kIo:
    case ErrorCode::kInternal: return 500;
  }
  return 500;
}

namespace {

std::size_t parse_size(const char* text, const char* name) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(text, &end, 10);
  if (!*text || *end || v == 0) fail(ErrorCode::kInvalidArgument, std::string(name) + " must be a positive integer");
  return static_cast<std::size_t>(v);
}

void reply_error(httplib::Response& res, const Error& err, const std::string& field = {}) {
  json body = {{"error", {{"code", error_code_name(err.code())}, {"message", err.what()}}}};
  if (!field.empty()) body["error"]["field"] = field;
  res.status = http_status_for(err.code());
  res.set_content(body.dump(), "application/json");
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const FieldError& e) {
    reply_error(res, e, e.field());
  } catch (const Error& e) {
    reply_error(res, e);
  } catch (const std::exception& e) {
    reply_error(res, Error(ErrorCode::kInternal, e.what()));
  }
}

json summary(const ExpertEntry& e, std::size_t index) {
  json j = {{"index", index},
            {"expert_id", e.expert_id},
            {"display_name", e.display_name},
            {"input_kind", input_kind_name(e.preprocessing.kind)},
            {"source_length", e.preprocessing.source_length},
            {"standardized", e.preprocessing.standardization.has_value()},
            {"output_activation", nn::activation_name(e.autoencoder.output_activation())},
            {"fingerprint",
             {{"seed", e.fingerprint.seed}, {"epochs", e.fingerprint.epochs}, {"samples", e.fingerprint.samples}}}};
  j["classes"] = e.centroids ? json(e.centroids->class_ids) : json(nullptr);
  return j;
}

}  // namespace

ServerConfig apply_environment(ServerConfig config) {
  if (const char* listen = std::getenv("EXPERTMATCH_LISTEN"); listen && *listen) {
    const std::string s(listen);
    const auto colon = s.rfind(':');
    if (colon == std::string::npos) fail(ErrorCode::kInvalidArgument, "EXPERTMATCH_LISTEN must be host:port");
    config.host = s.substr(0, colon);
    const std::string port = s.substr(colon + 1);
    char* end = nullptr;
    const long p = std::strtol(port.c_str(), &end, 10);
    if (port.empty() || *end || p < 0 || p > 65535) {
      fail(ErrorCode::kInvalidArgument, "EXPERTMATCH_LISTEN has a bad port");
    }
    config.port = static_cast<int>(p);
  }
  if (const char* path = std::getenv("EXPERTMATCH_REGISTRY"); path && *path) config.registry_path = path;
  if (const char* v = std::getenv("EXPERTMATCH_MAX_BODY"); v && *v) {
    config.max_body_bytes = parse_size(v, "EXPERTMATCH_MAX_BODY");
  }
  if (const char* v = std::getenv("EXPERTMATCH_MAX_EXPERTS"); v && *v) {
    config.max_experts = parse_size(v, "EXPERTMATCH_MAX_EXPERTS");
  }
  return config;
}

Server::Server(ServerConfig config)
    : config_(std::move(config)), http_(std::make_unique<httplib::Server>()) {
  auto initial = std::make_shared<Registry>();
  if (!config_.registry_path.empty() && std::filesystem::exists(config_.registry_path)) {
    *initial = load_registry(config_.registry_path);
    if (initial->size() > config_.max_experts) {
      fail(ErrorCode::kCapability, "persisted registry exceeds the expert limit");
    }
  }
  registry_ = std::move(initial);
  install_routes();
}

Server::~Server() { stop(); }

std::shared_ptr<const Registry> Server::snapshot() const {
  std::lock_guard lock(snapshot_mutex_);
  return registry_;
}

std::size_t Server::register_expert(ExpertEntry entry) {
  std::lock_guard writer(writer_mutex_);
  const auto current = snapshot();
  if (current->size() >= config_.max_experts) {
    fail(ErrorCode::kCapability, "registry is full (" + std::to_string(config_.max_experts) + " experts)");
  }
  auto next = std::make_shared<Registry>(*current);
  next->add(std::move(entry));
  if (!config_.registry_path.empty()) save_registry(*next, config_.registry_path);
  const std::size_t index = next->size() - 1;
  std::lock_guard lock(snapshot_mutex_);
  registry_ = std::move(next);
  return index;
}

void Server::install_routes() {
  httplib::Server& s = *http_;
  s.set_payload_max_length(config_.max_body_bytes);
  s.new_task_queue = [n = config_.threads] { return new httplib::ThreadPool(n); };

  s.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
    const auto reg = snapshot();
    res.set_content(json{{"status", "ok"}, {"experts", reg->size()}, {"format_version", kRegistryFormatVersion}}.dump(),
                    "application/json");
  });

  s.Get("/v1/experts", [this](const httplib::Request&, httplib::Response& res) {
    const auto reg = snapshot();
    json list = json::array();
    for (std::size_t i = 0; i < reg->size(); ++i) list.push_back(summary(reg->at(i), i));
    res.set_content(json{{"experts", list}}.dump(), "application/json");
  });

  s.Post("/v1/experts", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      ExpertEntry entry = expert_from_wire(req.body);
      const std::string id = entry.expert_id;
      const std::size_t index = register_expert(std::move(entry));
      res.status = 201;
      res.set_content(json{{"expert_id", id}, {"index", index}, {"experts", index + 1}}.dump(),
                      "application/json");
    });
  });

  s.Post("/v1/match", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const MatchRequest request = request_from_wire(req.body);
      const auto reg = snapshot();
      res.set_content(response_to_wire(execute_match(*reg, request)), "application/json");
    });
  });

  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const ErrorCode code = res.status == 413 ? ErrorCode::kInvalidArgument : ErrorCode::kNotFound;
    json body = {{"error", {{"code", error_code_name(code)}, {"message", httplib::status_message(res.status)}}}};
    res.set_content(body.dump(), "application/json");
  });
}

int Server::bind() {
  if (port_ >= 0) return port_;
  if (config_.port == 0) {
    port_ = http_->bind_to_any_port(config_.host);
  } else {
    port_ = http_->bind_to_port(config_.host, config_.port) ? config_.port : -1;
  }
  if (port_ < 0) fail(ErrorCode::kIo, "cannot bind " + config_.host + ":" + std::to_string(config_.port));
  return port_;
}

void Server::run() {
  bind();
  if (!http_->listen_after_bind()) fail(ErrorCode::kIo, "server stopped with an error");
}

void Server::stop() {
  if (http_) http_->stop();
}

HttpReply http_call(const std::string& base_url, const std::string& method, const std::string& path,
                    const std::string& body) {
  const std::string url = base_url.find("://") == std::string::npos ? "http://" + base_url : base_url;
  httplib::Client client(url);
  client.set_read_timeout(600, 0);
  httplib::Result r;
  if (method == "GET") {
    r = client.Get(path);
  } else if (method == "POST") {
    r = client.Post(path, body, "application/json");
  } else {
    fail(ErrorCode::kInvalidArgument, "unsupported HTTP method '" + method + "'");
  }
  if (!r) fail(ErrorCode::kIo, "request to " + url + path + " failed: " + httplib::to_string(r.error()));
  return {r->status, r->body};
}

}  // namespace em::service

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "expertmatch/error.hpp"
#include "expertmatch/expert_index.hpp"
#include "expertmatch/matcher.hpp"
#include "expertmatch/preprocess.hpp"

namespace httplib {
class Server;
}

namespace em::service {

// Validation failure tied to one request field (dotted path).
class FieldError : public Error {
 public:
  FieldError(std::string field, const std::string& message)
      : Error(ErrorCode::kInvalidArgument, "field '" + field + "': " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// ---- Scalar and blob encoding -------------------------------------------------

// "%.17g"; non-finite values are rejected.
std::string encode_double(double v);
double decode_double(std::string_view text, const std::string& field);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text, const std::string& field);

// Little-endian IEEE-754 binary64, base64 encoded.
std::string encode_f64_blob(std::span<const double> values);
std::vector<double> decode_f64_blob(std::string_view text, const std::string& field);

// ---- Expert entries -------------------------------------------------------------

std::string expert_to_wire(const ExpertEntry& entry);
// Throws FieldError for malformed payloads; the result passes validate().
ExpertEntry expert_from_wire(std::string_view json_text);

// ---- Match requests -------------------------------------------------------------

enum class Resolution { kCoarse, kFine, kHierarchical };
const char* resolution_name(Resolution r) noexcept;

struct RawPayload {
  InputKind kind = InputKind::kPooledVector;
  std::vector<double> values;  // vector payloads, any length >= 1
  RawImage image;              // image payloads (8-bit on the wire)
};

struct MatchRequest {
  std::optional<Sample> sample;  // exactly one of sample / raw
  std::optional<RawPayload> raw;
  std::optional<std::string> standardize_with;  // expert whose stored statistics apply
  Resolution resolution = Resolution::kHierarchical;
  std::optional<std::size_t> top_k;        // default: all experts
  std::optional<std::string> expert_id;    // fine resolution against a named expert
};

struct MatchResponse {
  std::string expert_id;
  std::size_t coarse_index = 0;
  std::vector<double> losses;
  std::vector<std::size_t> ranking;
  std::vector<std::string> ranking_ids;
  std::optional<std::string> fine_expert_id;
  std::optional<int> fine_class;
  std::vector<double> fine_scores;
  std::vector<int> fine_class_ids;
  std::int64_t server_time_us = 0;

  // Everything except timing.
  bool same_outcome(const MatchResponse& other) const;
};

std::string request_to_wire(const MatchRequest& request);
MatchRequest request_from_wire(std::string_view json_text);
std::string response_to_wire(const MatchResponse& response);
MatchResponse response_from_wire(std::string_view json_text);

// Canonical sample for a request: the sample itself or the preprocessed raw
// payload, then standardization if requested.
Sample prepare_sample(const Registry& registry, const MatchRequest& request);

// The in-process equivalent of POST /v1/match.
MatchResponse execute_match(const Registry& registry, const MatchRequest& request);

// ---- Server ---------------------------------------------------------------------

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0: pick a free port
  std::filesystem::path registry_path;  // empty: in-memory only
  std::size_t max_body_bytes = 16u << 20;
  std::size_t max_experts = 64;
  std::size_t threads = 8;
};

// Overrides from EXPERTMATCH_LISTEN (host:port), EXPERTMATCH_REGISTRY,
// EXPERTMATCH_MAX_BODY and EXPERTMATCH_MAX_EXPERTS.
ServerConfig apply_environment(ServerConfig config);

int http_status_for(ErrorCode code) noexcept;

class Server {
 public:
  // Loads the persisted registry when registry_path names an existing file.
  explicit Server(ServerConfig config);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Binds; returns the bound port. Throws kIo on failure.
  int bind();
  // Serves until stop(). bind() is called first if needed.
  void run();
  void stop();
  int port() const noexcept { return port_; }

  std::shared_ptr<const Registry> snapshot() const;
  // Atomic registration: persisted, then published as a whole-registry swap.
  std::size_t register_expert(ExpertEntry entry);

  const ServerConfig& config() const noexcept { return config_; }

 private:
  void install_routes();

  ServerConfig config_;
  std::unique_ptr<httplib::Server> http_;
  mutable std::mutex snapshot_mutex_;
  std::mutex writer_mutex_;
  std::shared_ptr<const Registry> registry_;
  int port_ = -1;
};

// ---- Client ---------------------------------------------------------------------

struct HttpReply {
  int status = 0;
  std::string body;
};

// Plain HTTP call against "host:port" or "http://host:port".
HttpReply http_call(const std::string& base_url, const std::string& method, const std::string& path,
                    const std::string& body = {});

}  // namespace em::service

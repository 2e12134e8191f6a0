#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "expertmatch/service.hpp"

namespace em::service {

using nlohmann::json;

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

// Field accessors. Every failure names the field.
const json& need(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object()) throw FieldError(path, "expected an object");
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) throw FieldError(path.empty() ? key : path + "." + key, "missing");
  return *it;
}

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

std::string get_string(const json& j, const std::string& key, const std::string& path) {
  const json& v = need(j, key, path);
  if (!v.is_string()) throw FieldError(join(path, key), "expected a string");
  return v.get<std::string>();
}

std::uint64_t get_uint(const json& j, const std::string& key, const std::string& path) {
  const json& v = need(j, key, path);
  if (!v.is_number_unsigned()) throw FieldError(join(path, key), "expected a non-negative integer");
  return v.get<std::uint64_t>();
}

double get_double(const json& j, const std::string& key, const std::string& path) {
  const json& v = need(j, key, path);
  if (!v.is_string()) throw FieldError(join(path, key), "expected a decimal string");
  return decode_double(v.get<std::string>(), join(path, key));
}

std::vector<double> get_blob(const json& j, const std::string& key, const std::string& path,
                             std::optional<std::size_t> expected = std::nullopt) {
  const json& v = need(j, key, path);
  if (!v.is_string()) throw FieldError(join(path, key), "expected a base64 string");
  auto out = decode_f64_blob(v.get<std::string>(), join(path, key));
  if (expected && out.size() != *expected) {
    throw FieldError(join(path, key), "expected " + std::to_string(*expected) + " values, got " +
                                          std::to_string(out.size()));
  }
  return out;
}

std::vector<double> get_decimal_array(const json& j, const std::string& key, const std::string& path) {
  const json& v = need(j, key, path);
  if (!v.is_array()) throw FieldError(join(path, key), "expected an array of decimal strings");
  std::vector<double> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::string f = join(path, key) + "[" + std::to_string(i) + "]";
    if (!v[i].is_string()) throw FieldError(f, "expected a decimal string");
    out.push_back(decode_double(v[i].get_ref<const std::string&>(), f));
  }
  return out;
}

json decimal_array(std::span<const double> values) {
  json a = json::array();
  for (double v : values) a.push_back(encode_double(v));
  return a;
}

json parse_json(std::string_view text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw FieldError("body", "not valid JSON");
  if (!j.is_object()) throw FieldError("body", "expected a JSON object");
  return j;
}

nn::ActivationKind parse_activation(const std::string& name, const std::string& field) {
  for (auto k : {nn::ActivationKind::kRelu, nn::ActivationKind::kSigmoid, nn::ActivationKind::kIdentity}) {
    if (name == nn::activation_name(k)) return k;
  }
  throw FieldError(field, "unknown activation '" + name + "'");
}

json dense_to_json(const nn::DenseLayer& d) {
  return {{"in", d.in_dim()},
          {"out", d.out_dim()},
          {"weight", encode_f64_blob(d.weights().values())},
          {"bias", encode_f64_blob(d.bias().values())}};
}

nn::DenseLayer dense_from_json(const json& j, const std::string& path, std::size_t in, std::size_t out) {
  if (get_uint(j, "in", path) != in || get_uint(j, "out", path) != out) {
    throw FieldError(path, "expected a " + std::to_string(in) + " -> " + std::to_string(out) + " layer");
  }
  return nn::DenseLayer(nn::Matrix(out, in, get_blob(j, "weight", path, in * out)),
                        nn::Matrix(1, out, get_blob(j, "bias", path, out)));
}

}  // namespace

// ---- Scalars and blobs ----------------------------------------------------------

std::string encode_double(double v) {
  if (!std::isfinite(v)) fail(ErrorCode::kNonFinite, "cannot encode a non-finite value");
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double decode_double(std::string_view text, const std::string& field) {
  double v = 0.0;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) throw FieldError(field, "not a decimal number");
  if (!std::isfinite(v)) throw FieldError(field, "non-finite value");
  return v;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    const std::uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += kAlphabet[(n >> 6) & 63];
    out += kAlphabet[n & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest) {
    std::uint32_t n = bytes[i] << 16;
    if (rest == 2) n |= bytes[i + 1] << 8;
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += rest == 2 ? kAlphabet[(n >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text, const std::string& field) {
  if (text.size() % 4 != 0) throw FieldError(field, "base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    const bool last = i + 4 == text.size();
    const int pad = last ? (text[i + 3] == '=') + (text[i + 2] == '=') : 0;
    if (pad == 1 && text[i + 2] == '=') throw FieldError(field, "malformed base64 padding");
    int v[4];
    for (int k = 0; k < 4; ++k) {
      v[k] = k >= 4 - pad ? 0 : b64_value(text[i + k]);
      if (v[k] < 0) throw FieldError(field, "invalid base64 character");
    }
    const std::uint32_t n = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<std::uint8_t>(n >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(n >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(n));
  }
  return out;
}

std::string encode_f64_blob(std::span<const double> values) {
  std::vector<std::uint8_t> bytes(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return base64_encode(bytes);
}

std::vector<double> decode_f64_blob(std::string_view text, const std::string& field) {
  const auto bytes = base64_decode(text, field);
  if (bytes.size() % 8 != 0) throw FieldError(field, "blob length is not a multiple of 8 bytes");
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
    out[i] = std::bit_cast<double>(bits);
    if (!std::isfinite(out[i])) throw FieldError(field, "non-finite value at index " + std::to_string(i));
  }
  return out;
}

// ---- Expert entries -------------------------------------------------------------

std::string expert_to_wire(const ExpertEntry& entry) {
  const Autoencoder& ae = entry.autoencoder;
  const nn::BatchNorm1d& bn = ae.encoder_norm();
  json j;
  j["expert_id"] = entry.expert_id;
  j["display_name"] = entry.display_name;
  j["output_activation"] = nn::activation_name(ae.output_activation());
  j["encoder"] = dense_to_json(ae.encoder());
  j["encoder_norm"] = {{"features", bn.features()},
                       {"gamma", encode_f64_blob(bn.gamma().values())},
                       {"beta", encode_f64_blob(bn.beta().values())},
                       {"running_mean", encode_f64_blob(bn.running_mean())},
                       {"running_var", encode_f64_blob(bn.running_var())},
                       {"momentum", encode_double(bn.momentum())},
                       {"epsilon", encode_double(bn.epsilon())}};
  j["decoder"] = dense_to_json(ae.decoder());
  if (entry.centroids) {
    std::vector<double> flat;
    for (const auto& c : entry.centroids->centroids) flat.insert(flat.end(), c.begin(), c.end());
    j["centroids"] = {{"class_ids", entry.centroids->class_ids},
                      {"counts", entry.centroids->counts},
                      {"vectors", encode_f64_blob(flat)}};
  } else {
    j["centroids"] = nullptr;
  }
  json pre = {{"kind", input_kind_name(entry.preprocessing.kind)},
              {"source_length", entry.preprocessing.source_length}};
  if (const auto& s = entry.preprocessing.standardization) {
    pre["standardization"] = {{"mean", encode_f64_blob(s->mean)}, {"stddev", encode_f64_blob(s->stddev)}};
  } else {
    pre["standardization"] = nullptr;
  }
  j["preprocessing"] = std::move(pre);
  j["fingerprint"] = {{"seed", entry.fingerprint.seed},
                      {"epochs", entry.fingerprint.epochs},
                      {"samples", entry.fingerprint.samples}};
  return j.dump();
}

ExpertEntry expert_from_wire(std::string_view json_text) {
  const json j = parse_json(json_text);
  ExpertEntry e;
  e.expert_id = get_string(j, "expert_id", "");
  if (e.expert_id.empty()) throw FieldError("expert_id", "must not be empty");
  e.display_name = j.contains("display_name") && j["display_name"].is_string()
                       ? j["display_name"].get<std::string>()
                       : e.expert_id;
  const auto act = parse_activation(get_string(j, "output_activation", ""), "output_activation");

  const json& bnj = need(j, "encoder_norm", "");
  if (get_uint(bnj, "features", "encoder_norm") != kHiddenDim) {
    throw FieldError("encoder_norm.features", "expected " + std::to_string(kHiddenDim));
  }
  nn::BatchNorm1d bn(kHiddenDim);
  try {
    bn.restore(nn::Matrix(1, kHiddenDim, get_blob(bnj, "gamma", "encoder_norm", kHiddenDim)),
               nn::Matrix(1, kHiddenDim, get_blob(bnj, "beta", "encoder_norm", kHiddenDim)),
               get_blob(bnj, "running_mean", "encoder_norm", kHiddenDim),
               get_blob(bnj, "running_var", "encoder_norm", kHiddenDim),
               get_double(bnj, "momentum", "encoder_norm"), get_double(bnj, "epsilon", "encoder_norm"));
  } catch (const FieldError&) {
    throw;
  } catch (const Error& err) {
    throw FieldError("encoder_norm", err.what());
  }
  bn.set_mode(nn::Mode::kEval);

  std::vector<nn::Layer> layers;
  layers.emplace_back(dense_from_json(need(j, "encoder", ""), "encoder", kSampleDim, kHiddenDim));
  layers.emplace_back(std::move(bn));
  layers.emplace_back(nn::Activation(nn::ActivationKind::kRelu));
  layers.emplace_back(dense_from_json(need(j, "decoder", ""), "decoder", kHiddenDim, kSampleDim));
  layers.emplace_back(nn::Activation(act));
  e.autoencoder = Autoencoder(nn::Network(std::move(layers)));

  if (j.contains("centroids") && !j["centroids"].is_null()) {
    const json& cj = j["centroids"];
    ClassCentroids c;
    try {
      c.class_ids = need(cj, "class_ids", "centroids").get<std::vector<int>>();
      c.counts = need(cj, "counts", "centroids").get<std::vector<std::uint64_t>>();
    } catch (const json::exception&) {
      throw FieldError("centroids", "class_ids and counts must be integer arrays");
    }
    if (c.counts.size() != c.class_ids.size()) throw FieldError("centroids.counts", "length differs from class_ids");
    const auto flat = get_blob(cj, "vectors", "centroids", c.class_ids.size() * kHiddenDim);
    for (std::size_t i = 0; i < c.class_ids.size(); ++i) {
      c.centroids.emplace_back(flat.begin() + i * kHiddenDim, flat.begin() + (i + 1) * kHiddenDim);
    }
    e.centroids = std::move(c);
  }

  const json& pj = need(j, "preprocessing", "");
  try {
    e.preprocessing.kind = parse_input_kind(get_string(pj, "kind", "preprocessing"));
  } catch (const FieldError&) {
    throw;
  } catch (const Error& err) {
    throw FieldError("preprocessing.kind", err.what());
  }
  e.preprocessing.source_length = get_uint(pj, "source_length", "preprocessing");
  if (pj.contains("standardization") && !pj["standardization"].is_null()) {
    const json& sj = pj["standardization"];
    e.preprocessing.standardization =
        Standardization{get_blob(sj, "mean", "preprocessing.standardization", kSampleDim),
                        get_blob(sj, "stddev", "preprocessing.standardization", kSampleDim)};
  }

  const json& fj = need(j, "fingerprint", "");
  e.fingerprint = {get_uint(fj, "seed", "fingerprint"), get_uint(fj, "epochs", "fingerprint"),
                   get_uint(fj, "samples", "fingerprint")};

  try {
    validate(e);
  } catch (const FieldError&) {
    throw;
  } catch (const Error& err) {
    throw FieldError("expert", err.what());
  }
  return e;
}

// ---- Requests and responses -------------------------------------------------------

const char* resolution_name(Resolution r) noexcept {
  switch (r) {
    case Resolution::kCoarse: return "coarse";
    case Resolution::kFine: return "fine";
    case Resolution::kHierarchical: return "hierarchical";
  }
  return "?";
}

std::string request_to_wire(const MatchRequest& request) {
  json j;
  if (request.sample) j["sample"] = decimal_array(request.sample->values());
  if (request.raw) {
    const RawPayload& raw = *request.raw;
    if (raw.kind == InputKind::kPooledVector) {
      j["raw"] = {{"kind", "vector"}, {"values", decimal_array(raw.values)}};
    } else {
      const RawImage& img = raw.image;
      std::vector<std::uint8_t> bytes(img.pixels.size());
      for (std::size_t i = 0; i < bytes.size(); ++i) {
        const double p = img.pixels[i];
        if (img.max_value != 255.0 || p < 0.0 || p > 255.0 || p != std::floor(p)) {
          fail(ErrorCode::kInvalidArgument, "raw images travel as 8-bit pixels");
        }
        bytes[i] = static_cast<std::uint8_t>(p);
      }
      j["raw"] = {{"kind", "image"},
                  {"height", img.height},
                  {"width", img.width},
                  {"channels", img.channels},
                  {"pixels", base64_encode(bytes)}};
    }
  }
  if (request.standardize_with) j["standardize_with"] = *request.standardize_with;
  j["resolution"] = resolution_name(request.resolution);
  if (request.top_k) j["top_k"] = *request.top_k;
  if (request.expert_id) j["expert_id"] = *request.expert_id;
  return j.dump();
}

MatchRequest request_from_wire(std::string_view json_text) {
  const json j = parse_json(json_text);
  MatchRequest r;
  const bool has_sample = j.contains("sample") && !j["sample"].is_null();
  const bool has_raw = j.contains("raw") && !j["raw"].is_null();
  if (has_sample == has_raw) throw FieldError("sample", "exactly one of 'sample' and 'raw' is required");
  if (has_sample) {
    auto values = get_decimal_array(j, "sample", "");
    if (values.size() != kSampleDim) {
      throw FieldError("sample", "expected " + std::to_string(kSampleDim) + " values, got " +
                                     std::to_string(values.size()));
    }
    r.sample = Sample(std::move(values));
  } else {
    const json& rj = j["raw"];
    const std::string kind = get_string(rj, "kind", "raw");
    RawPayload raw;
    if (kind == "vector") {
      raw.kind = InputKind::kPooledVector;
      raw.values = get_decimal_array(rj, "values", "raw");
      if (raw.values.empty()) throw FieldError("raw.values", "must not be empty");
    } else if (kind == "image") {
      raw.kind = InputKind::kImage;
      const auto h = get_uint(rj, "height", "raw");
      const auto w = get_uint(rj, "width", "raw");
      const auto c = get_uint(rj, "channels", "raw");
      if (h == 0 || w == 0 || c == 0) throw FieldError("raw", "image dimensions must be positive");
      const json& pj = need(rj, "pixels", "raw");
      if (!pj.is_string()) throw FieldError("raw.pixels", "expected a base64 string");
      const auto bytes = base64_decode(pj.get<std::string>(), "raw.pixels");
      if (bytes.size() != h * w * c) {
        throw FieldError("raw.pixels", "expected " + std::to_string(h * w * c) + " bytes, got " +
                                           std::to_string(bytes.size()));
      }
      raw.image = RawImage::from_bytes(h, w, c, bytes);
    } else {
      throw FieldError("raw.kind", "expected 'vector' or 'image'");
    }
    r.raw = std::move(raw);
  }
  if (j.contains("standardize_with") && !j["standardize_with"].is_null()) {
    r.standardize_with = get_string(j, "standardize_with", "");
  }
  if (j.contains("resolution")) {
    const std::string res = get_string(j, "resolution", "");
    if (res == "coarse") r.resolution = Resolution::kCoarse;
    else if (res == "fine") r.resolution = Resolution::kFine;
    else if (res == "hierarchical") r.resolution = Resolution::kHierarchical;
    else throw FieldError("resolution", "expected coarse, fine or hierarchical");
  }
  if (j.contains("top_k") && !j["top_k"].is_null()) {
    r.top_k = get_uint(j, "top_k", "");
    if (*r.top_k == 0) throw FieldError("top_k", "must be at least 1");
  }
  if (j.contains("expert_id") && !j["expert_id"].is_null()) r.expert_id = get_string(j, "expert_id", "");
  return r;
}

bool MatchResponse::same_outcome(const MatchResponse& o) const {
  return expert_id == o.expert_id && coarse_index == o.coarse_index && losses == o.losses &&
         ranking == o.ranking && ranking_ids == o.ranking_ids && fine_expert_id == o.fine_expert_id &&
         fine_class == o.fine_class && fine_scores == o.fine_scores && fine_class_ids == o.fine_class_ids;
}

std::string response_to_wire(const MatchResponse& r) {
  json j;
  j["expert_id"] = r.expert_id;
  j["coarse_index"] = r.coarse_index;
  j["losses"] = decimal_array(r.losses);
  j["ranking"] = r.ranking;
  j["ranking_ids"] = r.ranking_ids;
  if (r.fine_class) {
    j["fine_expert_id"] = *r.fine_expert_id;
    j["fine_class"] = *r.fine_class;
    j["fine_scores"] = decimal_array(r.fine_scores);
    j["fine_class_ids"] = r.fine_class_ids;
  }
  j["server_time_us"] = r.server_time_us;
  return j.dump();
}

MatchResponse response_from_wire(std::string_view json_text) {
  const json j = parse_json(json_text);
  MatchResponse r;
  try {
    r.expert_id = get_string(j, "expert_id", "");
    r.coarse_index = get_uint(j, "coarse_index", "");
    r.losses = get_decimal_array(j, "losses", "");
    r.ranking = need(j, "ranking", "").get<std::vector<std::size_t>>();
    r.ranking_ids = need(j, "ranking_ids", "").get<std::vector<std::string>>();
    if (j.contains("fine_class")) {
      r.fine_expert_id = get_string(j, "fine_expert_id", "");
      r.fine_class = j["fine_class"].get<int>();
      r.fine_scores = get_decimal_array(j, "fine_scores", "");
      r.fine_class_ids = need(j, "fine_class_ids", "").get<std::vector<int>>();
    }
    r.server_time_us = j.value("server_time_us", std::int64_t{0});
  } catch (const json::exception& e) {
    throw FieldError("body", e.what());
  }
  return r;
}

// ---- Execution ----------------------------------------------------------------

Sample prepare_sample(const Registry& registry, const MatchRequest& request) {
  if (request.sample.has_value() == request.raw.has_value()) {
    throw FieldError("sample", "exactly one of 'sample' and 'raw' is required");
  }
  Sample x = request.sample ? *request.sample
             : request.raw->kind == InputKind::kImage ? image_to_sample(request.raw->image)
                                                      : vector_to_sample(request.raw->values);
  if (request.standardize_with) {
    const auto idx = registry.index_of(*request.standardize_with);
    if (!idx) fail(ErrorCode::kNotFound, "no expert '" + *request.standardize_with + "'");
    const auto& stats = registry.at(*idx).preprocessing.standardization;
    if (!stats) {
      fail(ErrorCode::kCapability, "expert '" + *request.standardize_with + "' stores no standardization");
    }
    x = standardize(x, *stats);
  }
  return x;
}

MatchResponse execute_match(const Registry& registry, const MatchRequest& request) {
  const auto start = std::chrono::steady_clock::now();
  if (registry.empty()) fail(ErrorCode::kEmpty, "registry has no experts");
  if (request.top_k && (*request.top_k == 0 || *request.top_k > registry.size())) {
    throw FieldError("top_k", "must be in [1, " + std::to_string(registry.size()) + "]");
  }
  if (request.expert_id && request.resolution != Resolution::kFine) {
    throw FieldError("expert_id", "only valid with resolution 'fine'");
  }
  std::optional<std::size_t> fine_target;
  if (request.expert_id) {
    fine_target = registry.index_of(*request.expert_id);
    if (!fine_target) fail(ErrorCode::kNotFound, "no expert '" + *request.expert_id + "'");
  }
  const Sample x = prepare_sample(registry, request);

  MatchResult m = coarse_match(registry, x);
  const ExpertEntry& winner = registry.at(m.coarse_index);
  switch (request.resolution) {
    case Resolution::kCoarse: break;
    case Resolution::kHierarchical:
      if (winner.centroids) m.fine = fine_match(winner, x);
      break;
    case Resolution::kFine:
      fine_target = fine_target.value_or(m.coarse_index);
      m.fine = fine_match(registry.at(*fine_target), x);
      break;
  }
  if (m.fine && !fine_target) fine_target = m.coarse_index;

  MatchResponse r;
  r.expert_id = winner.expert_id;
  r.coarse_index = m.coarse_index;
  r.losses = m.coarse_losses;
  const std::size_t k = request.top_k.value_or(registry.size());
  r.ranking.assign(m.coarse_ranking.begin(), m.coarse_ranking.begin() + static_cast<std::ptrdiff_t>(k));
  for (std::size_t i : r.ranking) r.ranking_ids.push_back(registry.at(i).expert_id);
  if (m.fine) {
    r.fine_expert_id = registry.at(*fine_target).expert_id;
    r.fine_class = m.fine->fine_class;
    r.fine_scores = m.fine->scores;
    r.fine_class_ids = m.fine->class_ids;
  }
  r.server_time_us = std::chrono::duration_cast<std::chrono::microseconds>(
                         std::chrono::steady_clock::now() - start)
                         .count();
  return r;
}

}  // namespace em::service

// Binary registry codec. Byte layout is documented in docs/registry-format.md.

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <string>

#include "expertmatch/error.hpp"
#include "expertmatch/expert_index.hpp"

namespace em {

namespace {

constexpr char kMagic[8] = {'E', 'M', 'R', 'E', 'G', 'S', 'T', 'R'};
constexpr std::size_t kHeaderSize = 8 + 4 + 4 + 8 + 8;
constexpr std::size_t kTrailerSize = 8;

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64s(std::span<const double> vs) {
    for (double v : vs) f64(v);
  }
  void str(const std::string& s) {
    u64(s.size());
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void matrix(const nn::Matrix& m) {
    u64(m.rows());
    u64(m.cols());
    f64s(m.values());
  }
  void patch_u64(std::size_t offset, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_[offset + i] = static_cast<std::uint8_t>(v >> (8 * i));
  }
  std::size_t size() const { return out_.size(); }
  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    const auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<double> f64s(std::uint64_t n) {
    if (n > remaining() / 8) truncated("float array");
    std::vector<double> v(n);
    for (double& x : v) x = f64();
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    if (n > remaining()) truncated("string");
    const auto b = take(n);
    return std::string(b.begin(), b.end());
  }
  nn::Matrix matrix() {
    const std::uint64_t rows = u64();
    const std::uint64_t cols = u64();
    if (cols != 0 && rows > remaining() / 8 / cols) truncated("matrix");
    return nn::Matrix(rows, cols, f64s(rows * cols));
  }
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  [[noreturn]] void truncated(const char* what) const {
    fail(ErrorCode::kTruncated, std::string("registry truncated while reading ") + what +
                                    " at offset " + std::to_string(pos_));
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > remaining()) truncated("field");
    const auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void write_entry(Writer& w, const ExpertEntry& e) {
  w.str(e.expert_id);
  w.str(e.display_name);
  w.u8(static_cast<std::uint8_t>(e.preprocessing.kind));
  w.u64(e.preprocessing.source_length);
  w.u8(e.preprocessing.standardization ? 1 : 0);
  if (const auto& st = e.preprocessing.standardization) {
    w.u64(st->mean.size());
    w.f64s(st->mean);
    w.f64s(st->stddev);
  }
  w.u64(e.fingerprint.seed);
  w.u64(e.fingerprint.epochs);
  w.u64(e.fingerprint.samples);

  const Autoencoder& ae = e.autoencoder;
  w.u8(static_cast<std::uint8_t>(ae.output_activation()));
  w.matrix(ae.encoder().weights());
  w.matrix(ae.encoder().bias());
  const nn::BatchNorm1d& bn = ae.encoder_norm();
  w.u64(bn.features());
  w.f64(bn.momentum());
  w.f64(bn.epsilon());
  w.f64s(bn.gamma().values());
  w.f64s(bn.beta().values());
  w.f64s(bn.running_mean());
  w.f64s(bn.running_var());
  w.matrix(ae.decoder().weights());
  w.matrix(ae.decoder().bias());

  w.u8(e.centroids ? 1 : 0);
  if (const auto& c = e.centroids) {
    w.u64(c->size());
    w.u64(kHiddenDim);
    for (std::size_t i = 0; i < c->size(); ++i) {
      w.i64(c->class_ids[i]);
      w.u64(c->counts[i]);
      w.f64s(c->centroids[i]);
    }
  }
}

nn::ActivationKind read_activation(std::uint8_t code) {
  switch (code) {
    case 0: return nn::ActivationKind::kRelu;
    case 1: return nn::ActivationKind::kSigmoid;
    case 2: return nn::ActivationKind::kIdentity;
    default: fail(ErrorCode::kInvalidArgument, "unknown activation code " + std::to_string(code));
  }
}

ExpertEntry read_entry(Reader& r) {
  ExpertEntry e;
  e.expert_id = r.str();
  e.display_name = r.str();
  const std::uint8_t kind = r.u8();
  if (kind > 1) fail(ErrorCode::kInvalidArgument, "unknown preprocessing kind " + std::to_string(kind));
  e.preprocessing.kind = static_cast<InputKind>(kind);
  e.preprocessing.source_length = r.u64();
  if (r.u8() != 0) {
    const std::uint64_t n = r.u64();
    Standardization st;
    st.mean = r.f64s(n);
    st.stddev = r.f64s(n);
    e.preprocessing.standardization = std::move(st);
  }
  e.fingerprint.seed = r.u64();
  e.fingerprint.epochs = r.u64();
  e.fingerprint.samples = r.u64();

  const nn::ActivationKind output = read_activation(r.u8());
  nn::Matrix enc_w = r.matrix();
  nn::Matrix enc_b = r.matrix();
  const std::uint64_t features = r.u64();
  const double momentum = r.f64();
  const double epsilon = r.f64();
  nn::Matrix gamma(1, features, r.f64s(features));
  nn::Matrix beta(1, features, r.f64s(features));
  std::vector<double> running_mean = r.f64s(features);
  std::vector<double> running_var = r.f64s(features);
  nn::Matrix dec_w = r.matrix();
  nn::Matrix dec_b = r.matrix();

  nn::BatchNorm1d bn;
  bn.restore(std::move(gamma), std::move(beta), std::move(running_mean), std::move(running_var),
             momentum, epsilon);
  std::vector<nn::Layer> layers;
  layers.emplace_back(nn::DenseLayer(std::move(enc_w), std::move(enc_b)));
  layers.emplace_back(std::move(bn));
  layers.emplace_back(nn::Activation(nn::ActivationKind::kRelu));
  layers.emplace_back(nn::DenseLayer(std::move(dec_w), std::move(dec_b)));
  layers.emplace_back(nn::Activation(output));
  e.autoencoder = Autoencoder(nn::Network(std::move(layers)));

  if (r.u8() != 0) {
    const std::uint64_t n = r.u64();
    const std::uint64_t dim = r.u64();
    if (dim != kHiddenDim) {
      fail(ErrorCode::kDimension, "centroid dimension " + std::to_string(dim) + " != 128");
    }
    ClassCentroids c;
    for (std::uint64_t i = 0; i < n; ++i) {
      c.class_ids.push_back(static_cast<int>(r.i64()));
      c.counts.push_back(r.u64());
      c.centroids.push_back(r.f64s(dim));
    }
    e.centroids = std::move(c);
  }
  return e;
}

}  // namespace

const char* input_kind_name(InputKind kind) noexcept {
  return kind == InputKind::kImage ? "image" : "pooled-vector";
}

InputKind parse_input_kind(const std::string& name) {
  if (name == "image") return InputKind::kImage;
  if (name == "pooled-vector" || name == "vector") return InputKind::kPooledVector;
  fail(ErrorCode::kInvalidArgument, "unknown input kind '" + name + "'");
}

void validate(const ExpertEntry& entry) {
  if (entry.expert_id.empty()) fail(ErrorCode::kInvalidArgument, "expert_id must not be empty");
  // Re-running the layout check catches hand-assembled networks.
  (void)Autoencoder(entry.autoencoder.network());
  if (const auto& st = entry.preprocessing.standardization) {
    if (st->mean.size() != kSampleDim || st->stddev.size() != kSampleDim) {
      fail(ErrorCode::kDimension, "standardization statistics must have 784 entries");
    }
    for (double s : st->stddev) {
      if (!(s > 0.0)) fail(ErrorCode::kInvalidArgument, "standardization stddev must be positive");
    }
  }
  if (const auto& c = entry.centroids) {
    if (c->size() == 0) fail(ErrorCode::kInvalidArgument, "centroid set is empty");
    if (c->centroids.size() != c->size() || c->counts.size() != c->size()) {
      fail(ErrorCode::kDimension, "centroid arrays have inconsistent lengths");
    }
    std::set<int> seen;
    for (std::size_t i = 0; i < c->size(); ++i) {
      if (!seen.insert(c->class_ids[i]).second) {
        fail(ErrorCode::kInvalidArgument, "duplicate centroid class id " +
                                              std::to_string(c->class_ids[i]));
      }
      if (c->centroids[i].size() != kHiddenDim) {
        fail(ErrorCode::kDimension, "centroid must have 128 entries");
      }
      double norm = 0.0;
      for (double v : c->centroids[i]) {
        if (!std::isfinite(v)) fail(ErrorCode::kNonFinite, "centroid contains a non-finite value");
        norm += v * v;
      }
      if (!(norm > 0.0)) {
        fail(ErrorCode::kDegenerate, "centroid of class " + std::to_string(c->class_ids[i]) +
                                         " has zero norm");
      }
    }
  }
}

void Registry::add(ExpertEntry entry) {
  validate(entry);
  if (index_of(entry.expert_id)) {
    fail(ErrorCode::kConflict, "expert '" + entry.expert_id + "' is already registered");
  }
  entries_.push_back(std::move(entry));
}

std::optional<std::size_t> Registry::index_of(const std::string& expert_id) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].expert_id == expert_id) return i;
  }
  return std::nullopt;
}

std::vector<std::uint8_t> serialize_registry(const Registry& registry) {
  Writer w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kRegistryFormatVersion);
  w.u32(0);
  const std::size_t length_offset = w.size();
  w.u64(0);  // total length, patched below
  w.u64(registry.size());
  for (const auto& e : registry.entries()) {
    const std::size_t section_offset = w.size();
    w.u64(0);
    write_entry(w, e);
    w.patch_u64(section_offset, w.size() - section_offset - 8);
  }
  w.patch_u64(length_offset, w.size() + kTrailerSize);
  w.u64(fnv1a64(w.bytes()));
  return std::move(w.bytes());
}

Registry deserialize_registry(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kMagic)) {
    fail(ErrorCode::kTruncated, "registry truncated: " + std::to_string(bytes.size()) + " bytes");
  }
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorCode::kBadMagic, "registry magic mismatch at offset 0");
  }
  if (bytes.size() < kHeaderSize + kTrailerSize) {
    fail(ErrorCode::kTruncated, "registry truncated: " + std::to_string(bytes.size()) +
                                    " bytes is shorter than header and trailer");
  }
  Reader header(bytes.subspan(sizeof(kMagic)));
  const std::uint32_t version = header.u32();
  if (version != kRegistryFormatVersion) {
    fail(ErrorCode::kVersion, "registry format_version " + std::to_string(version) +
                                  " is not supported (this build reads version " +
                                  std::to_string(kRegistryFormatVersion) + ")");
  }
  header.u32();
  const std::uint64_t declared = header.u64();
  if (bytes.size() < declared) {
    fail(ErrorCode::kTruncated, "registry truncated: header declares " + std::to_string(declared) +
                                    " bytes, file has " + std::to_string(bytes.size()));
  }
  if (bytes.size() != declared) {
    fail(ErrorCode::kTruncated, "registry length mismatch: header declares " +
                                    std::to_string(declared) + " bytes, file has " +
                                    std::to_string(bytes.size()));
  }
  const auto body = bytes.first(bytes.size() - kTrailerSize);
  Reader trailer(bytes.last(kTrailerSize));
  const std::uint64_t stored = trailer.u64();
  const std::uint64_t actual = fnv1a64(body);
  if (stored != actual) fail(ErrorCode::kChecksum, "registry checksum mismatch");

  Reader r(body.subspan(kHeaderSize));
  const std::uint64_t count = header.u64();
  Registry registry;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t section = r.u64();
    if (section > r.remaining()) {
      fail(ErrorCode::kTruncated, "registry entry " + std::to_string(i) + " overruns the file");
    }
    const std::size_t start = r.offset();
    ExpertEntry e = read_entry(r);
    if (r.offset() - start != section) {
      fail(ErrorCode::kInvalidArgument, "registry entry " + std::to_string(i) +
                                            " length does not match its section header");
    }
    registry.add(std::move(e));
  }
  if (r.remaining() != 0) fail(ErrorCode::kInvalidArgument, "trailing bytes after registry entries");
  return registry;
}

void save_registry(const Registry& registry, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = serialize_registry(registry);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::kIo, "failed writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::kIo, "cannot replace '" + path.string() + "': " + ec.message());
}

Registry load_registry(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open registry '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return deserialize_registry(bytes);
}

}  // namespace em

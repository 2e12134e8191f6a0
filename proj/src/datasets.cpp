#include "expertmatch/datasets.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "expertmatch/error.hpp"
#include "expertmatch/rng.hpp"

namespace em {

namespace {

constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxColorImagesMagic = 0x00000804;

std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t>& in, const std::string& what) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 32) != Z_OK) fail(ErrorCode::kInternal, "zlib init failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = buf;
    zs.avail_out = sizeof(buf);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      fail(rc == Z_BUF_ERROR ? ErrorCode::kTruncated : ErrorCode::kIo,
           "cannot inflate '" + what + "': " + (zs.msg ? zs.msg : "corrupt gzip stream"));
    }
    out.insert(out.end(), buf, buf + (sizeof(buf) - zs.avail_out));
  }
  inflateEnd(&zs);
  return out;
}

std::uint32_t be32(std::span<const std::uint8_t> b, std::size_t offset) {
  return (static_cast<std::uint32_t>(b[offset]) << 24) |
         (static_cast<std::uint32_t>(b[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(b[offset + 2]) << 8) | static_cast<std::uint32_t>(b[offset + 3]);
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, "failed writing '" + path.string() + "'");
}

std::string format_double(double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(n));
}

std::vector<std::size_t> class_counts(const SyntheticSpec& spec) {
  const auto n = static_cast<std::size_t>(spec.num_classes);
  std::vector<double> weights = spec.class_weights;
  if (weights.empty()) weights.assign(n, 1.0);
  if (weights.size() != n) {
    fail(ErrorCode::kInvalidArgument, "class_weights must have one entry per class");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) fail(ErrorCode::kInvalidArgument, "class weights must be positive");
    total += w;
  }
  // Largest-remainder apportionment.
  std::vector<std::size_t> counts(n);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < n; ++c) {
    const double exact = static_cast<double>(spec.count) * weights[c] / total;
    counts[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < spec.count; ++i, ++assigned) ++counts[remainders[i].second];
  return counts;
}

}  // namespace

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) return gunzip(bytes, path.string());
  return bytes;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::string name) {
  const std::vector<std::uint8_t> img = read_file_bytes(images);
  const std::vector<std::uint8_t> lab = read_file_bytes(labels);

  if (img.size() < 4) fail(ErrorCode::kTruncated, "IDX images file shorter than its magic");
  const std::uint32_t img_magic = be32(img, 0);
  if (img_magic != kIdxImagesMagic && img_magic != kIdxColorImagesMagic) {
    char hex[16];
    std::snprintf(hex, sizeof(hex), "0x%08x", img_magic);
    fail(ErrorCode::kBadMagic, "IDX images magic " + std::string(hex) +
                                   " at offset 0 (expected 0x00000803 or 0x00000804)");
  }
  const std::size_t ndims = img_magic & 0xff;
  const std::size_t header = 4 + 4 * ndims;
  if (img.size() < header) fail(ErrorCode::kTruncated, "IDX images header truncated");
  const std::size_t count = be32(img, 4);
  const std::size_t height = be32(img, 8);
  const std::size_t width = be32(img, 12);
  const std::size_t channels = ndims == 4 ? be32(img, 16) : 1;
  if (height == 0 || width == 0 || channels == 0) {
    fail(ErrorCode::kInvalidArgument, "IDX images have a zero dimension");
  }
  const std::size_t per_image = height * width * channels;
  if (img.size() - header < count * per_image) {
    fail(ErrorCode::kTruncated, "IDX images payload truncated: header declares " +
                                    std::to_string(count) + " images of " +
                                    std::to_string(per_image) + " bytes, payload has " +
                                    std::to_string(img.size() - header) + " bytes");
  }

  if (lab.size() < 4) fail(ErrorCode::kTruncated, "IDX labels file shorter than its magic");
  const std::uint32_t lab_magic = be32(lab, 0);
  if (lab_magic != kIdxLabelsMagic) {
    char hex[16];
    std::snprintf(hex, sizeof(hex), "0x%08x", lab_magic);
    fail(ErrorCode::kBadMagic,
         "IDX labels magic " + std::string(hex) + " at offset 0 (expected 0x00000801)");
  }
  if (lab.size() < 8) fail(ErrorCode::kTruncated, "IDX labels header truncated");
  const std::size_t label_count = be32(lab, 4);
  if (lab.size() - 8 < label_count) {
    fail(ErrorCode::kTruncated, "IDX labels payload truncated: header declares " +
                                    std::to_string(label_count) + " labels, payload has " +
                                    std::to_string(lab.size() - 8));
  }
  if (label_count != count) {
    fail(ErrorCode::kCountMismatch, "IDX image count " + std::to_string(count) +
                                        " does not match label count " + std::to_string(label_count));
  }

  Dataset out;
  out.name = std::move(name);
  out.kind = InputKind::kImage;
  out.source_length = per_image;
  out.samples.reserve(count);
  int max_label = -1;
  for (std::size_t i = 0; i < count; ++i) {
    const auto pixels = std::span<const std::uint8_t>(img).subspan(header + i * per_image, per_image);
    Sample s = image_to_sample(RawImage::from_bytes(height, width, channels, pixels));
    const int label = lab[8 + i];
    s.set_label(label);
    max_label = std::max(max_label, label);
    out.samples.push_back(std::move(s));
  }
  out.num_classes = max_label + 1;
  return out;
}

void write_idx_images(const std::filesystem::path& path, std::size_t height, std::size_t width,
                      std::size_t channels, std::span<const std::uint8_t> pixels,
                      std::size_t count) {
  if (pixels.size() != count * height * width * channels) {
    fail(ErrorCode::kDimension, "write_idx_images: pixel buffer does not match the geometry");
  }
  std::vector<std::uint8_t> out;
  put_be32(out, channels == 1 ? kIdxImagesMagic : kIdxColorImagesMagic);
  put_be32(out, static_cast<std::uint32_t>(count));
  put_be32(out, static_cast<std::uint32_t>(height));
  put_be32(out, static_cast<std::uint32_t>(width));
  if (channels != 1) put_be32(out, static_cast<std::uint32_t>(channels));
  out.insert(out.end(), pixels.begin(), pixels.end());
  write_bytes(path, out);
}

void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels) {
  std::vector<std::uint8_t> out;
  put_be32(out, kIdxLabelsMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  write_bytes(path, out);
}

Dataset load_csv_vectors(const std::filesystem::path& path, std::string name) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  Dataset out;
  out.name = std::move(name);
  out.kind = InputKind::kPooledVector;
  std::string line;
  std::size_t line_no = 0;
  int max_label = -1;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto where = [&] { return path.string() + ":" + std::to_string(line_no); };
    values.clear();
    int label = 0;
    std::size_t pos = 0;
    bool first = true;
    while (pos <= line.size()) {
      std::size_t comma = line.find(',', pos);
      if (comma == std::string::npos) comma = line.size();
      std::string_view field(line.data() + pos, comma - pos);
      while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
      while (!field.empty() && field.back() == ' ') field.remove_suffix(1);
      if (first) {
        const auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), label);
        if (ec != std::errc() || p != field.data() + field.size() || label < 0) {
          fail(ErrorCode::kInvalidArgument, where() + ": bad label '" + std::string(field) + "'");
        }
        first = false;
      } else {
        double v = 0.0;
        const auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
        if (field.empty() || ec != std::errc() || p != field.data() + field.size() ||
            !std::isfinite(v)) {
          fail(ErrorCode::kInvalidArgument, where() + ": bad value '" + std::string(field) + "'");
        }
        values.push_back(v);
      }
      pos = comma + 1;
    }
    if (values.empty()) fail(ErrorCode::kInvalidArgument, where() + ": row has no values");
    if (out.source_length == 0) out.source_length = values.size();
    if (values.size() != out.source_length) {
      fail(ErrorCode::kDimension, where() + ": row has " + std::to_string(values.size()) +
                                      " values, expected " + std::to_string(out.source_length));
    }
    Sample s = vector_to_sample(values);
    s.set_label(label);
    max_label = std::max(max_label, label);
    out.samples.push_back(std::move(s));
  }
  if (out.samples.empty()) fail(ErrorCode::kEmpty, "'" + path.string() + "' contains no rows");
  out.num_classes = max_label + 1;
  return out;
}

void write_csv_vectors(const std::filesystem::path& path, std::span<const int> labels,
                       std::span<const std::vector<double>> vectors) {
  if (labels.size() != vectors.size()) fail(ErrorCode::kDimension, "write_csv_vectors: length mismatch");
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out << labels[i];
    for (double v : vectors[i]) out << ',' << format_double(v);
    out << '\n';
  }
  if (!out) fail(ErrorCode::kIo, "failed writing '" + path.string() + "'");
}

SyntheticData generate_synthetic_native(const SyntheticSpec& spec) {
  if (spec.num_classes <= 0) fail(ErrorCode::kInvalidArgument, "synthetic class count must be positive");
  if (spec.count == 0) fail(ErrorCode::kInvalidArgument, "synthetic sample count must be positive");
  const std::size_t dim = spec.native_length();
  if (dim == 0) fail(ErrorCode::kInvalidArgument, "synthetic dimensionality must be positive");
  const auto n_classes = static_cast<std::size_t>(spec.num_classes);
  if (n_classes > dim) fail(ErrorCode::kInvalidArgument, "more classes than dimensions");
  if (!(spec.sigma > 0.0)) fail(ErrorCode::kInvalidArgument, "synthetic sigma must be positive");
  if (!(spec.margin >= 0.0)) fail(ErrorCode::kInvalidArgument, "synthetic margin must be non-negative");
  if (!(spec.structured_fraction >= 0.0 && spec.structured_fraction <= 1.0)) {
    fail(ErrorCode::kInvalidArgument, "structured_fraction must lie in [0, 1]");
  }
  if (spec.structured_fraction > 0.0 && spec.rank == 0) {
    fail(ErrorCode::kInvalidArgument, "structured noise needs a positive rank");
  }

  Rng rng(spec.seed);
  std::vector<double> base(dim);
  for (double& b : base) b = spec.base_level + spec.base_spread * rng.normal();

  // Orthonormal class directions by Gram-Schmidt on Gaussian draws.
  std::vector<std::vector<double>> dirs;
  while (dirs.size() < n_classes) {
    std::vector<double> v(dim);
    for (double& x : v) x = rng.normal();
    for (const auto& d : dirs) {
      const double proj = std::inner_product(v.begin(), v.end(), d.begin(), 0.0);
      for (std::size_t i = 0; i < dim; ++i) v[i] -= proj * d[i];
    }
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (norm < 1e-6) continue;
    for (double& x : v) x /= norm;
    dirs.push_back(std::move(v));
  }
  SyntheticData out;
  const double radius = spec.margin * spec.sigma / std::sqrt(2.0);
  for (const auto& d : dirs) {
    std::vector<double> mu(dim);
    for (std::size_t i = 0; i < dim; ++i) mu[i] = base[i] + radius * d[i];
    out.class_means.push_back(std::move(mu));
  }

  const std::size_t rank = spec.structured_fraction > 0.0 ? spec.rank : 0;
  const double mix_scale = rank ? spec.sigma * std::sqrt(spec.structured_fraction / static_cast<double>(rank)) : 0.0;
  std::vector<double> mixing(dim * rank);
  for (double& m : mixing) m = mix_scale * rng.normal();
  const double iso = spec.sigma * std::sqrt(1.0 - spec.structured_fraction);

  const std::vector<std::size_t> counts = class_counts(spec);
  for (std::size_t c = 0; c < n_classes; ++c) {
    out.labels.insert(out.labels.end(), counts[c], static_cast<int>(c));
  }
  rng.shuffle(out.labels);

  std::vector<double> z(rank);
  out.native.reserve(spec.count);
  for (const int label : out.labels) {
    for (double& v : z) v = rng.normal();
    const auto& mu = out.class_means[static_cast<std::size_t>(label)];
    std::vector<double> x(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      double v = mu[i] + iso * rng.normal();
      for (std::size_t r = 0; r < rank; ++r) v += mixing[i * rank + r] * z[r];
      x[i] = spec.kind == InputKind::kImage ? std::clamp(v, 0.0, 1.0) : v;
    }
    out.native.push_back(std::move(x));
  }
  return out;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  SyntheticData data = generate_synthetic_native(spec);
  Dataset out;
  out.name = spec.name;
  out.num_classes = spec.num_classes;
  out.kind = spec.kind;
  out.source_length = spec.native_length();
  out.samples.reserve(data.labels.size());
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    Sample s;
    if (spec.kind == InputKind::kImage) {
      RawImage img{spec.height, spec.width, spec.channels, std::move(data.native[i]), 1.0};
      s = image_to_sample(img);
    } else {
      s = vector_to_sample(data.native[i]);
    }
    s.set_label(data.labels[i]);
    out.samples.push_back(std::move(s));
  }
  return out;
}

SplitIndices split_indices(std::size_t count, const SplitSpec& spec) {
  if (!(spec.server > 0.0 && spec.client_a > 0.0 && spec.client_b > 0.0)) {
    fail(ErrorCode::kInvalidArgument, "split fractions must be positive");
  }
  if (std::abs(spec.server + spec.client_a + spec.client_b - 1.0) > 1e-9) {
    fail(ErrorCode::kInvalidArgument, "split fractions must sum to 1");
  }
  if (count < 4) fail(ErrorCode::kInvalidArgument, "splitting needs at least 4 samples");
  const auto part = [&](double f) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(count) * f + 1e-9));
  };
  const std::size_t n_a = part(spec.client_a);
  const std::size_t n_b = part(spec.client_b);
  if (n_a == 0 || n_b == 0 || n_a + n_b >= count) {
    fail(ErrorCode::kInvalidArgument, "split leaves an empty partition");
  }
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(spec.seed);
  rng.shuffle(order);
  const std::size_t n_server = count - n_a - n_b;
  SplitIndices out;
  out.server.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_server));
  out.client_a.assign(order.begin() + static_cast<std::ptrdiff_t>(n_server),
                      order.begin() + static_cast<std::ptrdiff_t>(n_server + n_a));
  out.client_b.assign(order.begin() + static_cast<std::ptrdiff_t>(n_server + n_a), order.end());
  return out;
}

DatasetSplit split_dataset(const Dataset& dataset, const SplitSpec& spec) {
  const SplitIndices idx = split_indices(dataset.size(), spec);
  const auto take = [&](const std::vector<std::size_t>& rows) {
    Dataset d{dataset.name, dataset.num_classes, dataset.kind, dataset.source_length, {}};
    d.samples.reserve(rows.size());
    for (std::size_t i : rows) d.samples.push_back(dataset.samples[i]);
    return d;
  };
  return {take(idx.server), take(idx.client_a), take(idx.client_b)};
}

Standardization standardize_split(DatasetSplit& split) {
  Standardization stats = fit_standardization(split.server.samples);
  for (Dataset* d : {&split.server, &split.client_a, &split.client_b}) {
    for (Sample& s : d->samples) s = standardize(s, stats);
  }
  return stats;
}

}  // namespace em

#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "deltaedit/binary_io.hpp"
#include "deltaedit/rng.hpp"
#include "deltaedit/tensor.hpp"

namespace deltaedit {

enum class Level { Coarse = 0, Medium = 1, Fine = 2 };

inline constexpr Level kLevels[3] = {Level::Coarse, Level::Medium, Level::Fine};

inline const char* level_name(Level level) {
  switch (level) {
    case Level::Coarse: return "coarse";
    case Level::Medium: return "medium";
    case Level::Fine: return "fine";
  }
  return "unknown";
}

inline Level parse_level(const std::string& name) {
  for (Level l : kLevels) {
    if (name == level_name(l)) return l;
  }
  throw Error(ErrorCode::InvalidArgument,
              "unknown level '" + name + "' (expected coarse, medium or fine)");
}

/// Splits [0, dim) into contiguous coarse [0, coarse_end), medium
/// [coarse_end, medium_end) and fine [medium_end, dim) blocks.
struct LevelPartition {
  std::size_t coarse_end = 32;
  std::size_t medium_end = 64;
  std::size_t dim = 96;

  void validate() const {
    if (!(0 < coarse_end && coarse_end < medium_end && medium_end < dim)) {
      throw Error(ErrorCode::InvalidArgument,
                  "invalid level partition (" + std::to_string(coarse_end) + ", " +
                      std::to_string(medium_end) + ") for dimension " + std::to_string(dim));
    }
  }

  std::size_t begin(Level l) const {
    return l == Level::Coarse ? 0 : l == Level::Medium ? coarse_end : medium_end;
  }
  std::size_t end(Level l) const {
    return l == Level::Coarse ? coarse_end : l == Level::Medium ? medium_end : dim;
  }
  std::size_t width(Level l) const { return end(l) - begin(l); }

  friend bool operator==(const LevelPartition&, const LevelPartition&) = default;
};

struct EmbeddingRecord {
  std::string id;
  std::vector<double> clip;
  std::vector<double> style;
};

/// An immutable-after-load set of records sharing one clip dim, style dim
/// and level partition.
struct Bundle {
  static constexpr char kMagic[4] = {'D', 'L', 'S', 'P'};
  static constexpr std::uint32_t kVersion = 1;
  static constexpr std::size_t kHeaderBytes = 28;

  std::size_t clip_dim = 0;
  std::size_t style_dim = 0;
  LevelPartition partition;
  std::vector<EmbeddingRecord> records;
  // Sidecar fields other than ids (captions, source tool, encoder...).
  nlohmann::json manifest_extra = nlohmann::json::object();

  std::size_t size() const noexcept { return records.size(); }

  void validate() const {
    if (clip_dim == 0 || style_dim == 0) {
      throw Error(ErrorCode::InvalidArgument, "bundle dimensions must be positive");
    }
    if (partition.dim != style_dim) {
      throw Error(ErrorCode::InvalidArgument, "partition dimension differs from style dimension");
    }
    partition.validate();
    for (const auto& rec : records) {
      if (rec.clip.size() != clip_dim || rec.style.size() != style_dim) {
        throw Error(ErrorCode::ShapeMismatch, "record '" + rec.id + "' has dims (" +
                                                  std::to_string(rec.clip.size()) + ", " +
                                                  std::to_string(rec.style.size()) +
                                                  "), bundle declares (" +
                                                  std::to_string(clip_dim) + ", " +
                                                  std::to_string(style_dim) + ")");
      }
      if (l2_norm(rec.clip) == 0.0) {
        throw Error(ErrorCode::InvalidArgument, "record '" + rec.id + "' has a zero clip vector");
      }
    }
  }

  std::size_t record_stride_bytes() const { return 4 * (clip_dim + style_dim); }
};

inline std::filesystem::path manifest_path(const std::filesystem::path& bundle_path) {
  return bundle_path.string() + ".json";
}

inline std::vector<char> encode_bundle(const Bundle& bundle) {
  bundle.validate();
  io::ByteWriter w;
  w.put_bytes(std::string_view(Bundle::kMagic, 4));
  w.put_u32(Bundle::kVersion);
  w.put_u32(static_cast<std::uint32_t>(bundle.records.size()));
  w.put_u32(static_cast<std::uint32_t>(bundle.clip_dim));
  w.put_u32(static_cast<std::uint32_t>(bundle.style_dim));
  w.put_u32(static_cast<std::uint32_t>(bundle.partition.coarse_end));
  w.put_u32(static_cast<std::uint32_t>(bundle.partition.medium_end));
  for (const auto& rec : bundle.records) {
    for (double v : rec.clip) w.put_f32(v);
    for (double v : rec.style) w.put_f32(v);
  }
  return w.bytes();
}

/// Parses the binary payload. Ids default to the record index; the sidecar
/// manifest, when present, is applied by read_bundle().
inline Bundle decode_bundle(std::vector<char> bytes) {
  io::ByteReader r(std::move(bytes));
  if (r.remaining() < 4 || r.get_bytes(4, "magic") != std::string_view(Bundle::kMagic, 4)) {
    throw FormatError("bad bundle magic (expected \"DLSP\")", 0);
  }
  const std::uint32_t version = r.get_u32("version");
  if (version != Bundle::kVersion) {
    throw FormatError("unsupported bundle version " + std::to_string(version), 4);
  }
  Bundle b;
  const std::uint32_t count = r.get_u32("record count");
  b.clip_dim = r.get_u32("clip dim");
  b.style_dim = r.get_u32("style dim");
  b.partition.coarse_end = r.get_u32("coarse end");
  b.partition.medium_end = r.get_u32("medium end");
  b.partition.dim = b.style_dim;
  if (b.clip_dim == 0 || b.style_dim == 0) throw FormatError("zero dimension in header", 12);
  try {
    b.partition.validate();
  } catch (const Error& e) {
    throw FormatError(e.what(), 20);
  }

  const std::uint64_t stride = b.record_stride_bytes();
  const std::uint64_t complete = r.remaining() / stride;
  if (complete < count) {
    throw FormatError("truncated payload: header declares " + std::to_string(count) +
                          " records, payload holds " + std::to_string(complete),
                      Bundle::kHeaderBytes + complete * stride);
  }
  if (r.remaining() != count * stride) {
    throw FormatError("trailing bytes after " + std::to_string(count) + " records",
                      Bundle::kHeaderBytes + count * stride);
  }
  b.records.resize(count);
  for (std::uint32_t n = 0; n < count; ++n) {
    auto& rec = b.records[n];
    rec.id = std::to_string(n);
    rec.clip.resize(b.clip_dim);
    rec.style.resize(b.style_dim);
    for (double& v : rec.clip) v = r.get_f32("clip embedding of record " + std::to_string(n));
    for (double& v : rec.style) v = r.get_f32("style code of record " + std::to_string(n));
  }
  return b;
}

inline nlohmann::json bundle_manifest(const Bundle& bundle) {
  nlohmann::json m = bundle.manifest_extra;
  m["format"] = "DLSP";
  m["version"] = Bundle::kVersion;
  m["count"] = bundle.records.size();
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& rec : bundle.records) ids.push_back(rec.id);
  m["ids"] = ids;
  return m;
}

inline void write_bundle(const Bundle& bundle, const std::filesystem::path& path) {
  io::write_file(path, encode_bundle(bundle));
  const std::string text = bundle_manifest(bundle).dump(2) + "\n";
  io::write_file(manifest_path(path), std::span<const char>(text.data(), text.size()));
}

inline Bundle read_bundle(const std::filesystem::path& path) {
  Bundle b = decode_bundle(io::read_file(path));
  const auto sidecar = manifest_path(path);
  if (std::filesystem::exists(sidecar)) {
    const auto raw = io::read_file(sidecar);
    nlohmann::json m;
    try {
      m = nlohmann::json::parse(raw.begin(), raw.end());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::Format, "invalid bundle manifest '" + sidecar.string() + "': " + e.what());
    }
    if (m.contains("count") && m["count"].get<std::size_t>() != b.records.size()) {
      throw Error(ErrorCode::Format, "manifest count " + m["count"].dump() +
                                         " differs from bundle record count " +
                                         std::to_string(b.records.size()));
    }
    if (m.contains("ids")) {
      const auto& ids = m["ids"];
      if (ids.size() != b.records.size()) {
        throw Error(ErrorCode::Format, "manifest id list length differs from record count");
      }
      for (std::size_t i = 0; i < ids.size(); ++i) b.records[i].id = ids[i].get<std::string>();
    }
    for (const char* key : {"format", "version", "count", "ids"}) m.erase(key);
    b.manifest_extra = m;
  }
  return b;
}

/// Record-wise concatenation; bundles must agree on dims and partition.
inline Bundle concat_bundles(const std::vector<Bundle>& parts) {
  if (parts.empty()) throw Error(ErrorCode::InvalidArgument, "no bundles to concatenate");
  Bundle out = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const Bundle& p = parts[i];
    if (p.clip_dim != out.clip_dim || p.style_dim != out.style_dim || !(p.partition == out.partition)) {
      throw Error(ErrorCode::ShapeMismatch, "cannot concatenate bundles with different layouts");
    }
    out.records.insert(out.records.end(), p.records.begin(), p.records.end());
  }
  return out;
}

/// Draws ordered pairs (first, second) of distinct record indices,
/// uniformly over all n*(n-1) ordered pairs.
class PairSampler {
 public:
  PairSampler(std::size_t record_count, std::uint64_t seed) : n_(record_count), rng_(seed) {
    if (n_ < 2) {
      throw Error(ErrorCode::InvalidArgument, "pair sampling needs at least 2 records, got " +
                                                  std::to_string(n_));
    }
  }

  std::pair<std::size_t, std::size_t> next() {
    const auto first = static_cast<std::size_t>(rng_.index(n_));
    auto second = static_cast<std::size_t>(rng_.index(n_ - 1));
    if (second >= first) ++second;
    return {first, second};
  }

 private:
  std::size_t n_;
  Rng rng_;
};

inline std::vector<std::pair<std::size_t, std::size_t>> sample_pairs(const Bundle& bundle,
                                                                     std::size_t count,
                                                                     std::uint64_t seed) {
  PairSampler sampler(bundle.size(), seed);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(sampler.next());
  return out;
}

/// Row table of float32 values: "DLMX", u32 version, u32 rows, u32 cols,
/// then rows*cols little-endian float32. Used for text-embedding files
/// (one row per prompt) and probe tables (one row per style channel).
struct Matrix {
  static constexpr char kMagic[4] = {'D', 'L', 'M', 'X'};
  static constexpr std::uint32_t kVersion = 1;

  Tensor values;  // rank 2

  std::size_t rows() const { return values.rows(); }
  std::size_t cols() const { return values.cols(); }
  std::vector<double> row(std::size_t r) const {
    if (r >= rows()) {
      throw Error(ErrorCode::InvalidArgument, "row " + std::to_string(r) + " out of range (" +
                                                  std::to_string(rows()) + " rows)");
    }
    auto s = values.row(r);
    return {s.begin(), s.end()};
  }
};

inline void write_matrix(const Tensor& values, const std::filesystem::path& path) {
  if (values.rank() != 2) throw Error(ErrorCode::ShapeMismatch, "matrix file needs a rank-2 tensor");
  io::ByteWriter w;
  w.put_bytes(std::string_view(Matrix::kMagic, 4));
  w.put_u32(Matrix::kVersion);
  w.put_u32(static_cast<std::uint32_t>(values.rows()));
  w.put_u32(static_cast<std::uint32_t>(values.cols()));
  for (double v : values.data()) w.put_f32(v);
  io::write_file(path, w.bytes());
}

inline Matrix read_matrix(const std::filesystem::path& path) {
  io::ByteReader r(io::read_file(path));
  if (r.remaining() < 4 || r.get_bytes(4, "magic") != std::string_view(Matrix::kMagic, 4)) {
    throw FormatError("bad matrix magic (expected \"DLMX\")", 0);
  }
  const std::uint32_t version = r.get_u32("version");
  if (version != Matrix::kVersion) {
    throw FormatError("unsupported matrix version " + std::to_string(version), 4);
  }
  const std::uint32_t rows = r.get_u32("rows");
  const std::uint32_t cols = r.get_u32("cols");
  const std::uint64_t need = std::uint64_t{rows} * cols * 4;
  r.require(need, "matrix payload");
  std::vector<double> data(std::size_t{rows} * cols);
  for (double& v : data) v = r.get_f32("matrix payload");
  if (r.remaining() != 0) throw FormatError("trailing bytes after matrix payload", r.offset());
  return Matrix{Tensor::matrix(rows, cols, std::move(data))};
}

/// Reads a headerless little-endian float32 array of exactly `count` values.
inline std::vector<double> read_raw_f32(const std::filesystem::path& path, std::size_t count) {
  io::ByteReader r(io::read_file(path));
  if (r.remaining() != count * 4) {
    throw FormatError("raw array '" + path.string() + "' holds " + std::to_string(r.remaining()) +
                          " bytes, expected " + std::to_string(count * 4),
                      0);
  }
  std::vector<double> out(count);
  for (double& v : out) v = r.get_f32("raw array");
  return out;
}

/// Reads a headerless float32 array whose length is given by the file size.
inline std::vector<double> read_raw_f32(const std::filesystem::path& path) {
  io::ByteReader r(io::read_file(path));
  if (r.remaining() % 4 != 0) {
    throw FormatError("raw array '" + path.string() + "' size is not a multiple of 4", 0);
  }
  std::vector<double> out(r.remaining() / 4);
  for (double& v : out) v = r.get_f32("raw array");
  return out;
}

inline void write_raw_f32(std::span<const double> values, const std::filesystem::path& path) {
  io::ByteWriter w;
  for (double v : values) w.put_f32(v);
  io::write_file(path, w.bytes());
}

}  // namespace deltaedit

#pragma once

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

#include "deltaedit/autodiff.hpp"
#include "deltaedit/binary_io.hpp"

namespace deltaedit {

/// Container for named tensors: "DLCK", u32 version, u64 manifest length,
/// manifest JSON, then every tensor as little-endian float32 in manifest
/// order. Values are computed in float64 and persisted in float32.
struct Checkpoint {
  static constexpr char kMagic[4] = {'D', 'L', 'C', 'K'};
  static constexpr std::uint32_t kVersion = 1;

  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  ad::ParameterSet tensors;
};

inline std::vector<char> encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json manifest;
  manifest["format"] = "DLCK";
  manifest["version"] = Checkpoint::kVersion;
  manifest["kind"] = ckpt.kind;
  manifest["dtype"] = "float32";
  manifest["meta"] = ckpt.meta;
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
    entries.push_back({{"name", ckpt.tensors.name(i)}, {"shape", ckpt.tensors.tensor(i).shape()}});
  }
  manifest["tensors"] = entries;
  const std::string text = manifest.dump();

  io::ByteWriter w;
  w.put_bytes(std::string_view(Checkpoint::kMagic, 4));
  w.put_u32(Checkpoint::kVersion);
  w.put_u64(text.size());
  w.put_bytes(text);
  for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
    const Tensor& t = ckpt.tensors.tensor(i);
    if (!t.all_finite()) {
      throw Error(ErrorCode::NonFinite, "tensor '" + ckpt.tensors.name(i) + "' is not finite");
    }
    for (double v : t.data()) w.put_f32(v);
  }
  return w.bytes();
}

inline Checkpoint decode_checkpoint(std::vector<char> bytes) {
  io::ByteReader r(std::move(bytes));
  if (r.get_bytes(4, "magic") != std::string_view(Checkpoint::kMagic, 4)) {
    throw FormatError("bad checkpoint magic", 0);
  }
  const std::uint32_t version = r.get_u32("version");
  if (version != Checkpoint::kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  const std::uint64_t length = r.get_u64("manifest length");
  const std::uint64_t manifest_at = r.offset();
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(r.get_bytes(length, "manifest"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid checkpoint manifest: ") + e.what(), manifest_at);
  }

  Checkpoint ckpt;
  try {
    ckpt.kind = manifest.at("kind").get<std::string>();
    ckpt.meta = manifest.value("meta", nlohmann::json::object());
    if (manifest.at("dtype").get<std::string>() != "float32") {
      throw FormatError("unsupported dtype", manifest_at);
    }
    for (const auto& entry : manifest.at("tensors")) {
      auto shape = entry.at("shape").get<Tensor::Shape>();
      const std::string name = entry.at("name").get<std::string>();
      std::vector<double> data(Tensor::element_count(shape));
      r.require(data.size() * 4, "tensor '" + name + "'");
      for (double& v : data) v = r.get_f32("tensor '" + name + "'");
      ckpt.tensors.add(name, Tensor(std::move(shape), std::move(data)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid checkpoint manifest: ") + e.what(), manifest_at);
  }
  if (r.remaining() != 0) {
    throw FormatError("trailing bytes after checkpoint payload", r.offset());
  }
  return ckpt;
}

inline void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(ckpt));
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path));
}

}  // namespace deltaedit

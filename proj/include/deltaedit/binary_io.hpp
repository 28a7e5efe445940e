#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "deltaedit/error.hpp"

// Little-endian primitives shared by the bundle, matrix and checkpoint
// containers.

namespace deltaedit::io {

class ByteWriter {
 public:
  void put_u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
  void put_u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
  void put_f32(double v) { put_u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void put_bytes(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  const std::vector<char>& bytes() const noexcept { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  std::uint64_t offset() const noexcept { return pos_; }
  std::uint64_t remaining() const noexcept { return bytes_.size() - pos_; }

  void require(std::uint64_t n, const std::string& what) const {
    if (remaining() < n) {
      throw FormatError("truncated payload: need " + std::to_string(n) + " bytes for " + what +
                            ", " + std::to_string(remaining()) + " available",
                        pos_);
    }
  }

  std::uint32_t get_u32(const std::string& what) {
    require(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  std::uint64_t get_u64(const std::string& what) {
    require(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return v;
  }

  /// Reads a float32 and rejects NaN/Inf at the offset where it was found.
  double get_f32(const std::string& what) {
    const std::uint64_t at = pos_;
    const float f = std::bit_cast<float>(get_u32(what));
    if (!std::isfinite(f)) throw FormatError("non-finite value in " + what, at);
    return static_cast<double>(f);
  }

  std::string get_bytes(std::uint64_t n, const std::string& what) {
    require(n, what);
    std::string s(bytes_.data() + pos_, bytes_.data() + pos_ + n);
    pos_ += n;
    return s;
  }

 private:
  std::vector<char> bytes_;
  std::uint64_t pos_ = 0;
};

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write to '" + path.string() + "' failed");
}

}  // namespace deltaedit::io

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "deltaedit/rng.hpp"
#include "deltaedit/tensor.hpp"

namespace deltaedit::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    Rng rng(std::hash<std::string>{}(tag) ^ reinterpret_cast<std::uintptr_t>(this));
    path_ = std::filesystem::temp_directory_path() /
            ("deltaedit-" + tag + "-" + std::to_string(rng.next_u64() % 1000000007));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::vector<double> random_vector(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

inline Tensor random_tensor(Rng& rng, const Tensor::Shape& shape, double scale = 1.0) {
  Tensor t(shape);
  for (double& x : t.data()) x = scale * rng.normal();
  return t;
}

/// Value as stored in a float32 field.
inline double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace deltaedit::testing

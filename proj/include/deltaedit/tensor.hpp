#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deltaedit/error.hpp"

namespace deltaedit {

/// Dense row-major tensor of doubles. Rank is 1 or 2 in practice; every
/// operation in the library interprets a rank-1 tensor of length n as a
/// single row [1, n].
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (element_count(shape_) != data_.size()) {
      throw Error(ErrorCode::ShapeMismatch, "tensor shape " + shape_string(shape_) + " holds " +
                                                std::to_string(element_count(shape_)) +
                                                " elements but data has " +
                                                std::to_string(data_.size()));
    }
  }

  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  static Tensor vector(std::span<const double> values) {
    return vector(std::vector<double>(values.begin(), values.end()));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
  }

  static Tensor scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_, 0.0); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rank() const noexcept { return shape_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Leading dimension for rank-2 tensors, 1 otherwise.
  std::size_t rows() const noexcept { return shape_.size() >= 2 ? shape_[0] : 1; }
  /// Trailing (feature) dimension.
  std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols(), cols()};
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  void fill(double value) noexcept { std::fill(data_.begin(), data_.end(), value); }

  std::string shape_string() const { return shape_string(shape_); }

  static std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i != 0) out += ", ";
      out += std::to_string(shape[i]);
    }
    return out + "]";
  }

  static std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Small vector helpers shared across modules.

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::ShapeMismatch, "dot of lengths " + std::to_string(a.size()) + " and " +
                                              std::to_string(b.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline std::vector<double> normalized(std::span<const double> a) {
  const double n = l2_norm(a);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw Error(ErrorCode::InvalidArgument, "cannot normalize a zero or non-finite vector");
  }
  std::vector<double> out(a.begin(), a.end());
  for (double& v : out) v /= n;
  return out;
}

/// Cosine similarity with the denominator guarded at `eps`.
inline double cosine(std::span<const double> a, std::span<const double> b, double eps = 1e-12) {
  return dot(a, b) / std::max(l2_norm(a) * l2_norm(b), eps);
}

}  // namespace deltaedit

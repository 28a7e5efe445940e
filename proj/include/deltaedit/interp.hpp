#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <vector>

#include "deltaedit/bundle.hpp"
#include "deltaedit/tensor.hpp"

namespace deltaedit {

namespace detail {

inline void check_pair(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + " on vectors of length " +
                                              std::to_string(a.size()) + " and " +
                                              std::to_string(b.size()));
  }
}

inline void check_weight(double w, const char* what) {
  if (!(w >= 0.0 && w <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, std::string(what) + " weight must lie in [0, 1]");
  }
}

}  // namespace detail

/// s^lambda = lambda s1 + (1 - lambda) s2.
inline std::vector<double> lerp_s(std::span<const double> s1, std::span<const double> s2,
                                  double lambda) {
  detail::check_pair(s1, s2, "lerp_s");
  detail::check_weight(lambda, "lerp_s");
  std::vector<double> out(s1.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = lambda * s1[k] + (1.0 - lambda) * s2[k];
  return out;
}

/// s^omega = omega a + (1 - omega) b for two edited codes.
inline std::vector<double> lerp_edit(std::span<const double> a, std::span<const double> b,
                                     double omega) {
  detail::check_pair(a, b, "lerp_edit");
  detail::check_weight(omega, "lerp_edit");
  std::vector<double> out(a.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = omega * a[k] + (1.0 - omega) * b[k];
  return out;
}

inline constexpr double kSlerpMinAngle = 1e-6;

/// x^lambda = sin((1 - lambda) theta) / sin(theta) x1 + sin(lambda theta) / sin(theta) x2,
/// theta the angle between x1 and x2. Nearly parallel inputs fall back to
/// (1 - lambda) x1 + lambda x2; nearly antipodal inputs have no unique arc.
inline std::vector<double> slerp_xT(std::span<const double> x1, std::span<const double> x2,
                                    double lambda) {
  detail::check_pair(x1, x2, "slerp_xT");
  detail::check_weight(lambda, "slerp_xT");
  const double n1 = l2_norm(x1);
  const double n2 = l2_norm(x2);
  if (n1 == 0.0 || n2 == 0.0) {
    throw Error(ErrorCode::InvalidArgument, "slerp_xT on a zero vector");
  }
  const double theta = std::acos(std::clamp(dot(x1, x2) / (n1 * n2), -1.0, 1.0));
  if (theta > std::numbers::pi - kSlerpMinAngle) {
    throw Error(ErrorCode::InvalidArgument, "slerp_xT on antipodal vectors");
  }
  double a = 1.0 - lambda;
  double b = lambda;
  if (theta >= kSlerpMinAngle) {
    const double st = std::sin(theta);
    a = std::sin((1.0 - lambda) * theta) / st;
    b = std::sin(lambda * theta) / st;
  }
  std::vector<double> out(x1.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = a * x1[k] + b * x2[k];
  return out;
}

/// Level-wise style mixing: slices for `from_style` come from `style`, the
/// rest from `content`.
inline std::vector<double> splice_styles(std::span<const double> content,
                                         std::span<const double> style,
                                         const LevelPartition& partition,
                                         const std::set<Level>& from_style) {
  detail::check_pair(content, style, "splice_styles");
  partition.validate();
  if (content.size() != partition.dim) {
    throw Error(ErrorCode::ShapeMismatch, "style codes have dimension " +
                                              std::to_string(content.size()) + ", partition " +
                                              std::to_string(partition.dim));
  }
  std::vector<double> out(content.begin(), content.end());
  for (Level l : from_style) {
    for (std::size_t k = partition.begin(l); k < partition.end(l); ++k) out[k] = style[k];
  }
  return out;
}

inline std::set<Level> parse_levels(const std::vector<std::string>& names) {
  std::set<Level> out;
  for (const auto& n : names) out.insert(parse_level(n));
  return out;
}

}  // namespace deltaedit

#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "deltaedit/error.hpp"

namespace deltaedit::metrics {

/// Grayscale image, row-major, values in [0, range].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  double at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
};

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

struct ImagePair {
  const Image& a;
  const Image& b;
  double range = 255.0;

  void validate() const {
    if (a.height != b.height || a.width != b.width || a.pixels.size() != b.pixels.size()) {
      throw Error(ErrorCode::ShapeMismatch,
                  "image shapes " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                      " and " + std::to_string(b.height) + "x" + std::to_string(b.width) +
                      " differ");
    }
    if (a.pixels.size() != a.height * a.width) {
      throw Error(ErrorCode::ShapeMismatch, "pixel count does not match image shape");
    }
    if (!(range > 0.0)) throw Error(ErrorCode::InvalidArgument, "range must be positive");
    for (const Image* im : {&a, &b}) {
      for (double v : im->pixels) {
        if (!(v >= 0.0 && v <= range)) {
          throw Error(ErrorCode::InvalidArgument,
                      "pixel value " + std::to_string(v) + " outside [0, range]");
        }
      }
    }
  }
};

inline double mse(const ImagePair& p) {
  p.validate();
  if (p.a.pixels.empty()) throw Error(ErrorCode::InvalidArgument, "mse of empty images");
  double acc = 0.0;
  for (std::size_t k = 0; k < p.a.pixels.size(); ++k) {
    const double d = p.a.pixels[k] - p.b.pixels[k];
    acc += d * d;
  }
  return acc / static_cast<double>(p.a.pixels.size());
}

/// 10 log10(R^2 / mse); identical inputs give kInfinitePsnr.
inline double psnr_from_mse(double mse_value, double range = 255.0) {
  if (!(mse_value >= 0.0)) throw Error(ErrorCode::InvalidArgument, "mse must be >= 0");
  if (mse_value == 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(range * range / mse_value);
}

inline double psnr(const ImagePair& p) { return psnr_from_mse(mse(p), p.range); }

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean SSIM over every full window position (no padding), Gaussian
/// weights normalized to sum 1.
inline double ssim(const ImagePair& p, const SsimOptions& opt = {}) {
  p.validate();
  const std::size_t w = opt.window;
  if (w == 0 || p.a.height < w || p.a.width < w) {
    throw Error(ErrorCode::InvalidArgument, "image smaller than the " + std::to_string(w) + "x" +
                                                std::to_string(w) + " SSIM window");
  }
  std::vector<double> g(w);
  const double c = (static_cast<double>(w) - 1.0) / 2.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < w; ++k) {
    const double d = static_cast<double>(k) - c;
    g[k] = std::exp(-d * d / (2.0 * opt.sigma * opt.sigma));
    sum += g[k];
  }
  for (double& v : g) v /= sum;

  const double c1 = (opt.k1 * p.range) * (opt.k1 * p.range);
  const double c2 = (opt.k2 * p.range) * (opt.k2 * p.range);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t y0 = 0; y0 + w <= p.a.height; ++y0) {
    for (std::size_t x0 = 0; x0 + w <= p.a.width; ++x0) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t i = 0; i < w; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          const double wt = g[i] * g[j];
          const double va = p.a.at(y0 + i, x0 + j);
          const double vb = p.b.at(y0 + i, x0 + j);
          ma += wt * va;
          mb += wt * vb;
          saa += wt * va * va;
          sbb += wt * vb * vb;
          sab += wt * (va * vb);  // grouped so swapping a and b is bit-exact
        }
      }
      const double var_a = saa - ma * ma;
      const double var_b = sbb - mb * mb;
      const double cov = sab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace deltaedit::metrics

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "deltaedit/error.hpp"
#include "deltaedit/tensor.hpp"

namespace deltaedit {

/// Noise schedule indexed by t = 0..T. alpha_bar[0] = 1; beta[0] and
/// sigma[0] are unused placeholders so that every array is indexed by t.
struct DiffusionSchedule {
  std::size_t steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha_bar;
  std::vector<double> sigma;

  static DiffusionSchedule from_betas(std::vector<double> betas) {
    DiffusionSchedule s;
    s.steps = betas.size();
    s.beta.assign(1, 0.0);
    s.beta.insert(s.beta.end(), betas.begin(), betas.end());
    s.alpha_bar.assign(s.steps + 1, 1.0);
    for (std::size_t t = 1; t <= s.steps; ++t) {
      s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t]);
    }
    s.sigma.assign(s.steps + 1, 0.0);
    s.validate();
    return s;
  }

  /// Linear beta from beta_start to beta_end over T steps, sigma = 0.
  static DiffusionSchedule linear(std::size_t T, double beta_start = 1e-4, double beta_end = 0.02) {
    if (T == 0) throw Error(ErrorCode::InvalidArgument, "schedule needs T >= 1");
    std::vector<double> b(T);
    for (std::size_t k = 0; k < T; ++k) {
      const double f = T == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(T - 1);
      b[k] = beta_start + f * (beta_end - beta_start);
    }
    return from_betas(std::move(b));
  }

  /// sigma_t^2 = (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t, scaled
  /// by eta (eta = 1 is the ancestral DDPM sampler, 0 is DDIM).
  DiffusionSchedule with_ddpm_sigma(double eta = 1.0) const {
    DiffusionSchedule s = *this;
    for (std::size_t t = 1; t <= steps; ++t) {
      const double var = (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * beta[t];
      s.sigma[t] = eta * std::sqrt(var);
    }
    s.validate();
    return s;
  }

  double alpha(std::size_t t) const {
    check_t(t, 0);
    return alpha_bar[t];
  }

  bool deterministic() const {
    for (std::size_t t = 1; t <= steps; ++t) {
      if (sigma[t] != 0.0) return false;
    }
    return true;
  }

  bool admissible(std::size_t t) const {
    return sigma[t] >= 0.0 && sigma[t] * sigma[t] <= (1.0 - alpha_bar[t - 1]) * (1.0 + 1e-12);
  }

  void validate() const {
    if (steps == 0 || beta.size() != steps + 1 || alpha_bar.size() != steps + 1 ||
        sigma.size() != steps + 1) {
      throw Error(ErrorCode::InvalidArgument, "diffusion schedule arrays have inconsistent sizes");
    }
    for (std::size_t t = 1; t <= steps; ++t) {
      if (!(beta[t] > 0.0 && beta[t] < 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "beta_" + std::to_string(t) + " outside (0, 1)");
      }
      if (!(alpha_bar[t] < alpha_bar[t - 1] && alpha_bar[t] > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "alpha_bar must decrease strictly within (0, 1)");
      }
      if (!admissible(t)) {
        throw Error(ErrorCode::InvalidArgument,
                    "sigma_" + std::to_string(t) + " exceeds sqrt(1 - alpha_bar_{t-1})");
      }
    }
  }

  void check_t(std::size_t t, std::size_t lo) const {
    if (t < lo || t > steps) {
      throw Error(ErrorCode::InvalidArgument, "timestep " + std::to_string(t) + " outside [" +
                                                  std::to_string(lo) + ", " +
                                                  std::to_string(steps) + "]");
    }
  }
};

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": shapes " + a.shape_string() +
                                              " and " + b.shape_string() + " differ");
  }
}

}  // namespace detail

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise.
inline Tensor q_sample(const DiffusionSchedule& sched, const Tensor& x0, std::size_t t,
                       const Tensor& noise) {
  sched.check_t(t, 0);
  detail::check_same_shape(x0, noise, "q_sample");
  const double a = std::sqrt(sched.alpha_bar[t]);
  const double b = std::sqrt(1.0 - sched.alpha_bar[t]);
  Tensor out = x0;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = a * x0[k] + b * noise[k];
  return out;
}

/// One forward Markov transition x_{t-1} -> x_t.
inline Tensor markov_step(const DiffusionSchedule& sched, const Tensor& x_prev, std::size_t t,
                          const Tensor& noise) {
  sched.check_t(t, 1);
  detail::check_same_shape(x_prev, noise, "markov_step");
  const double a = std::sqrt(1.0 - sched.beta[t]);
  const double b = std::sqrt(sched.beta[t]);
  Tensor out = x_prev;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = a * x_prev[k] + b * noise[k];
  return out;
}

/// eps(x_t, t, s). Inputs are batched: x is [B, d], s is [B, D_s] or empty
/// for unconditional predictors. Output has the shape of x.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual Tensor predict(const Tensor& x, std::size_t t, const Tensor& s) const = 0;
};

/// Exact eps prediction for data x0 ~ N(mu, diag(var)):
///   eps*(x_t, t) = sqrt(1 - a) (x_t - sqrt(a) mu) / (a var + 1 - a),  a = alpha_bar_t.
/// Ignores s.
class GaussianOracle final : public NoisePredictor {
 public:
  GaussianOracle(const DiffusionSchedule& sched, std::vector<double> mean, std::vector<double> var)
      : sched_(sched), mean_(std::move(mean)), var_(std::move(var)) {
    if (mean_.size() != var_.size() || mean_.empty()) {
      throw Error(ErrorCode::ShapeMismatch, "oracle mean and variance must share a non-zero length");
    }
    for (double v : var_) {
      if (!(v > 0.0)) throw Error(ErrorCode::InvalidArgument, "oracle variances must be positive");
    }
  }

  Tensor predict(const Tensor& x, std::size_t t, const Tensor&) const override {
    sched_.check_t(t, 0);
    if (x.cols() != mean_.size()) {
      throw Error(ErrorCode::ShapeMismatch, "oracle dimension " + std::to_string(mean_.size()) +
                                                " vs input " + x.shape_string());
    }
    const double a = sched_.alpha_bar[t];
    const double ra = std::sqrt(a);
    const double rb = std::sqrt(1.0 - a);
    Tensor out = Tensor::zeros_like(x);
    const std::size_t d = mean_.size();
    for (std::size_t k = 0; k < x.size(); ++k) {
      const std::size_t j = k % d;
      out[k] = rb * (x[k] - ra * mean_[j]) / (a * var_[j] + 1.0 - a);
    }
    return out;
  }

  /// Posterior mean E[x0 | x_t] in closed form.
  std::vector<double> posterior_mean(std::span<const double> x, std::size_t t) const {
    const double a = sched_.alpha_bar[t];
    std::vector<double> out(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) {
      out[j] = (mean_[j] * (1.0 - a) + std::sqrt(a) * var_[j] * x[j]) / (a * var_[j] + 1.0 - a);
    }
    return out;
  }

 private:
  DiffusionSchedule sched_;
  std::vector<double> mean_;
  std::vector<double> var_;
};

struct DdimStep {
  Tensor x_prev;
  Tensor x0_pred;
};

namespace detail {

inline DdimStep ddim_update(const DiffusionSchedule& sched, const Tensor& x_t, const Tensor& eps,
                            std::size_t t_from, std::size_t t_to, double sigma, const Tensor* z) {
  detail::check_same_shape(x_t, eps, "predictor output");
  const double a_from = sched.alpha_bar[t_from];
  const double a_to = sched.alpha_bar[t_to];
  const double dir2 = 1.0 - a_to - sigma * sigma;
  const double dir = std::sqrt(std::max(dir2, 0.0));
  const double r_from = std::sqrt(1.0 - a_from);
  const double s_from = std::sqrt(a_from);
  const double s_to = std::sqrt(a_to);
  DdimStep out{Tensor::zeros_like(x_t), Tensor::zeros_like(x_t)};
  for (std::size_t k = 0; k < x_t.size(); ++k) {
    const double x0 = (x_t[k] - r_from * eps[k]) / s_from;
    out.x0_pred[k] = x0;
    out.x_prev[k] = s_to * x0 + dir * eps[k];
    if (sigma != 0.0) out.x_prev[k] += sigma * (*z)[k];
  }
  return out;
}

}  // namespace detail

/// One reverse step t -> t-1:
///   x0_pred = (x_t - sqrt(1 - a_t) eps) / sqrt(a_t)
///   x_{t-1} = sqrt(a_{t-1}) x0_pred + sqrt(1 - a_{t-1} - sigma_t^2) eps + sigma_t z
/// `z` may be null when sigma_t = 0; it is never read in that case.
inline DdimStep ddim_step(const DiffusionSchedule& sched, const NoisePredictor& predictor,
                          const Tensor& x_t, std::size_t t, const Tensor& s,
                          const Tensor* z = nullptr) {
  sched.check_t(t, 1);
  if (!sched.admissible(t)) {
    throw Error(ErrorCode::InvalidArgument, "sigma_" + std::to_string(t) + " is inadmissible");
  }
  const double sigma = sched.sigma[t];
  if (sigma != 0.0) {
    if (z == nullptr) throw Error(ErrorCode::InvalidArgument, "stochastic step needs noise z");
    detail::check_same_shape(x_t, *z, "ddim_step noise");
  }
  const Tensor eps = predictor.predict(x_t, t, s);
  return detail::ddim_update(sched, x_t, eps, t, t - 1, sigma, z);
}

/// Per-step states of a single trajectory, recorded when requested.
struct Trajectory {
  std::vector<std::size_t> t;
  std::vector<Tensor> x;
};

namespace detail {

inline void require_deterministic(const DiffusionSchedule& sched, const char* what) {
  if (!sched.deterministic()) {
    throw Error(ErrorCode::InvalidArgument,
                std::string(what) + " requires a deterministic schedule (sigma = 0)");
  }
}

}  // namespace detail

/// Deterministic encoding x0 -> x_T: the sigma = 0 update run from t to
/// t+1, with eps evaluated at the current state and time.
inline Tensor ddim_invert(const DiffusionSchedule& sched, const NoisePredictor& predictor,
                          const Tensor& x0, const Tensor& s, Trajectory* trace = nullptr) {
  detail::require_deterministic(sched, "ddim_invert");
  Tensor x = x0;
  if (trace) {
    trace->t.push_back(0);
    trace->x.push_back(x);
  }
  for (std::size_t t = 0; t < sched.steps; ++t) {
    const Tensor eps = predictor.predict(x, t, s);
    x = detail::ddim_update(sched, x, eps, t, t + 1, 0.0, nullptr).x_prev;
    if (trace) {
      trace->t.push_back(t + 1);
      trace->x.push_back(x);
    }
  }
  return x;
}

/// Deterministic decoding x_T -> x0.
inline Tensor ddim_decode(const DiffusionSchedule& sched, const NoisePredictor& predictor,
                          const Tensor& x_T, const Tensor& s, Trajectory* trace = nullptr) {
  detail::require_deterministic(sched, "ddim_decode");
  Tensor x = x_T;
  if (trace) {
    trace->t.push_back(sched.steps);
    trace->x.push_back(x);
  }
  for (std::size_t t = sched.steps; t >= 1; --t) {
    x = ddim_step(sched, predictor, x, t, s).x_prev;
    if (trace) {
      trace->t.push_back(t - 1);
      trace->x.push_back(x);
    }
  }
  return x;
}

/// Reverse sampling with the schedule's sigma; noise for step t is drawn by
/// `draw(shape)` so callers control the stream.
template <class Draw>
Tensor sample_reverse(const DiffusionSchedule& sched, const NoisePredictor& predictor,
                      const Tensor& x_T, const Tensor& s, Draw&& draw) {
  Tensor x = x_T;
  for (std::size_t t = sched.steps; t >= 1; --t) {
    if (sched.sigma[t] != 0.0) {
      const Tensor z = draw(x.shape());
      x = ddim_step(sched, predictor, x, t, s, &z).x_prev;
    } else {
      x = ddim_step(sched, predictor, x, t, s).x_prev;
    }
  }
  return x;
}

/// CSV with header `t,x_0,...,x_{d-1}`; only the first batch row is written.
inline void export_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "' for writing");
  const std::size_t d = traj.x.empty() ? 0 : traj.x.front().cols();
  out << 't';
  for (std::size_t j = 0; j < d; ++j) out << ",x_" << j;
  out << '\n';
  char buf[32];
  for (std::size_t k = 0; k < traj.x.size(); ++k) {
    out << traj.t[k];
    for (double v : traj.x[k].row(0)) {
      std::snprintf(buf, sizeof buf, "%.9g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::Io, "write to '" + path.string() + "' failed");
}

}  // namespace deltaedit

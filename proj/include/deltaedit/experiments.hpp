#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "deltaedit/diffusion.hpp"
#include "deltaedit/rng.hpp"
#include "deltaedit/style_predictor.hpp"
#include "deltaedit/synthetic.hpp"

// Drivers for the synthetic experiments shared by the CLI and the
// acceptance suite.

namespace deltaedit::experiments {

inline Tensor normal_tensor(Rng& rng, const Tensor::Shape& shape) {
  Tensor t(shape);
  for (double& v : t.data()) v = rng.normal();
  return t;
}

struct MomentCheck {
  std::size_t t = 0;
  std::vector<double> mean;           // empirical, per dim
  std::vector<double> var;            // empirical (unbiased), per dim
  std::vector<double> expected_mean;  // sqrt(alpha_bar_t) x0
  double expected_var = 0.0;          // 1 - alpha_bar_t
  double max_z_mean = 0.0;
  double max_z_var = 0.0;
  bool within(double bound) const { return max_z_mean <= bound && max_z_var <= bound; }
};

/// Runs `chains` independent forward Markov chains from x0 and compares the
/// empirical marginal at each requested t with the closed form
/// N(sqrt(alpha_bar_t) x0, (1 - alpha_bar_t) I). z-scores use the standard
/// errors sqrt(var / n) for the mean and var sqrt(2 / (n - 1)) for the
/// variance.
inline std::vector<MomentCheck> markov_consistency(const DiffusionSchedule& sched,
                                                   const std::vector<double>& x0,
                                                   std::size_t chains,
                                                   const std::vector<std::size_t>& at,
                                                   std::uint64_t seed) {
  if (chains < 2) throw Error(ErrorCode::InvalidArgument, "need at least 2 chains");
  std::size_t t_max = 0;
  for (std::size_t t : at) {
    sched.check_t(t, 1);
    t_max = std::max(t_max, t);
  }
  const std::size_t d = x0.size();
  Rng rng(seed);
  Tensor x({chains, d});
  for (std::size_t c = 0; c < chains; ++c) std::copy(x0.begin(), x0.end(), x.row(c).begin());
  Tensor noise({chains, d});
  std::vector<MomentCheck> out;
  const double n = static_cast<double>(chains);
  for (std::size_t t = 1; t <= t_max; ++t) {
    for (double& v : noise.data()) v = rng.normal();
    x = markov_step(sched, x, t, noise);
    if (std::find(at.begin(), at.end(), t) == at.end()) continue;
    MomentCheck m;
    m.t = t;
    m.mean.assign(d, 0.0);
    m.var.assign(d, 0.0);
    for (std::size_t c = 0; c < chains; ++c) {
      for (std::size_t j = 0; j < d; ++j) m.mean[j] += x.at(c, j);
    }
    for (double& v : m.mean) v /= n;
    for (std::size_t c = 0; c < chains; ++c) {
      for (std::size_t j = 0; j < d; ++j) {
        const double e = x.at(c, j) - m.mean[j];
        m.var[j] += e * e;
      }
    }
    for (double& v : m.var) v /= n - 1.0;
    const double a = sched.alpha_bar[t];
    m.expected_var = 1.0 - a;
    const double se_mean = std::sqrt(m.expected_var / n);
    const double se_var = m.expected_var * std::sqrt(2.0 / (n - 1.0));
    for (std::size_t j = 0; j < d; ++j) {
      m.expected_mean.push_back(std::sqrt(a) * x0[j]);
      m.max_z_mean = std::max(m.max_z_mean, std::abs(m.mean[j] - m.expected_mean[j]) / se_mean);
      m.max_z_var = std::max(m.max_z_var, std::abs(m.var[j] - m.expected_var) / se_var);
    }
    out.push_back(std::move(m));
  }
  return out;
}

/// Gaussian data model for oracle experiments: mean ~ N(0, 0.25),
/// variance ~ U(0.25, 2), per dimension.
struct GaussianModel {
  std::vector<double> mean;
  std::vector<double> var;

  static GaussianModel random(std::size_t dim, Rng& rng) {
    GaussianModel g;
    for (std::size_t j = 0; j < dim; ++j) {
      g.mean.push_back(0.5 * rng.normal());
      g.var.push_back(rng.uniform(0.25, 2.0));
    }
    return g;
  }

  Tensor sample(std::size_t count, Rng& rng) const {
    Tensor x({count, mean.size()});
    for (std::size_t r = 0; r < count; ++r) {
      for (std::size_t j = 0; j < mean.size(); ++j) {
        x.at(r, j) = mean[j] + std::sqrt(var[j]) * rng.normal();
      }
    }
    return x;
  }
};

inline double mean_squared_error(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.size() == 0) {
    throw Error(ErrorCode::ShapeMismatch, "mean_squared_error on " + a.shape_string() + " and " +
                                              b.shape_string());
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += (a[k] - b[k]) * (a[k] - b[k]);
  return acc / static_cast<double>(a.size());
}

struct RoundTrip {
  std::size_t steps = 0;
  double mse = 0.0;           // per-dimension, averaged over samples
  bool bit_identical = false; // two decodes of the same x_T agree bitwise
};

/// decode(invert(x0)) with the exact Gaussian predictor on a linear
/// schedule of `steps` steps. The data model and samples depend only on
/// `seed`, so sweeps over `steps` see the same x0.
inline RoundTrip oracle_roundtrip(std::size_t dim, std::size_t steps, std::size_t samples,
                                  std::uint64_t seed) {
  Rng rng(seed);
  const auto model = GaussianModel::random(dim, rng);
  const Tensor x0 = model.sample(samples, rng);
  const auto sched = DiffusionSchedule::linear(steps);
  const GaussianOracle oracle(sched, model.mean, model.var);
  const Tensor none;
  const Tensor xT = ddim_invert(sched, oracle, x0, none);
  const Tensor first = ddim_decode(sched, oracle, xT, none);
  const Tensor second = ddim_decode(sched, oracle, xT, none);
  return {steps, mean_squared_error(first, x0), first == second};
}

struct StyleReconstruction {
  double final_loss = 0.0;
  double mse = 0.0;            // decode from x_T ~ q(x_T | x0), conditioned on s
  double roundtrip_mse = 0.0;  // decode(invert(x0, s), s)
  double data_power = 0.0;     // mean x0^2, for scale
};

/// Trains a StylePredictor on x0 = L s + b and measures conditional DDIM
/// decoding on held-out (x0, s) pairs.
inline StyleReconstruction style_reconstruction(const DiffusionSchedule& sched,
                                                const StylePredictorConfig& config,
                                                const StyleTrainConfig& train,
                                                std::size_t records, std::size_t eval_count,
                                                std::uint64_t seed, StyleTrainResult* trained = nullptr) {
  Rng seeder(seed);
  const auto data_seed = seeder.next_u64();
  const auto train_seed = seeder.next_u64();
  Rng noise_rng(seeder.next_u64());
  const auto data =
      make_style_dataset(records + eval_count, config.data_dim, config.partition.dim, data_seed);
  const std::size_t d = config.data_dim;
  const std::size_t ds = config.partition.dim;
  Tensor x_train({records, d}), s_train({records, ds}), x_eval({eval_count, d}),
      s_eval({eval_count, ds});
  for (std::size_t k = 0; k < records + eval_count; ++k) {
    const bool tr = k < records;
    const std::size_t r = tr ? k : k - records;
    std::ranges::copy(data.x0.row(k), (tr ? x_train : x_eval).row(r).begin());
    std::ranges::copy(data.styles.row(k), (tr ? s_train : s_eval).row(r).begin());
  }
  StyleTrainResult res = train_style_predictor(sched, x_train, s_train, config, train, train_seed);
  const StylePredictor predictor(config, res.params);

  StyleReconstruction out;
  out.final_loss = res.log.back().loss;
  const Tensor noise = normal_tensor(noise_rng, x_eval.shape());
  const Tensor xT = q_sample(sched, x_eval, sched.steps, noise);
  out.mse = mean_squared_error(ddim_decode(sched, predictor, xT, s_eval), x_eval);
  const Tensor inv = ddim_invert(sched, predictor, x_eval, s_eval);
  out.roundtrip_mse = mean_squared_error(ddim_decode(sched, predictor, inv, s_eval), x_eval);
  double p = 0.0;
  for (double v : x_eval.data()) p += v * v;
  out.data_power = p / static_cast<double>(x_eval.size());
  if (trained) *trained = std::move(res);
  return out;
}

}  // namespace deltaedit::experiments

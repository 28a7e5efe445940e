#pragma once

#include <json.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "deltaedit/adam.hpp"
#include "deltaedit/bundle.hpp"
#include "deltaedit/checkpoint.hpp"
#include "deltaedit/diffusion.hpp"
#include "deltaedit/rng.hpp"

namespace deltaedit {

/// Sinusoidal embedding: sin(t w_k) for the first half, cos(t w_k) for the
/// second, with w_k = 10000^(-k / (dim/2)).
inline std::vector<double> timestep_embedding(double t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) {
    throw Error(ErrorCode::InvalidArgument, "timestep embedding dim must be even and positive");
  }
  const std::size_t half = dim / 2;
  std::vector<double> out(dim);
  for (std::size_t k = 0; k < half; ++k) {
    const double w = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
    out[k] = std::sin(t * w);
    out[half + k] = std::cos(t * w);
  }
  return out;
}

enum class LossNorm { L1, L2 };

inline const char* loss_norm_name(LossNorm n) { return n == LossNorm::L1 ? "l1" : "l2"; }

inline LossNorm parse_loss_norm(const std::string& s) {
  if (s == "l1") return LossNorm::L1;
  if (s == "l2") return LossNorm::L2;
  throw Error(ErrorCode::InvalidArgument, "unknown loss norm '" + s + "'");
}

struct StylePredictorConfig {
  std::size_t data_dim = 8;
  LevelPartition partition{4, 8, 12};
  std::size_t hidden = 64;
  std::size_t temb_dim = 64;
  std::size_t groups = 4;
  double leaky_slope = 0.2;

  void validate() const {
    partition.validate();
    if (data_dim == 0 || hidden == 0 || groups == 0 || hidden % groups != 0) {
      throw Error(ErrorCode::InvalidArgument,
                  "style predictor needs data_dim > 0 and hidden divisible by groups");
    }
    if (temb_dim == 0 || temb_dim % 2 != 0) {
      throw Error(ErrorCode::InvalidArgument, "timestep embedding dim must be even");
    }
  }
};

/// eps_theta(x_t, t, s): an MLP trunk whose hidden features h_l, at three
/// depths, pass through GroupNorm and are modulated by the matching level
/// of s:
///   h = FC_in([x_t, temb])
///   for l in coarse, medium, fine:
///     [scale, shift] = head_l([s_l, temb])
///     h = leaky(GN(h) (1 + scale) + shift)
///     h = FC_l(h)            (FC_fine maps to the data dim)
class StylePredictor final : public NoisePredictor {
 public:
  struct GraphNodes {
    ad::NodeId x_in;
    ad::NodeId temb_in;
    ad::NodeId style_in;
    ad::NodeId target_in;
    ad::NodeId output;
    ad::NodeId l1;
    ad::NodeId l2;
  };

  StylePredictor(StylePredictorConfig config, ad::ParameterSet params)
      : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
  }

  const StylePredictorConfig& config() const noexcept { return config_; }
  const ad::ParameterSet& params() const noexcept { return params_; }

  static std::vector<std::pair<std::string, Tensor::Shape>> parameter_shapes(
      const StylePredictorConfig& c) {
    const std::size_t h = c.hidden;
    std::vector<std::pair<std::string, Tensor::Shape>> out = {
        {"trunk.in.weight", {c.data_dim + c.temb_dim, h}},
        {"trunk.in.bias", {h}},
    };
    for (Level l : kLevels) {
      const std::string name = std::string("head.") + level_name(l);
      out.push_back({name + ".weight", {c.partition.width(l) + c.temb_dim, 2 * h}});
      out.push_back({name + ".bias", {2 * h}});
    }
    for (Level l : kLevels) {
      const std::string name = std::string("trunk.") + level_name(l);
      const std::size_t width = l == Level::Fine ? c.data_dim : h;
      out.push_back({name + ".weight", {h, width}});
      out.push_back({name + ".bias", {width}});
    }
    return out;
  }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases start at zero.
  static ad::ParameterSet init_params(const StylePredictorConfig& c, std::uint64_t seed) {
    c.validate();
    Rng rng(seed);
    ad::ParameterSet p;
    for (auto& [name, shape] : parameter_shapes(c)) {
      Tensor t(shape);
      if (shape.size() == 2) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(shape[0]));
        for (double& v : t.data()) v = rng.uniform(-bound, bound);
      }
      p.add(name, std::move(t));
    }
    return p;
  }

  /// Copy of `params` with every modulation head set to zero.
  static ad::ParameterSet zero_heads(ad::ParameterSet params) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params.name(i).starts_with("head.")) {
        for (double& v : params.tensor(i).data()) v = 0.0;
      }
    }
    return params;
  }

  static GraphNodes build(ad::Graph& g, const StylePredictorConfig& c) {
    GraphNodes n{};
    n.x_in = g.input("x");
    n.temb_in = g.input("temb");
    n.style_in = g.input("style");
    n.target_in = g.input("target");
    const std::size_t h = c.hidden;
    auto fc = [&g](ad::NodeId x, const std::string& name) {
      return g.add(g.matmul(x, g.parameter(name + ".weight")), g.parameter(name + ".bias"));
    };
    ad::NodeId x = fc(g.concat({n.x_in, n.temb_in}), "trunk.in");
    for (Level l : kLevels) {
      const std::string lname = level_name(l);
      const auto s_l = g.slice(n.style_in, c.partition.begin(l), c.partition.end(l));
      const auto head = fc(g.concat({s_l, n.temb_in}), "head." + lname);
      x = g.affine_modulate(g.group_norm(x, c.groups), g.slice(head, 0, h), g.slice(head, h, 2 * h));
      x = fc(g.leaky_relu(x, c.leaky_slope), "trunk." + lname);
    }
    n.output = x;
    const auto diff = g.sub(n.output, n.target_in);
    n.l1 = g.mean_abs(diff);
    n.l2 = g.mean_square(diff);
    return n;
  }

  Tensor predict(const Tensor& x, std::size_t t, const Tensor& s) const override {
    const std::size_t b = x.rows();
    if (x.cols() != config_.data_dim || s.cols() != config_.partition.dim || s.rows() != b) {
      throw Error(ErrorCode::ShapeMismatch, "style predictor inputs " + x.shape_string() + " and " +
                                                s.shape_string() + " do not match data dim " +
                                                std::to_string(config_.data_dim) +
                                                " / style dim " +
                                                std::to_string(config_.partition.dim));
    }
    const auto e = timestep_embedding(static_cast<double>(t), config_.temb_dim);
    Tensor temb({b, config_.temb_dim});
    for (std::size_t r = 0; r < b; ++r) std::copy(e.begin(), e.end(), temb.row(r).begin());
    ad::Graph g;
    const auto n = build(g, config_);
    const ad::Bindings in{{"x", as_matrix(x)}, {"temb", std::move(temb)}, {"style", as_matrix(s)}};
    Tensor out = g.forward(n.output, in, params_);
    return Tensor(x.shape(), std::move(out.storage()));
  }

 private:
  static Tensor as_matrix(const Tensor& t) {
    if (t.rank() == 2) return t;
    return Tensor::matrix(1, t.size(), {t.data().begin(), t.data().end()});
  }

  StylePredictorConfig config_;
  ad::ParameterSet params_;
};

struct StyleTrainConfig {
  std::size_t steps = 20000;
  std::size_t batch_size = 64;
  LossNorm loss = LossNorm::L1;
  ad::AdamOptions adam{};
  std::size_t log_interval = 500;
};

struct StyleLogEntry {
  std::size_t step = 0;
  double loss = 0.0;
};

struct StyleTrainResult {
  StylePredictorConfig config;
  ad::ParameterSet params;
  std::vector<StyleLogEntry> log;
};

using StyleLogSink = std::function<void(const StyleLogEntry&)>;

/// Noise-prediction training: per sample draw t ~ U{1..T} and eps ~ N(0, I),
/// form x_t by q_sample and minimize |eps_theta(x_t, t, s) - eps| (mean L1,
/// or mean squared error with LossNorm::L2).
inline StyleTrainResult train_style_predictor(const DiffusionSchedule& sched, const Tensor& x0,
                                              const Tensor& styles,
                                              const StylePredictorConfig& config,
                                              const StyleTrainConfig& cfg, std::uint64_t seed,
                                              const StyleLogSink& sink = {}) {
  config.validate();
  if (x0.rank() != 2 || x0.rows() == 0 || x0.cols() != config.data_dim) {
    throw Error(ErrorCode::ShapeMismatch, "training data " + x0.shape_string() +
                                              " does not match data dim " +
                                              std::to_string(config.data_dim));
  }
  if (styles.rank() != 2 || styles.rows() != x0.rows() || styles.cols() != config.partition.dim) {
    throw Error(ErrorCode::ShapeMismatch, "style codes " + styles.shape_string() +
                                              " do not pair with data " + x0.shape_string());
  }
  Rng seeder(seed);
  const std::uint64_t init_seed = seeder.next_u64();
  Rng rng(seeder.next_u64());

  StyleTrainResult result;
  result.config = config;
  result.params = StylePredictor::init_params(config, init_seed);
  ad::AdamState adam(result.params, cfg.adam);

  ad::Graph g;
  const auto n = StylePredictor::build(g, config);
  const ad::NodeId loss_node = cfg.loss == LossNorm::L1 ? n.l1 : n.l2;

  const std::size_t b = cfg.batch_size;
  const std::size_t d = config.data_dim;
  const std::size_t ds = config.partition.dim;
  std::vector<std::vector<double>> temb_table(sched.steps + 1);
  for (std::size_t t = 1; t <= sched.steps; ++t) {
    temb_table[t] = timestep_embedding(static_cast<double>(t), config.temb_dim);
  }

  ad::Bindings in{{"x", Tensor({b, d})},
                  {"temb", Tensor({b, config.temb_dim})},
                  {"style", Tensor({b, ds})},
                  {"target", Tensor({b, d})}};
  Tensor& xt = in.find("x")->second;
  Tensor& temb = in.find("temb")->second;
  Tensor& style = in.find("style")->second;
  Tensor& target = in.find("target")->second;

  for (std::size_t step = 0; step <= cfg.steps; ++step) {
    for (std::size_t r = 0; r < b; ++r) {
      const auto k = static_cast<std::size_t>(rng.index(x0.rows()));
      const auto t = 1 + static_cast<std::size_t>(rng.index(sched.steps));
      const double sa = std::sqrt(sched.alpha_bar[t]);
      const double sb = std::sqrt(1.0 - sched.alpha_bar[t]);
      auto xr = xt.row(r);
      auto er = target.row(r);
      const auto src = x0.row(k);
      for (std::size_t j = 0; j < d; ++j) {
        er[j] = rng.normal();
        xr[j] = sa * src[j] + sb * er[j];
      }
      std::copy(temb_table[t].begin(), temb_table[t].end(), temb.row(r).begin());
      const auto sr = styles.row(k);
      std::copy(sr.begin(), sr.end(), style.row(r).begin());
    }
    const double loss = g.forward(loss_node, in, result.params)[0];
    if (!std::isfinite(loss)) {
      throw Error(ErrorCode::Divergence,
                  "style predictor training diverged at step " + std::to_string(step));
    }
    const bool last = step == cfg.steps;
    if (last || step == 0 || (cfg.log_interval > 0 && step % cfg.log_interval == 0)) {
      StyleLogEntry e{step, loss};
      result.log.push_back(e);
      if (sink) sink(e);
    }
    if (last) break;
    ad::adam_step(result.params, g.backward(loss_node), adam);
  }
  return result;
}

inline nlohmann::json style_predictor_meta(const StylePredictorConfig& c) {
  return {{"data_dim", c.data_dim},
          {"style_dim", c.partition.dim},
          {"coarse_end", c.partition.coarse_end},
          {"medium_end", c.partition.medium_end},
          {"hidden", c.hidden},
          {"temb_dim", c.temb_dim},
          {"groups", c.groups},
          {"leaky_slope", c.leaky_slope}};
}

inline Checkpoint style_predictor_checkpoint(const StylePredictorConfig& c,
                                             const ad::ParameterSet& params) {
  return Checkpoint{"style_predictor", style_predictor_meta(c), params};
}

inline StylePredictor style_predictor_from(const Checkpoint& ckpt) {
  if (ckpt.kind != "style_predictor") {
    throw Error(ErrorCode::Format, "checkpoint kind '" + ckpt.kind + "' is not 'style_predictor'");
  }
  StylePredictorConfig c;
  try {
    const auto& m = ckpt.meta;
    c.data_dim = m.at("data_dim").get<std::size_t>();
    c.partition = {m.at("coarse_end").get<std::size_t>(), m.at("medium_end").get<std::size_t>(),
                   m.at("style_dim").get<std::size_t>()};
    c.hidden = m.at("hidden").get<std::size_t>();
    c.temb_dim = m.at("temb_dim").get<std::size_t>();
    c.groups = m.at("groups").get<std::size_t>();
    c.leaky_slope = m.at("leaky_slope").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, std::string("style predictor checkpoint meta: ") + e.what());
  }
  return StylePredictor(c, ckpt.tensors);
}

}  // namespace deltaedit

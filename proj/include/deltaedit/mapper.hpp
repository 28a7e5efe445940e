#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "deltaedit/autodiff.hpp"
#include "deltaedit/bundle.hpp"
#include "deltaedit/delta_space.hpp"
#include "deltaedit/rng.hpp"

namespace deltaedit {

/// Delta: the condition module sees concat(delta, anchor).
/// Baseline: the straightforward variant, conditioned on concat(i1, target).
enum class ConditionMode { Delta, Baseline };

inline const char* mode_name(ConditionMode m) {
  return m == ConditionMode::Delta ? "delta" : "baseline";
}

inline ConditionMode parse_mode(const std::string& s) {
  if (s == "delta") return ConditionMode::Delta;
  if (s == "baseline") return ConditionMode::Baseline;
  throw Error(ErrorCode::InvalidArgument, "unknown mapper mode '" + s + "'");
}

struct MapperConfig {
  std::size_t clip_dim = 512;
  LevelPartition partition{32, 64, 96};
  std::size_t hidden = 128;
  std::size_t depth = 4;  // fully-connected layers per sub-module
  double leaky_slope = 0.2;
  ConditionMode mode = ConditionMode::Delta;

  std::size_t style_dim() const { return partition.dim; }
  std::size_t condition_dim() const { return 2 * clip_dim; }

  void validate() const {
    partition.validate();
    if (clip_dim == 0 || hidden == 0 || depth == 0) {
      throw Error(ErrorCode::InvalidArgument, "mapper dims and depth must be positive");
    }
  }
};

struct EditDirection {
  std::vector<double> delta_s;
};

/// Per-sample objective: rec = |pred - target|_2, sim = 1 - cos(pred, target).
struct LossBreakdown {
  double rec = 0.0;
  double sim = 0.0;
  double total = 0.0;
};

inline LossBreakdown loss_breakdown(std::span<const double> predicted,
                                    std::span<const double> target) {
  if (predicted.size() != target.size()) {
    throw Error(ErrorCode::ShapeMismatch, "loss_breakdown on vectors of different length");
  }
  std::vector<double> diff(predicted.size());
  for (std::size_t k = 0; k < diff.size(); ++k) diff[k] = predicted[k] - target[k];
  LossBreakdown l;
  l.rec = l2_norm(diff);
  l.sim = 1.0 - cosine(predicted, target);
  l.total = l.rec + l.sim;
  return l;
}

/// Condition-module input for one sample. In delta mode `first` is the
/// anchor embedding and `second` the delta; in baseline mode they are the
/// source embedding and the target embedding, both normalized here.
inline std::vector<double> condition_input(ConditionMode mode, std::span<const double> first,
                                           std::span<const double> second) {
  std::vector<double> out;
  out.reserve(first.size() + second.size());
  if (mode == ConditionMode::Delta) {
    // order: delta then anchor
    out.insert(out.end(), second.begin(), second.end());
    out.insert(out.end(), first.begin(), first.end());
  } else {
    const auto a = normalized(first);
    const auto b = normalized(second);
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

inline std::vector<double> condition_input(const DeltaCondition& c) {
  return condition_input(ConditionMode::Delta, c.anchor, c.delta);
}

/// Three-level mapper. For each level l the Style sub-module encodes that
/// level's slice of s1, the Condition sub-module encodes the shared
/// condition vector, and the Fusion sub-module maps their concatenation to
/// the level's slice of the editing direction. Sub-modules are stacks of
/// `depth` fully-connected layers (x W + b) with leaky-ReLU between layers.
class DeltaMapper {
 public:
  struct GraphNodes {
    ad::NodeId style_in;
    ad::NodeId condition_in;
    ad::NodeId target_in;
    ad::NodeId output;
    ad::NodeId rec;
    ad::NodeId sim;
    ad::NodeId total;
    std::array<ad::NodeId, 3> style_features;
    std::array<ad::NodeId, 3> condition_features;
  };

  explicit DeltaMapper(MapperConfig config) : config_(std::move(config)) { config_.validate(); }

  const MapperConfig& config() const noexcept { return config_; }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  ad::ParameterSet init_params(std::uint64_t seed) const {
    Rng rng(seed);
    ad::ParameterSet p;
    for (const auto& spec : layer_specs()) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(spec.in));
      Tensor w({spec.in, spec.out});
      for (double& v : w.data()) v = rng.uniform(-bound, bound);
      Tensor b({spec.out});
      for (double& v : b.data()) v = rng.uniform(-bound, bound);
      p.add(spec.name + ".weight", std::move(w));
      p.add(spec.name + ".bias", std::move(b));
    }
    return p;
  }

  ad::ParameterSet zero_params() const { return init_params(0).zeros_like(); }

  /// Builds the batched network plus its loss. Inputs: "style" [B, D_s],
  /// "condition" [B, 2*D_i], "target" [B, D_s] (only needed for the loss).
  GraphNodes build(ad::Graph& g) const {
    GraphNodes n{};
    n.style_in = g.input("style");
    n.condition_in = g.input("condition");
    n.target_in = g.input("target");
    std::vector<ad::NodeId> level_out;
    for (Level l : kLevels) {
      const std::string prefix = level_name(l);
      const auto i = static_cast<std::size_t>(l);
      const auto slice =
          g.slice(n.style_in, config_.partition.begin(l), config_.partition.end(l));
      n.style_features[i] = mlp(g, prefix + ".style", slice);
      n.condition_features[i] = mlp(g, prefix + ".condition", n.condition_in);
      const auto fused = g.concat({n.condition_features[i], n.style_features[i]});
      level_out.push_back(mlp(g, prefix + ".fusion", fused));
    }
    n.output = g.concat(level_out);
    n.rec = g.mean(g.row_l2_norm(g.sub(n.output, n.target_in)));
    n.sim = g.mean(g.scale(g.row_cosine(n.output, n.target_in), -1.0, 1.0));
    n.total = g.add(n.rec, n.sim);
    return n;
  }

  /// Batched forward: styles [B, D_s], conditions [B, 2*D_i] -> [B, D_s].
  Tensor forward_batch(const ad::ParameterSet& params, const Tensor& styles,
                       const Tensor& conditions) const {
    check_batch(styles, conditions);
    ad::Graph g;
    const auto n = build(g);
    ad::Bindings in{{"style", styles}, {"condition", conditions}};
    return g.forward(n.output, in, params);
  }

  EditDirection forward(const ad::ParameterSet& params, std::span<const double> s1,
                        std::span<const double> condition) const {
    const Tensor out = forward_batch(params, Tensor::matrix(1, s1.size(), {s1.begin(), s1.end()}),
                                     Tensor::matrix(1, condition.size(),
                                                    {condition.begin(), condition.end()}));
    return {{out.data().begin(), out.data().end()}};
  }

  /// Delta-mode forward on a DeltaCondition.
  EditDirection forward(const ad::ParameterSet& params, std::span<const double> s1,
                        const DeltaCondition& cond) const {
    if (config_.mode != ConditionMode::Delta) {
      throw Error(ErrorCode::InvalidArgument, "DeltaCondition given to a baseline mapper");
    }
    check_clip(cond.anchor.size());
    check_clip(cond.delta.size());
    return forward(params, s1, condition_input(cond));
  }

  /// Straightforward baseline: condition on (i1, target embedding).
  EditDirection baseline_forward(const ad::ParameterSet& params, std::span<const double> s1,
                                 std::span<const double> i1,
                                 std::span<const double> target) const {
    if (config_.mode != ConditionMode::Baseline) {
      throw Error(ErrorCode::InvalidArgument, "baseline_forward on a delta-mode mapper");
    }
    check_clip(i1.size());
    check_clip(target.size());
    return forward(params, s1, condition_input(ConditionMode::Baseline, i1, target));
  }

  struct BatchLoss {
    LossBreakdown loss;
    ad::Gradients grads;
  };

  BatchLoss loss_and_gradients(const ad::ParameterSet& params, const Tensor& styles,
                               const Tensor& conditions, const Tensor& targets) const {
    ad::Graph g;
    const auto n = build(g);
    check_batch(styles, conditions);
    ad::Bindings in{{"style", styles}, {"condition", conditions}, {"target", targets}};
    BatchLoss out;
    out.loss.total = g.forward(n.total, in, params)[0];
    out.loss.rec = g.value(n.rec)[0];
    out.loss.sim = g.value(n.sim)[0];
    out.grads = g.backward(n.total);
    return out;
  }

  LossBreakdown batch_loss(const ad::ParameterSet& params, const Tensor& styles,
                           const Tensor& conditions, const Tensor& targets) const {
    ad::Graph g;
    const auto n = build(g);
    check_batch(styles, conditions);
    ad::Bindings in{{"style", styles}, {"condition", conditions}, {"target", targets}};
    LossBreakdown l;
    l.total = g.forward(n.total, in, params)[0];
    l.rec = g.value(n.rec)[0];
    l.sim = g.value(n.sim)[0];
    return l;
  }

 private:
  struct LayerSpec {
    std::string name;
    std::size_t in;
    std::size_t out;
  };

  std::vector<LayerSpec> layer_specs() const {
    std::vector<LayerSpec> specs;
    const std::size_t h = config_.hidden;
    for (Level l : kLevels) {
      const std::string prefix = level_name(l);
      const std::size_t w = config_.partition.width(l);
      append_stack(specs, prefix + ".style", w, h);
      append_stack(specs, prefix + ".condition", config_.condition_dim(), h);
      append_stack(specs, prefix + ".fusion", 2 * h, w);
    }
    return specs;
  }

  void append_stack(std::vector<LayerSpec>& specs, const std::string& name, std::size_t in,
                    std::size_t out) const {
    for (std::size_t k = 0; k < config_.depth; ++k) {
      const std::size_t lin = k == 0 ? in : config_.hidden;
      const std::size_t lout = k + 1 == config_.depth ? out : config_.hidden;
      specs.push_back({name + "." + std::to_string(k), lin, lout});
    }
  }

  ad::NodeId mlp(ad::Graph& g, const std::string& name, ad::NodeId x) const {
    for (std::size_t k = 0; k < config_.depth; ++k) {
      const std::string layer = name + "." + std::to_string(k);
      x = g.add(g.matmul(x, g.parameter(layer + ".weight")), g.parameter(layer + ".bias"));
      if (k + 1 != config_.depth) x = g.leaky_relu(x, config_.leaky_slope);
    }
    return x;
  }

  void check_clip(std::size_t n) const {
    if (n != config_.clip_dim) {
      throw Error(ErrorCode::ShapeMismatch, "clip embedding has dimension " + std::to_string(n) +
                                                ", mapper expects " +
                                                std::to_string(config_.clip_dim));
    }
  }

  void check_batch(const Tensor& styles, const Tensor& conditions) const {
    if (styles.cols() != config_.style_dim() || conditions.cols() != config_.condition_dim() ||
        styles.rows() != conditions.rows()) {
      throw Error(ErrorCode::ShapeMismatch,
                  "mapper input shapes " + styles.shape_string() + " and " +
                      conditions.shape_string() + " do not match style dim " +
                      std::to_string(config_.style_dim()) + " / condition dim " +
                      std::to_string(config_.condition_dim()));
    }
  }

  MapperConfig config_;
};

}  // namespace deltaedit

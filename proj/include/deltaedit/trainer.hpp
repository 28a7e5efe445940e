#pragma once

#include <json.hpp>

#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <vector>

#include "deltaedit/adam.hpp"
#include "deltaedit/bundle.hpp"
#include "deltaedit/checkpoint.hpp"
#include "deltaedit/mapper.hpp"

namespace deltaedit {

struct MapperTrainConfig {
  std::size_t steps = 5000;
  std::size_t batch_size = 64;
  std::size_t hidden = 128;
  std::size_t depth = 4;
  double leaky_slope = 0.2;
  ConditionMode mode = ConditionMode::Delta;
  // 1e-3 at desk scale; the original large-scale runs used a constant 0.5.
  ad::AdamOptions adam{};
  double heldout_fraction = 0.1;
  std::size_t heldout_pairs = 512;
  std::size_t eval_interval = 250;
};

struct MapperLogEntry {
  std::size_t step = 0;
  LossBreakdown train;
  LossBreakdown heldout;
  double heldout_cosine = 0.0;
};

inline nlohmann::json to_json(const MapperLogEntry& e) {
  return {{"step", e.step},
          {"rec", e.train.rec},
          {"sim", e.train.sim},
          {"total", e.train.total},
          {"heldout_cosine", e.heldout_cosine},
          {"heldout_total", e.heldout.total}};
}

struct MapperTrainResult {
  MapperConfig mapper;
  ad::ParameterSet params;
  std::vector<MapperLogEntry> log;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> heldout_indices;
};

/// A fixed set of supervised samples: style inputs, condition inputs and
/// target directions, one row per pair.
struct PairBatch {
  Tensor styles;
  Tensor conditions;
  Tensor targets;

  std::size_t size() const { return styles.rows(); }
};

/// Builds image-conditioned samples (training view): condition from
/// (clip_a -> clip_b), target s_b - s_a.
inline PairBatch image_pair_batch(const Bundle& bundle, ConditionMode mode,
                                  const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  const std::size_t n = pairs.size();
  PairBatch b{Tensor({n, bundle.style_dim}), Tensor({n, 2 * bundle.clip_dim}),
              Tensor({n, bundle.style_dim})};
  for (std::size_t r = 0; r < n; ++r) {
    const auto& first = bundle.records[pairs[r].first];
    const auto& second = bundle.records[pairs[r].second];
    std::vector<double> cond;
    if (mode == ConditionMode::Delta) {
      cond = condition_input(make_delta(first.clip, second.clip));
    } else {
      cond = condition_input(ConditionMode::Baseline, first.clip, second.clip);
    }
    std::copy(first.style.begin(), first.style.end(), b.styles.row(r).begin());
    std::copy(cond.begin(), cond.end(), b.conditions.row(r).begin());
    auto t = b.targets.row(r);
    for (std::size_t k = 0; k < bundle.style_dim; ++k) t[k] = second.style[k] - first.style[k];
  }
  return b;
}

/// Builds text-conditioned samples (inference view): the anchor is still the
/// source image embedding, but the direction comes from the texts paired
/// with the records (delta mode: text delta; baseline: target text).
inline PairBatch text_pair_batch(const Bundle& bundle, const Tensor& texts, ConditionMode mode,
                                 const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  if (texts.rows() != bundle.size() || texts.cols() != bundle.clip_dim) {
    throw Error(ErrorCode::ShapeMismatch, "text table " + texts.shape_string() +
                                              " does not match the bundle");
  }
  const std::size_t n = pairs.size();
  PairBatch b{Tensor({n, bundle.style_dim}), Tensor({n, 2 * bundle.clip_dim}),
              Tensor({n, bundle.style_dim})};
  for (std::size_t r = 0; r < n; ++r) {
    const auto [ia, ib] = pairs[r];
    const auto& first = bundle.records[ia];
    const auto& second = bundle.records[ib];
    std::vector<double> cond;
    if (mode == ConditionMode::Delta) {
      DeltaCondition c;
      c.anchor = normalized(first.clip);
      c.delta = make_delta(texts.row(ia), texts.row(ib)).delta;
      cond = condition_input(c);
    } else {
      cond = condition_input(ConditionMode::Baseline, first.clip, texts.row(ib));
    }
    std::copy(first.style.begin(), first.style.end(), b.styles.row(r).begin());
    std::copy(cond.begin(), cond.end(), b.conditions.row(r).begin());
    auto t = b.targets.row(r);
    for (std::size_t k = 0; k < bundle.style_dim; ++k) t[k] = second.style[k] - first.style[k];
  }
  return b;
}

inline std::vector<std::pair<std::size_t, std::size_t>> sample_pairs_within(
    const std::vector<std::size_t>& indices, std::size_t count, std::uint64_t seed) {
  PairSampler sampler(indices.size(), seed);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const auto [a, b] = sampler.next();
    out.emplace_back(indices[a], indices[b]);
  }
  return out;
}

struct PairEvaluation {
  LossBreakdown loss;
  double mean_cosine = 0.0;
};

inline PairEvaluation evaluate_pairs(const DeltaMapper& mapper, const ad::ParameterSet& params,
                                     const PairBatch& batch) {
  PairEvaluation e;
  const Tensor pred = mapper.forward_batch(params, batch.styles, batch.conditions);
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const auto l = loss_breakdown(pred.row(r), batch.targets.row(r));
    e.loss.rec += l.rec;
    e.loss.sim += l.sim;
    e.mean_cosine += cosine(pred.row(r), batch.targets.row(r));
  }
  const double n = static_cast<double>(batch.size());
  e.loss.rec /= n;
  e.loss.sim /= n;
  e.loss.total = e.loss.rec + e.loss.sim;
  e.mean_cosine /= n;
  return e;
}

/// Seeded split of record indices into (train, held-out).
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_records(
    std::size_t count, double heldout_fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = count; i > 1; --i) {
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.index(i))]);
  }
  auto held = static_cast<std::size_t>(std::floor(heldout_fraction * static_cast<double>(count)));
  if (heldout_fraction > 0.0 && held < 2) held = std::min<std::size_t>(2, count);
  std::vector<std::size_t> heldout(idx.end() - static_cast<std::ptrdiff_t>(held), idx.end());
  idx.resize(count - held);
  return {idx, heldout};
}

using MapperLogSink = std::function<void(const MapperLogEntry&)>;

/// Text-free training: sample ordered record pairs, condition on the image
/// delta, supervise with the style delta, minimize the mean per-sample loss.
inline MapperTrainResult train_mapper(const Bundle& bundle, const MapperTrainConfig& cfg,
                                      std::uint64_t seed, const MapperLogSink& sink = {}) {
  bundle.validate();
  MapperTrainResult result;
  result.mapper.clip_dim = bundle.clip_dim;
  result.mapper.partition = bundle.partition;
  result.mapper.hidden = cfg.hidden;
  result.mapper.depth = cfg.depth;
  result.mapper.leaky_slope = cfg.leaky_slope;
  result.mapper.mode = cfg.mode;
  const DeltaMapper mapper(result.mapper);

  // Independent streams for init, split, pair sampling and evaluation.
  Rng seeder(seed);
  const std::uint64_t init_seed = seeder.next_u64();
  const std::uint64_t split_seed = seeder.next_u64();
  const std::uint64_t pair_seed = seeder.next_u64();
  const std::uint64_t eval_seed = seeder.next_u64();

  std::tie(result.train_indices, result.heldout_indices) =
      split_records(bundle.size(), cfg.heldout_fraction, split_seed);
  if (result.train_indices.size() < 2) {
    throw Error(ErrorCode::InvalidArgument, "training needs at least 2 training records");
  }
  std::optional<PairBatch> heldout;
  if (result.heldout_indices.size() >= 2 && cfg.heldout_pairs > 0) {
    heldout = image_pair_batch(
        bundle, cfg.mode, sample_pairs_within(result.heldout_indices, cfg.heldout_pairs, eval_seed));
  }

  result.params = mapper.init_params(init_seed);
  ad::AdamState adam(result.params, cfg.adam);
  PairSampler sampler(result.train_indices.size(), pair_seed);

  std::vector<std::pair<std::size_t, std::size_t>> pairs(cfg.batch_size);
  for (std::size_t step = 0; step <= cfg.steps; ++step) {
    for (auto& p : pairs) {
      const auto [a, b] = sampler.next();
      p = {result.train_indices[a], result.train_indices[b]};
    }
    const PairBatch batch = image_pair_batch(bundle, cfg.mode, pairs);
    const bool last = step == cfg.steps;
    const bool log_now = step == 0 || last || (cfg.eval_interval > 0 && step % cfg.eval_interval == 0);

    if (last) {
      // Final entry reports the trained parameters without updating them.
      MapperLogEntry e;
      e.step = step;
      e.train = mapper.batch_loss(result.params, batch.styles, batch.conditions, batch.targets);
      if (heldout) {
        const auto ev = evaluate_pairs(mapper, result.params, *heldout);
        e.heldout = ev.loss;
        e.heldout_cosine = ev.mean_cosine;
      }
      result.log.push_back(e);
      if (sink) sink(e);
      break;
    }

    auto [loss, grads] =
        mapper.loss_and_gradients(result.params, batch.styles, batch.conditions, batch.targets);
    if (!std::isfinite(loss.total)) {
      throw Error(ErrorCode::Divergence,
                  "mapper training diverged at step " + std::to_string(step));
    }
    if (log_now) {
      MapperLogEntry e;
      e.step = step;
      e.train = loss;
      if (heldout) {
        const auto ev = evaluate_pairs(mapper, result.params, *heldout);
        e.heldout = ev.loss;
        e.heldout_cosine = ev.mean_cosine;
      }
      result.log.push_back(e);
      if (sink) sink(e);
    }
    ad::adam_step(result.params, grads, adam);
  }
  return result;
}

inline nlohmann::json mapper_meta(const MapperConfig& c) {
  return {{"clip_dim", c.clip_dim},
          {"style_dim", c.style_dim()},
          {"coarse_end", c.partition.coarse_end},
          {"medium_end", c.partition.medium_end},
          {"hidden", c.hidden},
          {"depth", c.depth},
          {"leaky_slope", c.leaky_slope},
          {"mode", mode_name(c.mode)}};
}

inline Checkpoint mapper_checkpoint(const MapperConfig& config, const ad::ParameterSet& params) {
  return Checkpoint{"mapper", mapper_meta(config), params};
}

inline MapperConfig mapper_config_from(const Checkpoint& ckpt) {
  if (ckpt.kind != "mapper") {
    throw Error(ErrorCode::Format, "checkpoint kind '" + ckpt.kind + "' is not 'mapper'");
  }
  MapperConfig c;
  try {
    const auto& m = ckpt.meta;
    c.clip_dim = m.at("clip_dim").get<std::size_t>();
    c.partition = {m.at("coarse_end").get<std::size_t>(), m.at("medium_end").get<std::size_t>(),
                   m.at("style_dim").get<std::size_t>()};
    c.hidden = m.at("hidden").get<std::size_t>();
    c.depth = m.at("depth").get<std::size_t>();
    c.leaky_slope = m.at("leaky_slope").get<double>();
    c.mode = parse_mode(m.at("mode").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, std::string("mapper checkpoint meta: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace deltaedit

#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>

#include "deltaedit/diffusion.hpp"
#include "deltaedit/disentangle.hpp"
#include "deltaedit/style_predictor.hpp"
#include "deltaedit/synthetic.hpp"
#include "deltaedit/trainer.hpp"

namespace deltaedit {

/// Every recognized key with its default. docs/config_reference.json must
/// match this document exactly (checked by the test suite).
inline nlohmann::json default_config() {
  return nlohmann::json::parse(R"({
  "seed": 0,
  "paths": {
    "bundle": "",
    "texts": "",
    "checkpoint": "",
    "relevance": "",
    "output": "",
    "log": ""
  },
  "mapper": {
    "steps": 5000,
    "batch_size": 64,
    "hidden": 128,
    "depth": 4,
    "leaky_slope": 0.2,
    "mode": "delta",
    "learning_rate": 0.001,
    "beta1": 0.9,
    "beta2": 0.999,
    "epsilon": 1e-08,
    "weight_decay": 0.0,
    "heldout_fraction": 0.1,
    "heldout_pairs": 512,
    "eval_interval": 250,
    "debug_strength": 1.0
  },
  "diffusion": {
    "steps": 100,
    "beta_start": 0.0001,
    "beta_end": 0.02,
    "eta": 0.0
  },
  "style_predictor": {
    "hidden": 64,
    "temb_dim": 64,
    "groups": 4,
    "steps": 20000,
    "batch_size": 64,
    "loss": "l1",
    "learning_rate": 0.001,
    "weight_decay": 0.01,
    "log_interval": 500
  },
  "relevance": {
    "tau": 0.03,
    "step": 0.5,
    "base_codes": 16
  },
  "synthetic": {
    "world": "linear",
    "records": 5000,
    "clip_dim": 64,
    "style_dim": 96,
    "coarse_end": 32,
    "medium_end": 64,
    "modality_offset": 1.5,
    "noise": 0.05,
    "style_scale": 1.0
  }
})");
}

namespace detail {

inline bool same_kind(const nlohmann::json& def, const nlohmann::json& v) {
  if (def.is_number_float()) return v.is_number();
  if (def.is_number_unsigned() || def.is_number_integer()) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  }
  return def.type() == v.type();
}

inline void merge_checked(nlohmann::json& into, const nlohmann::json& user, const std::string& where) {
  if (!user.is_object()) {
    throw Error(ErrorCode::Config, "config " + (where.empty() ? "root" : "'" + where + "'") +
                                       " must be an object");
  }
  for (const auto& [key, value] : user.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!into.contains(key)) throw Error(ErrorCode::Config, "unknown config key '" + path + "'");
    auto& slot = into[key];
    if (slot.is_object()) {
      merge_checked(slot, value, path);
    } else if (!same_kind(slot, value)) {
      throw Error(ErrorCode::Config, "config key '" + path + "' expects " +
                                         std::string(slot.is_number_float() ? "a number"
                                                     : slot.is_number() ? "a non-negative integer"
                                                                        : slot.type_name()) +
                                         ", got " + value.dump());
    } else {
      slot = value;
    }
  }
}

}  // namespace detail

/// Defaults overlaid with `user`; unknown keys and mistyped values throw.
inline nlohmann::json merge_config(const nlohmann::json& user) {
  nlohmann::json cfg = default_config();
  detail::merge_checked(cfg, user, "");
  return cfg;
}

inline nlohmann::json load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open config '" + path.string() + "'");
  nlohmann::json user;
  try {
    user = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::Config, "config '" + path.string() + "': " + e.what());
  }
  return merge_config(user);
}

/// Sets one dotted key (e.g. "mapper.steps") with the same checks as a file.
inline void override_config(nlohmann::json& cfg, const std::string& dotted, const nlohmann::json& value) {
  nlohmann::json patch = value;
  std::string rest = dotted;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) {
    parts.push_back(rest.substr(0, pos));
  }
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = nlohmann::json{{*it, patch}};
  detail::merge_checked(cfg, patch, "");
}

inline MapperTrainConfig mapper_train_config(const nlohmann::json& cfg) {
  const auto& m = cfg.at("mapper");
  MapperTrainConfig c;
  c.steps = m.at("steps");
  c.batch_size = m.at("batch_size");
  c.hidden = m.at("hidden");
  c.depth = m.at("depth");
  c.leaky_slope = m.at("leaky_slope");
  c.mode = parse_mode(m.at("mode"));
  c.adam.learning_rate = m.at("learning_rate");
  c.adam.beta1 = m.at("beta1");
  c.adam.beta2 = m.at("beta2");
  c.adam.epsilon = m.at("epsilon");
  c.adam.weight_decay = m.at("weight_decay");
  c.heldout_fraction = m.at("heldout_fraction");
  c.heldout_pairs = m.at("heldout_pairs");
  c.eval_interval = m.at("eval_interval");
  if (c.batch_size == 0) throw Error(ErrorCode::Config, "mapper.batch_size must be positive");
  if (!(c.heldout_fraction >= 0.0 && c.heldout_fraction < 1.0)) {
    throw Error(ErrorCode::Config, "mapper.heldout_fraction must lie in [0, 1)");
  }
  return c;
}

inline DiffusionSchedule schedule_config(const nlohmann::json& cfg) {
  const auto& d = cfg.at("diffusion");
  auto s = DiffusionSchedule::linear(d.at("steps").get<std::size_t>(), d.at("beta_start"),
                                     d.at("beta_end"));
  const double eta = d.at("eta");
  return eta == 0.0 ? s : s.with_ddpm_sigma(eta);
}

inline StylePredictorConfig style_predictor_config(const nlohmann::json& cfg,
                                                   std::size_t data_dim,
                                                   const LevelPartition& partition) {
  const auto& p = cfg.at("style_predictor");
  StylePredictorConfig c;
  c.data_dim = data_dim;
  c.partition = partition;
  c.hidden = p.at("hidden");
  c.temb_dim = p.at("temb_dim");
  c.groups = p.at("groups");
  c.validate();
  return c;
}

inline StyleTrainConfig style_train_config(const nlohmann::json& cfg) {
  const auto& p = cfg.at("style_predictor");
  StyleTrainConfig c;
  c.steps = p.at("steps");
  c.batch_size = p.at("batch_size");
  c.loss = parse_loss_norm(p.at("loss"));
  c.adam.learning_rate = p.at("learning_rate");
  c.adam.weight_decay = p.at("weight_decay");
  c.log_interval = p.at("log_interval");
  return c;
}

inline RelevanceOptions relevance_options(const nlohmann::json& cfg) {
  RelevanceOptions o;
  o.step = cfg.at("relevance").at("step");
  return o;
}

inline SyntheticConfig synthetic_config(const nlohmann::json& cfg) {
  const auto& s = cfg.at("synthetic");
  SyntheticConfig c;
  c.kind = parse_world(s.at("world"));
  c.records = s.at("records");
  c.clip_dim = s.at("clip_dim");
  c.partition = {s.at("coarse_end"), s.at("medium_end"), s.at("style_dim")};
  c.modality_offset = s.at("modality_offset");
  c.noise = s.at("noise");
  c.style_scale = s.at("style_scale");
  return c;
}

}  // namespace deltaedit

// deltaedit: batch command-line front end. Every subcommand prints one JSON
// document on stdout; failures print {"error": {...}} on stderr and exit 1.

#include <CLI11.hpp>
#include <json.hpp>

#include <deque>
#include <fstream>
#include <iostream>
#include <sstream>

#include "deltaedit/deltaedit.hpp"

namespace de = deltaedit;
using nlohmann::json;

namespace {

constexpr const char* kPromptConvention = R"(
Text directions
  The CLI never embeds text. Pass a text-embedding matrix (one float32 row
  per prompt, "DLMX" format) and pick the source and target rows. The
  direction is built from a neutral source prompt and a target prompt that
  repeats it with every wanted attribute, e.g. source "face" and target
  "face with smile"; for several attributes put them all in the target
  ("face with smile and glasses").
)";

/// Flags that shadow config keys. Values are kept as strings and applied
/// after the file so that flags win.
class Overrides {
 public:
  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto& slot = values_.emplace_back();
    CLI::Option* opt = app->add_option(flag, slot, help + " [" + key + "]");
    items_.push_back({opt, key, &slot});
  }

  void apply(json& cfg) const {
    for (const auto& item : items_) {
      if (item.option->count() == 0) continue;
      override_value(cfg, item.key, *item.value);
    }
  }

  static void override_value(json& cfg, const std::string& key, const std::string& raw) {
    const json* slot = &cfg;
    std::stringstream ss(key);
    for (std::string part; std::getline(ss, part, '.');) slot = &slot->at(part);
    json value;
    if (slot->is_string()) {
      value = raw;
    } else {
      try {
        value = json::parse(raw);
      } catch (const json::parse_error&) {
        throw de::Error(de::ErrorCode::Config, "value '" + raw + "' for " + key + " is not a number");
      }
    }
    de::override_config(cfg, key, value);
  }

 private:
  struct Item {
    CLI::Option* option;
    std::string key;
    std::string* value;
  };
  std::deque<std::string> values_;
  std::vector<Item> items_;
};

struct Context {
  std::string config_path;
  Overrides overrides;

  json config() const {
    json cfg = config_path.empty() ? de::default_config() : de::load_config(config_path);
    overrides.apply(cfg);
    return cfg;
  }
};

std::uint64_t seed_of(const json& cfg) { return cfg.at("seed").get<std::uint64_t>(); }

std::string require_path(const json& cfg, const char* key, const char* flag) {
  const std::string p = cfg.at("paths").at(key).get<std::string>();
  if (p.empty()) {
    throw de::Error(de::ErrorCode::Config,
                    std::string("missing path: pass ") + flag + " or set paths." + key);
  }
  return p;
}

json report_json(const de::AlignmentReport& r) {
  return {{"mean_cosine", r.mean_cosine},
          {"median_cosine", r.median_cosine},
          {"std_cosine", r.std_cosine},
          {"modality_gap", r.modality_gap},
          {"count", r.count}};
}

std::size_t record_index(const de::Bundle& b, const std::string& key) {
  for (std::size_t k = 0; k < b.size(); ++k) {
    if (b.records[k].id == key) return k;
  }
  std::size_t pos = 0;
  unsigned long long idx = 0;
  try {
    idx = std::stoull(key, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != key.size() || idx >= b.size()) {
    throw de::Error(de::ErrorCode::InvalidArgument, "no record '" + key + "' in bundle of " +
                                                        std::to_string(b.size()));
  }
  return static_cast<std::size_t>(idx);
}

std::vector<double> read_vector(const std::string& path, std::size_t expected = 0) {
  auto v = de::read_raw_f32(path);
  if (expected != 0 && v.size() != expected) {
    throw de::Error(de::ErrorCode::ShapeMismatch, "'" + path + "' holds " + std::to_string(v.size()) +
                                                      " values, expected " + std::to_string(expected));
  }
  return v;
}

/// Rows of a raw float32 file as a [rows, dim] tensor.
de::Tensor read_rows(const std::string& path, std::size_t dim) {
  auto v = de::read_raw_f32(path);
  if (dim == 0 || v.empty() || v.size() % dim != 0) {
    throw de::Error(de::ErrorCode::ShapeMismatch, "'" + path + "' holds " + std::to_string(v.size()) +
                                                      " values, not a multiple of dim " +
                                                      std::to_string(dim));
  }
  return de::Tensor::matrix(v.size() / dim, dim, std::move(v));
}

std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(std::stoull(item));
  }
  return out;
}

// ---------------------------------------------------------------- subcommands

void add_make_synthetic(CLI::App& app, Context& ctx, std::function<json()>& run) {
  auto* cmd = app.add_subcommand("make-synthetic", "Generate a synthetic embedding world");
  auto& ov = ctx.overrides;
  ov.add(cmd, "--world", "synthetic.world", "linear | semantic (alias: offset)");
  ov.add(cmd, "--records", "synthetic.records", "Record count");
  ov.add(cmd, "--clip-dim", "synthetic.clip_dim", "Image/text embedding dimension");
  ov.add(cmd, "--style-dim", "synthetic.style_dim", "Style code dimension");
  ov.add(cmd, "--coarse-end", "synthetic.coarse_end", "End of the coarse level");
  ov.add(cmd, "--medium-end", "synthetic.medium_end", "End of the medium level");
  ov.add(cmd, "--modality-offset", "synthetic.modality_offset", "Norm of each modality offset");
  ov.add(cmd, "--noise", "synthetic.noise", "Embedding noise level");
  ov.add(cmd, "--out", "paths.bundle", "Output bundle path");
  auto texts = std::make_shared<std::string>();
  auto probe = std::make_shared<std::string>();
  cmd->add_option("--texts-out", *texts, "Also write the paired caption embeddings (DLMX)");
  cmd->add_option("--probe-out", *probe, "Also write a linear probe table (DLMX, D_s x D_i)");
  cmd->callback([&ctx, &run, texts, probe] {
    run = [&ctx, texts, probe] {
      const json cfg = ctx.config();
      const auto sc = de::synthetic_config(cfg);
      const auto out = require_path(cfg, "bundle", "--out");
      const auto world = de::make_synthetic_world(sc, seed_of(cfg));
      de::write_bundle(world.bundle, out);
      json r = {{"bundle", out},
                {"manifest", de::manifest_path(out).string()},
                {"world", de::world_name(sc.kind)},
                {"records", world.bundle.size()},
                {"clip_dim", world.bundle.clip_dim},
                {"style_dim", world.bundle.style_dim},
                {"seed", seed_of(cfg)}};
      if (!texts->empty()) {
        de::write_matrix(world.texts, *texts);
        r["texts"] = *texts;
      }
      if (!probe->empty()) {
        de::write_matrix(world.style_map, *probe);
        r["probe"] = *probe;
      }
      return r;
    };
  });
}

void add_analyze(CLI::App& app, Context& ctx, std::function<json()>& run) {
  auto* cmd = app.add_subcommand("analyze", "Raw vs delta-space alignment of paired image/text embeddings");
  ctx.overrides.add(cmd, "--bundle", "paths.bundle", "Embedding bundle");
  ctx.overrides.add(cmd, "--texts", "paths.texts", "Caption embeddings, row k pairs record k (DLMX)");
  auto pairs = std::make_shared<std::size_t>(2000);
  auto csv = std::make_shared<std::string>();
  cmd->add_option("--pairs", *pairs, "Sampled record pairs for the delta statistics")->capture_default_str();
  cmd->add_option("--csv", *csv, "Export the sampled image deltas as CSV (label a->b)");
  cmd->callback([&ctx, &run, pairs, csv] {
    run = [&ctx, pairs, csv] {
      const json cfg = ctx.config();
      const auto bundle = de::read_bundle(require_path(cfg, "bundle", "--bundle"));
      const auto texts = de::read_matrix(require_path(cfg, "texts", "--texts"));
      const auto a = de::analyze_alignment(bundle, texts.values, *pairs, seed_of(cfg));
      json r = {{"raw", report_json(a.raw)}, {"delta", report_json(a.delta)}, {"seed", seed_of(cfg)}};
      if (!csv->empty()) {
        std::vector<std::vector<double>> rows;
        std::vector<std::string> labels;
        for (const auto& [i, j] : de::sample_pairs(bundle, *pairs, seed_of(cfg))) {
          rows.push_back(de::make_delta(bundle.records[i].clip, bundle.records[j].clip).delta);
          labels.push_back(std::to_string(i) + "->" + std::to_string(j));
        }
        de::export_csv(rows, labels, *csv);
        r["csv"] = *csv;
      }
      return r;
    };
  });
}

void add_train_mapper(CLI::App& app, Context& ctx, std::function<json()>& run) {
  auto* cmd = app.add_subcommand("train-mapper", "Train the delta mapper on an embedding bundle");
  auto& ov = ctx.overrides;
  ov.add(cmd, "--bundle", "paths.bundle", "Training bundle");
  ov.add(cmd, "--out", "paths.checkpoint", "Output checkpoint");
  ov.add(cmd, "--log", "paths.log", "Training log (JSON lines)");
  ov.add(cmd, "--steps", "mapper.steps", "Optimizer steps");
  ov.add(cmd, "--batch-size", "mapper.batch_size", "Pairs per step");
  ov.add(cmd, "--mode", "mapper.mode", "delta | baseline");
  ov.add(cmd, "--lr", "mapper.learning_rate", "Adam learning rate");
  ov.add(cmd, "--hidden", "mapper.hidden", "Hidden width");
  ov.add(cmd, "--depth", "mapper.depth", "Layers per sub-module");
  ov.add(cmd, "--eval-interval", "mapper.eval_interval", "Steps between log entries");
  ov.add(cmd, "--heldout-fraction", "mapper.heldout_fraction", "Records reserved for evaluation");
  cmd->callback([&ctx, &run] {
    run = [&ctx] {
      const json cfg = ctx.config();
      const auto bundle = de::read_bundle(require_path(cfg, "bundle", "--bundle"));
      const auto out = require_path(cfg, "checkpoint", "--out");
      const auto tc = de::mapper_train_config(cfg);
      std::ofstream log;
      const std::string log_path = cfg.at("paths").at("log");
      if (!log_path.empty()) {
        log.open(log_path, std::ios::trunc);
        if (!log) throw de::Error(de::ErrorCode::Io, "cannot open log '" + log_path + "'");
      }
      auto sink = [&log](const de::MapperLogEntry& e) {
        if (log.is_open()) log << de::to_json(e).dump() << '\n' << std::flush;
      };
      const auto res = de::train_mapper(bundle, tc, seed_of(cfg), sink);
      de::write_checkpoint(de::mapper_checkpoint(res.mapper, res.params), out);
      return json{{"checkpoint", out},
                  {"mode", de::mode_name(tc.mode)},
                  {"steps", tc.steps},
                  {"train_records", res.train_indices.size()},
                  {"heldout_records", res.heldout_indices.size()},
                  {"final", de::to_json(res.log.back())}};
    };
  });
}

void add_edit(CLI::App& app, Context& ctx, std::function<json()>& run) {
  auto* cmd = app.add_subcommand("edit", "Text-driven edit of one record's style code");
  cmd->footer(kPromptConvention);
  auto& ov = ctx.overrides;
  ov.add(cmd, "--checkpoint", "paths.checkpoint", "Mapper checkpoint");
  ov.add(cmd, "--bundle", "paths.bundle", "Bundle holding the record to edit");
  ov.add(cmd, "--texts", "paths.texts", "Text-embedding matrix (DLMX)");
  ov.add(cmd, "--relevance", "paths.relevance", "Relevance checkpoint; enables tau masking");
  ov.add(cmd, "--tau", "relevance.tau", "Relevance threshold");
  ov.add(cmd, "--debug-strength", "mapper.debug_strength", "Debug-only multiplier on the direction");
  ov.add(cmd, "--out", "paths.output", "Write the edited code as raw float32");
  struct Args {
    std::string record = "0";
    std::size_t source_row = 0;
    std::size_t target_row = 1;
    std::string mask = "none";
  };
  auto a = std::make_shared<Args>();
  cmd->add_option("--record", a->record, "Record index or id")->capture_default_str();
  cmd->add_option("--source-row", a->source_row, "Row of the source prompt")->capture_default_str();
  cmd->add_option("--target-row", a->target_row, "Row of the target prompt")->capture_default_str();
  cmd->add_option("--mask", a->mask, "Fixed mask instead of relevance: none | ones | zeros")
      ->check(CLI::IsMember({"none", "ones", "zeros"}))
      ->capture_default_str();
  cmd->callback([&ctx, &run, a] {
    run = [&ctx, a] {
      const json cfg = ctx.config();
      const auto ckpt = de::read_checkpoint(require_path(cfg, "checkpoint", "--checkpoint"));
      const de::DeltaMapper mapper(de::mapper_config_from(ckpt));
      const auto bundle = de::read_bundle(require_path(cfg, "bundle", "--bundle"));
      const auto texts = de::read_matrix(require_path(cfg, "texts", "--texts"));
      const std::size_t k = record_index(bundle, a->record);
      const auto src = texts.row(a->source_row);
      const auto tgt = texts.row(a->target_row);

      de::EditOptions opts;
      opts.debug_strength = cfg.at("mapper").at("debug_strength");
      const std::string rel_path = cfg.at("paths").at("relevance");
      if (a->mask != "none") {
        if (!rel_path.empty()) {
          throw de::Error(de::ErrorCode::Config, "--mask and --relevance are mutually exclusive");
        }
        opts.mask = de::uniform_mask(bundle.style_dim, a->mask == "ones");
      } else if (!rel_path.empty()) {
        const auto rel = de::relevance_from(de::read_checkpoint(rel_path));
        opts.mask = de::build_mask(rel, de::make_delta(src, tgt).delta, cfg.at("relevance").at("tau"));
      }
      const auto& rec = bundle.records[k];
      const auto r = de::edit(mapper, ckpt.tensors, rec.style, rec.clip, src, tgt, opts);
      json out = {{"record", rec.id},
                  {"mode", de::mode_name(mapper.config().mode)},
                  {"edited", r.edited},
                  {"delta", r.delta},
                  {"delta_norm", de::l2_norm(r.delta)}};
      if (opts.mask) {
        out["mask"] = {{"kept", opts.mask->kept()}, {"channels", opts.mask->keep.size()}};
      }
      const std::string path = cfg.at("paths").at("output");
      if (!path.empty()) {
        de::write_raw_f32(r.edited, path);
        out["output"] = path;
      }
      return out;
    };
  });
}

void add_relevance(CLI::App& app, Context& ctx, std::function<json()>& run) {
  auto* cmd = app.add_subcommand("relevance", "Estimate the relevance matrix from a probe table");
  cmd->footer(kPromptConvention);
  auto& ov = ctx.overrides;
  ov.add(cmd, "--bundle", "paths.bundle", "Bundle supplying base codes (zero code if omitted)");
  ov.add(cmd, "--texts", "paths.texts", "Text-embedding matrix; with it a mask is reported");
  ov.add(cmd, "--out", "paths.relevance", "Output relevance checkpoint");
  ov.add(cmd, "--tau", "relevance.tau", "Relevance threshold");
  ov.add(cmd, "--step", "relevance.step", "Central-difference step");
  ov.add(cmd, "--base-codes", "relevance.base_codes", "Base codes averaged over");
  struct Args {
    std::string probe;
    std::size_t source_row = 0;
    std::size_t target_row = 1;
  };
  auto a = std::make_shared<Args>();
  cmd->add_option("--probe", a->probe, "Probe table, D_s x D_i (DLMX)")->required();
  cmd->add_option("--source-row", a->source_row, "Row of the source prompt")->capture_default_str();
  cmd->add_option("--target-row", a->target_row, "Row of the target prompt")->capture_default_str();
  cmd->callback([&ctx, &run, a] {
    run = [&ctx, a] {
      const json cfg = ctx.config();
      const auto table = de::read_matrix(a->probe);
      const std::size_t ds = table.rows();
      std::vector<std::vector<double>> base;
      const std::string bundle_path = cfg.at("paths").at("bundle");
      if (bundle_path.empty()) {
        base.assign(1, std::vector<double>(ds, 0.0));
      } else {
        const auto bundle = de::read_bundle(bundle_path);
        base = de::sample_base_codes(bundle, cfg.at("relevance").at("base_codes"), seed_of(cfg));
      }
      const auto rel = de::estimate_relevance(de::linear_probe(table.values), base,
                                              de::relevance_options(cfg));
      const std::size_t nulls =
          static_cast<std::size_t>(std::count(rel.null.begin(), rel.null.end(), true));
      json r = {{"channels", rel.channels()},
                {"clip_dim", rel.clip_dim()},
                {"base_codes", base.size()},
                {"null_channels", nulls}};
      const std::string out = cfg.at("paths").at("relevance");
      if (!out.empty()) {
        de::write_checkpoint(de::relevance_checkpoint(rel, {{"step", cfg["relevance"]["step"]}}), out);
        r["relevance"] = out;
      }
      const std::string texts_path = cfg.at("paths").at("texts");
      if (!texts_path.empty()) {
        const auto texts = de::read_matrix(texts_path);
        const double tau = cfg.at("relevance").at("tau");
        const auto m = de::build_mask(
            rel, de::make_delta(texts.row(a->source_row), texts.row(a->target_row)).delta, tau);
        r["mask"] = {{"tau", tau}, {"kept", m.kept()}, {"scores", m.scores}};
      }
      return r;
    };
  });
}

/// Predictor named on the command line: the Gaussian oracle or a trained
/// style predictor checkpoint.
struct PredictorArgs {
  std::string checkpoint;
  double oracle_mean = 0.0;
  double oracle_var = 1.0;
  std::string styles;

  void add(CLI::App* cmd) {
    cmd->add_option("--predictor", checkpoint, "Style predictor checkpoint (default: Gaussian oracle)");
    cmd->add_option("--oracle-mean", oracle_mean, "Oracle data mean (every dim)")->capture_default_str();
    cmd->add_option("--oracle-var", oracle_var, "Oracle data variance (every dim)")->capture_default_str();
    cmd->add_option("--styles", styles, "Style codes, one DLMX row per sample (predictor only)");
  }

  struct Loaded {
    std::unique_ptr<de::NoisePredictor> predictor;
    de::Tensor styles;
    std::size_t dim = 0;
  };

  Loaded load(const de::DiffusionSchedule& sched, std::size_t dim) const {
    Loaded l;
    if (checkpoint.empty()) {
      l.dim = dim;
      l.predictor = std::make_unique<de::GaussianOracle>(sched, std::vector<double>(dim, oracle_mean),
                                                         std::vector<double>(dim, oracle_var));
      return l;
    }
    auto p = de::style_predictor_from(de::read_checkpoint(checkpoint));
    l.dim = p.config().data_dim;
    if (styles.empty()) {
      throw de::Error(de::ErrorCode::Config, "--predictor needs --styles");
    }
    l.styles = de::read_matrix(styles).values;
    l.predictor = std::make_unique<de::StylePredictor>(std::move(p));
    return l;
  }
};

void add_diffuse(CLI::App& app, Context& ctx, std::function<json()>& run) {
  auto* cmd = app.add_subcommand("diffuse", "Diffusion experiments: forward consistency, sampling, predictor training");
  cmd->require_subcommand(1);
  cmd->fallthrough();
  ctx.overrides.add(cmd, "--steps", "diffusion.steps", "Schedule length T");
  ctx.overrides.add(cmd, "--beta-start", "diffusion.beta_start", "First beta");
  ctx.overrides.add(cmd, "--beta-end", "diffusion.beta_end", "Last beta");
  ctx.overrides.add(cmd, "--eta", "diffusion.eta", "Reverse noise: 0 = DDIM, 1 = DDPM");

  // consistency
  {
    auto* sub = cmd->add_subcommand("consistency", "Markov chain marginals vs the closed form");
    struct Args {
      std::vector<double> x0{0.5, -1.0, 1.5, -2.0};
      std::size_t chains = 100000;
      std::string at = "1,10,50";
    };
    auto a = std::make_shared<Args>();
    sub->add_option("--x0", a->x0, "Starting point (its length is the dimension)")
        ->delimiter(',')
        ->capture_default_str();
    sub->add_option("--chains", a->chains, "Independent chains")->capture_default_str();
    sub->add_option("--at", a->at, "Timesteps to test, comma separated")->capture_default_str();
    sub->callback([&ctx, &run, a] {
      run = [&ctx, a] {
        const json cfg = ctx.config();
        const auto sched = de::schedule_config(cfg);
        const auto& x0 = a->x0;
        const auto checks =
            de::experiments::markov_consistency(sched, x0, a->chains, parse_list(a->at), seed_of(cfg));
        json r = {{"x0", x0}, {"chains", a->chains}, {"checks", json::array()}};
        bool ok = true;
        for (const auto& c : checks) {
          ok = ok && c.within(3.0);
          r["checks"].push_back({{"t", c.t},
                                 {"mean", c.mean},
                                 {"expected_mean", c.expected_mean},
                                 {"var", c.var},
                                 {"expected_var", c.expected_var},
                                 {"max_z_mean", c.max_z_mean},
                                 {"max_z_var", c.max_z_var}});
        }
        r["within_3sigma"] = ok;
        return r;
      };
    });
  }
  // sample
  {
    auto* sub = cmd->add_subcommand("sample", "Reverse sampling from x_T ~ N(0, I)");
    struct Args {
      std::size_t dim = 8;
      std::size_t samples = 1000;
      std::string trajectory;
      PredictorArgs pred;
    };
    auto a = std::make_shared<Args>();
    sub->add_option("--dim", a->dim, "Data dimension (oracle)")->capture_default_str();
    sub->add_option("--samples", a->samples, "Sample count (oracle)")->capture_default_str();
    sub->add_option("--trajectory", a->trajectory, "CSV of the first sample's trajectory");
    a->pred.add(sub);
    sub->callback([&ctx, &run, a] {
      run = [&ctx, a] {
        const json cfg = ctx.config();
        const auto sched = de::schedule_config(cfg);
        const auto p = a->pred.load(sched, a->dim);
        const std::size_t n = p.styles.size() ? p.styles.rows() : a->samples;
        de::Rng rng(seed_of(cfg));
        const de::Tensor xT = de::experiments::normal_tensor(rng, {n, p.dim});
        auto draw = [&rng](const de::Tensor::Shape& s) { return de::experiments::normal_tensor(rng, s); };
        de::Tensor x0;
        if (!a->trajectory.empty() && sched.deterministic()) {
          de::Trajectory traj;
          x0 = de::ddim_decode(sched, *p.predictor, xT, p.styles, &traj);
          de::export_trajectory_csv(traj, a->trajectory);
        } else {
          x0 = de::sample_reverse(sched, *p.predictor, xT, p.styles, draw);
        }
        std::vector<double> mean(p.dim, 0.0), var(p.dim, 0.0);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t j = 0; j < p.dim; ++j) mean[j] += x0.at(r, j) / static_cast<double>(n);
        }
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t j = 0; j < p.dim; ++j) {
            var[j] += (x0.at(r, j) - mean[j]) * (x0.at(r, j) - mean[j]) / static_cast<double>(n);
          }
        }
        json r = {{"samples", n}, {"mean", mean}, {"var", var}, {"deterministic", sched.deterministic()}};
        if (!a->trajectory.empty()) r["trajectory"] = a->trajectory;
        return r;
      };
    });
  }
  // train
  {
    auto* sub = cmd->add_subcommand("train", "Train the style-conditioned noise predictor");
    auto& ov = ctx.overrides;
    ov.add(sub, "--train-steps", "style_predictor.steps", "Optimizer steps");
    ov.add(sub, "--lr", "style_predictor.learning_rate", "AdamW learning rate");
    ov.add(sub, "--weight-decay", "style_predictor.weight_decay", "AdamW decoupled weight decay");
    ov.add(sub, "--loss", "style_predictor.loss", "l1 | l2");
    ov.add(sub, "--hidden", "style_predictor.hidden", "Trunk width");
    ov.add(sub, "--out", "paths.checkpoint", "Output checkpoint");
    struct Args {
      std::string data;
      std::string styles;
      std::size_t dim = 8;
      std::size_t style_dim = 12;
      std::size_t records = 2048;
      std::size_t eval = 256;
    };
    auto a = std::make_shared<Args>();
    sub->add_option("--data", a->data, "x0 rows (DLMX); default: synthetic x0 = L s + b");
    sub->add_option("--styles", a->styles, "Style rows paired with --data (DLMX)");
    sub->add_option("--dim", a->dim, "Synthetic data dimension")->capture_default_str();
    sub->add_option("--style-dim", a->style_dim, "Synthetic style dimension (split in thirds)")
        ->capture_default_str();
    sub->add_option("--records", a->records, "Synthetic training records")->capture_default_str();
    sub->add_option("--eval", a->eval, "Synthetic held-out records")->capture_default_str();
    sub->callback([&ctx, &run, a] {
      run = [&ctx, a] {
        const json cfg = ctx.config();
        const auto sched = de::schedule_config(cfg);
        const auto tc = de::style_train_config(cfg);
        const std::string out = cfg.at("paths").at("checkpoint");
        json r;
        de::StyleTrainResult res;
        if (a->data.empty()) {
          if (a->style_dim < 3) throw de::Error(de::ErrorCode::InvalidArgument, "--style-dim must be >= 3");
          const std::size_t third = a->style_dim / 3;
          const auto pc = de::style_predictor_config(cfg, a->dim, {third, 2 * third, a->style_dim});
          const auto rec = de::experiments::style_reconstruction(sched, pc, tc, a->records, a->eval,
                                                                 seed_of(cfg), &res);
          r = {{"final_loss", rec.final_loss},
               {"decode_mse", rec.mse},
               {"roundtrip_mse", rec.roundtrip_mse},
               {"data_power", rec.data_power}};
        } else {
          if (a->styles.empty()) throw de::Error(de::ErrorCode::Config, "--data needs --styles");
          const auto x0 = de::read_matrix(a->data).values;
          const auto s = de::read_matrix(a->styles).values;
          const std::size_t third = s.cols() / 3;
          const auto pc = de::style_predictor_config(cfg, x0.cols(), {third, 2 * third, s.cols()});
          res = de::train_style_predictor(sched, x0, s, pc, tc, seed_of(cfg));
          r = {{"final_loss", res.log.back().loss}};
        }
        r["loss"] = de::loss_norm_name(tc.loss);
        r["steps"] = tc.steps;
        if (!out.empty()) {
          de::write_checkpoint(de::style_predictor_checkpoint(res.config, res.params), out);
          r["checkpoint"] = out;
        }
        return r;
      };
    });
  }
}

void add_invert(CLI::App& app, Context& ctx, std::function<json()>& run) {
  auto* cmd = app.add_subcommand("invert", "Deterministic DDIM inversion and round-trip error");
  ctx.overrides.add(cmd, "--steps", "diffusion.steps", "Schedule length T");
  ctx.overrides.add(cmd, "--out", "paths.output", "Write x_T as raw float32");
  struct Args {
    std::string input;
    std::size_t dim = 8;
    std::size_t samples = 256;
    std::string sweep;
    PredictorArgs pred;
  };
  auto a = std::make_shared<Args>();
  cmd->add_option("--input", a->input, "x0 rows as raw float32 (default: sampled from the oracle model)");
  cmd->add_option("--dim", a->dim, "Data dimension")->capture_default_str();
  cmd->add_option("--samples", a->samples, "Samples drawn when --input is absent")->capture_default_str();
  cmd->add_option("--sweep", a->sweep,
                  "Comma-separated T values: oracle round-trip error on a random Gaussian model");
  a->pred.add(cmd);
  cmd->callback([&ctx, &run, a] {
    run = [&ctx, a] {
      const json cfg = ctx.config();
      if (!a->sweep.empty()) {
        json r = {{"dim", a->dim}, {"samples", a->samples}, {"sweep", json::array()}};
        double prev = std::numeric_limits<double>::infinity();
        bool decreasing = true;
        for (std::size_t T : parse_list(a->sweep)) {
          const auto rt = de::experiments::oracle_roundtrip(a->dim, T, a->samples, seed_of(cfg));
          decreasing = decreasing && rt.mse < prev;
          prev = rt.mse;
          r["sweep"].push_back({{"steps", T}, {"mse", rt.mse}, {"bit_identical", rt.bit_identical}});
        }
        r["strictly_decreasing"] = decreasing;
        return r;
      }
      auto cfg_det = cfg;
      cfg_det["diffusion"]["eta"] = 0.0;
      const auto sched = de::schedule_config(cfg_det);
      const auto p = a->pred.load(sched, a->dim);
      de::Tensor x0;
      if (!a->input.empty()) {
        x0 = read_rows(a->input, p.dim);
      } else {
        de::Rng rng(seed_of(cfg));
        de::experiments::GaussianModel model{std::vector<double>(p.dim, a->pred.oracle_mean),
                                             std::vector<double>(p.dim, a->pred.oracle_var)};
        x0 = model.sample(a->samples, rng);
      }
      const de::Tensor xT = de::ddim_invert(sched, *p.predictor, x0, p.styles);
      const de::Tensor back = de::ddim_decode(sched, *p.predictor, xT, p.styles);
      const de::Tensor again = de::ddim_decode(sched, *p.predictor, xT, p.styles);
      json r = {{"steps", sched.steps},
                {"samples", x0.rows()},
                {"roundtrip_mse", de::experiments::mean_squared_error(back, x0)},
                {"bit_identical", back == again}};
      const std::string out = cfg.at("paths").at("output");
      if (!out.empty()) {
        de::write_raw_f32(xT.data(), out);
        r["output"] = out;
      }
      return r;
    };
  });
}

void add_interp(CLI::App& app, Context& ctx, std::function<json()>& run) {
  auto* cmd = app.add_subcommand("interp", "Interpolate style codes (lerp), noise codes (slerp) or edits");
  cmd->footer(R"(
Weight direction
  lerp-s and lerp-edit return the first input at weight 1 (w a + (1 - w) b);
  slerp returns the first input at weight 0. To move an image pair from the
  first to the second image, pair slerp weight w with lerp-s weight 1 - w.)");
  struct Args {
    std::string kind = "lerp-s";
    std::string a, b;
    std::string bundle, record_a, record_b;
    std::vector<double> weights;
    std::size_t grid = 0;
  };
  auto a = std::make_shared<Args>();
  cmd->add_option("--kind", a->kind, "lerp-s | slerp | lerp-edit")
      ->check(CLI::IsMember({"lerp-s", "slerp", "lerp-edit"}))
      ->capture_default_str();
  cmd->add_option("--a", a->a, "First vector (raw float32)");
  cmd->add_option("--b", a->b, "Second vector (raw float32)");
  cmd->add_option("--bundle", a->bundle, "Take style codes from this bundle instead");
  cmd->add_option("--record-a", a->record_a, "First record (index or id)");
  cmd->add_option("--record-b", a->record_b, "Second record (index or id)");
  cmd->add_option("--weight", a->weights, "Interpolation weight(s) in [0, 1]");
  cmd->add_option("--grid", a->grid, "Evaluate at n+1 evenly spaced weights");
  cmd->callback([&ctx, &run, a] {
    run = [&ctx, a] {
      (void)ctx.config();
      std::vector<double> x, y;
      if (!a->bundle.empty()) {
        const auto b = de::read_bundle(a->bundle);
        x = b.records[record_index(b, a->record_a)].style;
        y = b.records[record_index(b, a->record_b)].style;
      } else {
        if (a->a.empty() || a->b.empty()) {
          throw de::Error(de::ErrorCode::Config, "interp needs --a and --b, or --bundle with records");
        }
        x = read_vector(a->a);
        y = read_vector(a->b, x.size());
      }
      std::vector<double> weights = a->weights;
      for (std::size_t k = 0; a->grid > 0 && k <= a->grid; ++k) {
        weights.push_back(static_cast<double>(k) / static_cast<double>(a->grid));
      }
      if (weights.empty()) weights.push_back(0.5);
      json r = {{"kind", a->kind}, {"results", json::array()}};
      for (double w : weights) {
        std::vector<double> v = a->kind == "slerp"    ? de::slerp_xT(x, y, w)
                                : a->kind == "lerp-s" ? de::lerp_s(x, y, w)
                                                      : de::lerp_edit(x, y, w);
        r["results"].push_back({{"weight", w}, {"norm", de::l2_norm(v)}, {"vector", v}});
      }
      return r;
    };
  });
}

void add_splice(CLI::App& app, Context& ctx, std::function<json()>& run) {
  auto* cmd = app.add_subcommand("splice", "Style mixing: take chosen levels from a style record");
  ctx.overrides.add(cmd, "--bundle", "paths.bundle", "Bundle with both records");
  ctx.overrides.add(cmd, "--out", "paths.output", "Write the mixed code as raw float32");
  struct Args {
    std::string content = "0";
    std::string style = "1";
    std::vector<std::string> levels;
  };
  auto a = std::make_shared<Args>();
  cmd->add_option("--content", a->content, "Content record")->capture_default_str();
  cmd->add_option("--style", a->style, "Style record")->capture_default_str();
  cmd->add_option("--levels", a->levels, "Levels taken from the style record: coarse, medium, fine")
      ->delimiter(',');
  cmd->callback([&ctx, &run, a] {
    run = [&ctx, a] {
      const json cfg = ctx.config();
      const auto b = de::read_bundle(require_path(cfg, "bundle", "--bundle"));
      const auto& c = b.records[record_index(b, a->content)];
      const auto& s = b.records[record_index(b, a->style)];
      const auto mixed = de::splice_styles(c.style, s.style, b.partition, de::parse_levels(a->levels));
      json r = {{"content", c.id}, {"style", s.id}, {"levels", a->levels}, {"mixed", mixed}};
      const std::string out = cfg.at("paths").at("output");
      if (!out.empty()) {
        de::write_raw_f32(mixed, out);
        r["output"] = out;
      }
      return r;
    };
  });
}

void add_metrics(CLI::App& app, Context& ctx, std::function<json()>& run) {
  auto* cmd = app.add_subcommand("metrics", "MSE, PSNR and SSIM of two grayscale float32 images");
  struct Args {
    std::string a, b;
    std::size_t height = 0, width = 0;
    double range = 255.0;
  };
  auto a = std::make_shared<Args>();
  cmd->add_option("--a", a->a, "First image (raw float32, row-major)")->required();
  cmd->add_option("--b", a->b, "Second image (raw float32, row-major)")->required();
  cmd->add_option("--height", a->height, "Rows")->required();
  cmd->add_option("--width", a->width, "Columns")->required();
  cmd->add_option("--range", a->range, "Value range R")->capture_default_str();
  cmd->callback([&ctx, &run, a] {
    run = [&ctx, a] {
      (void)ctx.config();
      const std::size_t n = a->height * a->width;
      const de::metrics::Image ia{a->height, a->width, de::read_raw_f32(a->a, n)};
      const de::metrics::Image ib{a->height, a->width, de::read_raw_f32(a->b, n)};
      const de::metrics::ImagePair p{ia, ib, a->range};
      const double m = de::metrics::mse(p);
      const double ps = de::metrics::psnr_from_mse(m, a->range);
      json r = {{"mse", m}, {"psnr", std::isinf(ps) ? json("inf") : json(ps)}};
      if (a->height >= 11 && a->width >= 11) r["ssim"] = de::metrics::ssim(p);
      return r;
    };
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deltaedit: text-free latent editing, delta-space analysis and diffusion toys"};
  app.footer(kPromptConvention);
  app.require_subcommand(1);
  app.fallthrough();
  Context ctx;
  app.add_option("--config", ctx.config_path, "JSON config; flags override its values")
      ->check(CLI::ExistingFile);
  ctx.overrides.add(&app, "--seed", "seed", "Seed for every random stream");

  std::function<json()> run;
  add_make_synthetic(app, ctx, run);
  add_analyze(app, ctx, run);
  add_train_mapper(app, ctx, run);
  add_edit(app, ctx, run);
  add_relevance(app, ctx, run);
  add_diffuse(app, ctx, run);
  add_invert(app, ctx, run);
  add_interp(app, ctx, run);
  add_splice(app, ctx, run);
  add_metrics(app, ctx, run);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    if (!run) throw de::Error(de::ErrorCode::Config, "no subcommand action");
    std::cout << run().dump(2) << std::endl;
  } catch (const de::Error& e) {
    std::cerr << json{{"error", {{"code", de::to_string(e.code())}, {"message", e.what()}}}}.dump()
              << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"code", "internal"}, {"message", e.what()}}}}.dump() << std::endl;
    return 1;
  }
  return 0;
}

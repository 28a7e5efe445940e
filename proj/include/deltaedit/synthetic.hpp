#pragma once

#include <cmath>
#include <string>

#include "deltaedit/bundle.hpp"
#include "deltaedit/rng.hpp"

namespace deltaedit {

/// Desk-scale stand-ins for image/text embedding corpora.
///
/// Every record k has a latent semantic u_k ~ N(0, I/D_i). Its image
/// embedding is u_k + g_img + n and its caption embedding u_k + g_txt + n',
/// where g_img and g_txt are fixed orthogonal per-modality offsets of norm
/// `modality_offset` and the noise has per-coordinate std noise/sqrt(D_i).
///
///  - Linear:   s_k = A * normalize(image_k) + s0, so s_b - s_a = A * delta_i
///              exactly for every pair.
///  - Semantic: s_k = A * u_k + s0; the style code depends only on the shared
///              semantic, not on either modality's offset or noise.
///
/// A has N(0, style_scale^2 / D_i) entries and s0 ~ N(0, 1).
enum class WorldKind { Linear, Semantic };

inline const char* world_name(WorldKind k) { return k == WorldKind::Linear ? "linear" : "semantic"; }

inline WorldKind parse_world(const std::string& s) {
  if (s == "linear") return WorldKind::Linear;
  if (s == "semantic" || s == "offset") return WorldKind::Semantic;
  throw Error(ErrorCode::InvalidArgument, "unknown synthetic world '" + s + "'");
}

struct SyntheticConfig {
  WorldKind kind = WorldKind::Linear;
  std::size_t records = 5000;
  std::size_t clip_dim = 64;
  LevelPartition partition{32, 64, 96};
  double modality_offset = 1.5;
  double noise = 0.05;
  double style_scale = 1.0;
};

struct SyntheticWorld {
  Bundle bundle;
  Tensor texts;      // [records, clip_dim], row k captions record k
  Tensor style_map;  // A, [style_dim, clip_dim]
};

inline SyntheticWorld make_synthetic_world(const SyntheticConfig& cfg, std::uint64_t seed) {
  cfg.partition.validate();
  if (cfg.records < 2 || cfg.clip_dim < 2) {
    throw Error(ErrorCode::InvalidArgument, "synthetic world needs >= 2 records and clip dim >= 2");
  }
  Rng rng(seed);
  const std::size_t di = cfg.clip_dim;
  const std::size_t ds = cfg.partition.dim;
  const double coord = 1.0 / std::sqrt(static_cast<double>(di));

  // Orthogonal modality offsets.
  std::vector<double> g_img(di), g_txt(di);
  for (double& v : g_img) v = rng.normal();
  for (double& v : g_txt) v = rng.normal();
  g_img = normalized(g_img);
  const double proj = dot(g_txt, g_img);
  for (std::size_t j = 0; j < di; ++j) g_txt[j] -= proj * g_img[j];
  g_txt = normalized(g_txt);
  for (std::size_t j = 0; j < di; ++j) {
    g_img[j] *= cfg.modality_offset;
    g_txt[j] *= cfg.modality_offset;
  }

  SyntheticWorld w;
  w.style_map = Tensor({ds, di});
  for (double& v : w.style_map.data()) v = rng.normal() * cfg.style_scale * coord;
  std::vector<double> s0(ds);
  for (double& v : s0) v = rng.normal();

  w.bundle.clip_dim = di;
  w.bundle.style_dim = ds;
  w.bundle.partition = cfg.partition;
  w.bundle.manifest_extra = {{"source_tool", "deltaedit make-synthetic"},
                             {"world", world_name(cfg.kind)},
                             {"seed", seed}};
  w.texts = Tensor({cfg.records, di});

  std::vector<double> u(di);
  for (std::size_t k = 0; k < cfg.records; ++k) {
    for (double& v : u) v = rng.normal() * coord;
    EmbeddingRecord rec;
    rec.id = "synthetic-" + std::to_string(k);
    rec.clip.resize(di);
    auto text = w.texts.row(k);
    for (std::size_t j = 0; j < di; ++j) {
      rec.clip[j] = u[j] + g_img[j] + rng.normal() * cfg.noise * coord;
      text[j] = u[j] + g_txt[j] + rng.normal() * cfg.noise * coord;
    }
    // Round through float32 so the in-memory world equals what a bundle
    // file holds.
    for (double& v : rec.clip) v = static_cast<double>(static_cast<float>(v));
    for (double& v : text) v = static_cast<double>(static_cast<float>(v));

    const std::vector<double> source = cfg.kind == WorldKind::Linear ? normalized(rec.clip) : u;
    rec.style.resize(ds);
    for (std::size_t c = 0; c < ds; ++c) {
      rec.style[c] = s0[c] + dot(w.style_map.row(c), source);
    }
    for (double& v : rec.style) v = static_cast<double>(static_cast<float>(v));
    w.bundle.records.push_back(std::move(rec));
  }
  return w;
}

/// Toy data for the style-conditioned predictor: s ~ N(0, I) and
/// x0 = L s + b with L ~ N(0, 1/D_s) and b ~ N(0, 0.25).
struct StyleDataset {
  Tensor x0;      // [count, data_dim]
  Tensor styles;  // [count, style_dim]
  Tensor map;     // L, [data_dim, style_dim]
  std::vector<double> offset;
};

inline StyleDataset make_style_dataset(std::size_t count, std::size_t data_dim,
                                       std::size_t style_dim, std::uint64_t seed) {
  if (count == 0 || data_dim == 0 || style_dim == 0) {
    throw Error(ErrorCode::InvalidArgument, "style dataset dims must be positive");
  }
  Rng rng(seed);
  StyleDataset d{Tensor({count, data_dim}), Tensor({count, style_dim}), Tensor({data_dim, style_dim}),
                 std::vector<double>(data_dim)};
  const double coord = 1.0 / std::sqrt(static_cast<double>(style_dim));
  for (double& v : d.map.data()) v = rng.normal() * coord;
  for (double& v : d.offset) v = 0.5 * rng.normal();
  for (std::size_t k = 0; k < count; ++k) {
    auto s = d.styles.row(k);
    for (double& v : s) v = rng.normal();
    auto x = d.x0.row(k);
    for (std::size_t j = 0; j < data_dim; ++j) x[j] = d.offset[j] + dot(d.map.row(j), s);
  }
  return d;
}

}  // namespace deltaedit

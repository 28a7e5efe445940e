#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "deltaedit/bundle.hpp"
#include "deltaedit/checkpoint.hpp"
#include "deltaedit/rng.hpp"

namespace deltaedit {

/// Maps a style code to an image-space embedding. Must be deterministic and
/// return a fixed dimension.
using LatentProbe = std::function<std::vector<double>(std::span<const double>)>;

/// Probe backed by a tabulated linear map. Row c of `table` is the
/// image-space response to style channel c, so probe(s) = table^T s.
inline LatentProbe linear_probe(Tensor table) {
  if (table.rank() != 2) {
    throw Error(ErrorCode::ShapeMismatch, "probe table must be a matrix, got " + table.shape_string());
  }
  return [t = std::move(table)](std::span<const double> s) {
    if (s.size() != t.rows()) {
      throw Error(ErrorCode::ShapeMismatch, "probe expects style dim " + std::to_string(t.rows()) +
                                                ", got " + std::to_string(s.size()));
    }
    std::vector<double> out(t.cols(), 0.0);
    for (std::size_t c = 0; c < t.rows(); ++c) {
      const auto row = t.row(c);
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += s[c] * row[j];
    }
    return out;
  };
}

struct RelevanceMatrix {
  Tensor directions;        // [D_s, D_i], unit rows or zero rows
  std::vector<bool> null;   // channel produced no measurable change

  std::size_t channels() const { return directions.rows(); }
  std::size_t clip_dim() const { return directions.cols(); }
};

struct RelevanceOptions {
  double step = 0.5;
  // A row whose averaged difference has norm below this is flagged null.
  double null_tolerance = 1e-12;
};

/// Central-difference estimate of each channel's image-space direction,
/// averaged over the base codes and then normalized.
inline RelevanceMatrix estimate_relevance(const LatentProbe& probe,
                                          const std::vector<std::vector<double>>& base_codes,
                                          const RelevanceOptions& opts = {}) {
  if (!(opts.step > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "relevance step must be positive");
  }
  if (base_codes.empty()) {
    throw Error(ErrorCode::InvalidArgument, "relevance estimation needs at least one base code");
  }
  const std::size_t ds = base_codes.front().size();
  std::size_t di = 0;
  std::vector<std::vector<double>> sums(ds);
  for (const auto& base : base_codes) {
    if (base.size() != ds) {
      throw Error(ErrorCode::ShapeMismatch, "base codes have inconsistent dimensions");
    }
    std::vector<double> code = base;
    for (std::size_t c = 0; c < ds; ++c) {
      code[c] = base[c] + opts.step;
      const auto plus = probe(code);
      code[c] = base[c] - opts.step;
      const auto minus = probe(code);
      code[c] = base[c];
      if (di == 0) di = plus.size();
      if (plus.size() != di || minus.size() != di || di == 0) {
        throw Error(ErrorCode::ShapeMismatch, "probe returned inconsistent output dimensions");
      }
      auto& acc = sums[c];
      acc.resize(di, 0.0);
      for (std::size_t j = 0; j < di; ++j) acc[j] += plus[j] - minus[j];
    }
  }
  RelevanceMatrix r{Tensor({ds, di}), std::vector<bool>(ds, false)};
  const double scale = 1.0 / (2.0 * opts.step * static_cast<double>(base_codes.size()));
  for (std::size_t c = 0; c < ds; ++c) {
    auto row = r.directions.row(c);
    for (std::size_t j = 0; j < di; ++j) row[j] = sums[c][j] * scale;
    const double n = l2_norm(row);
    if (!(n > opts.null_tolerance)) {
      r.null[c] = true;
      std::fill(row.begin(), row.end(), 0.0);
      continue;
    }
    for (double& v : row) v /= n;
  }
  return r;
}

/// `count` base codes drawn from the records of a bundle (with replacement).
inline std::vector<std::vector<double>> sample_base_codes(const Bundle& bundle, std::size_t count,
                                                          std::uint64_t seed) {
  if (bundle.records.empty()) throw Error(ErrorCode::InvalidArgument, "empty bundle");
  Rng rng(seed);
  std::vector<std::vector<double>> out;
  for (std::size_t k = 0; k < count; ++k) {
    out.push_back(bundle.records[static_cast<std::size_t>(rng.index(bundle.size()))].style);
  }
  return out;
}

struct RelevanceMask {
  std::vector<bool> keep;
  std::vector<double> scores;
  double tau = 0.0;

  std::size_t kept() const { return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true)); }
};

/// score_c = |cos(row_c, delta_t)|, null rows score 0; keep iff score >= tau.
inline RelevanceMask build_mask(const RelevanceMatrix& r, std::span<const double> delta_t,
                                double tau) {
  if (!(tau >= 0.0)) throw Error(ErrorCode::InvalidArgument, "tau must be >= 0");
  if (delta_t.size() != r.clip_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "text direction has dimension " +
                                              std::to_string(delta_t.size()) +
                                              ", relevance matrix expects " +
                                              std::to_string(r.clip_dim()));
  }
  const double nt = l2_norm(delta_t);
  if (nt == 0.0) {
    throw Error(ErrorCode::InvalidArgument, "cannot build a mask from a zero text direction");
  }
  RelevanceMask m;
  m.tau = tau;
  m.keep.resize(r.channels());
  m.scores.resize(r.channels());
  for (std::size_t c = 0; c < r.channels(); ++c) {
    m.scores[c] = r.null[c] ? 0.0 : std::abs(dot(r.directions.row(c), delta_t)) / nt;
    m.keep[c] = m.scores[c] >= tau;
  }
  return m;
}

inline RelevanceMask uniform_mask(std::size_t channels, bool keep) {
  RelevanceMask m;
  m.keep.assign(channels, keep);
  m.scores.assign(channels, keep ? 1.0 : 0.0);
  return m;
}

inline Checkpoint relevance_checkpoint(const RelevanceMatrix& r, const nlohmann::json& meta = {}) {
  Checkpoint c;
  c.kind = "relevance";
  c.meta = meta.is_null() ? nlohmann::json::object() : meta;
  c.tensors.add("directions", r.directions);
  Tensor flags({r.channels()});
  for (std::size_t k = 0; k < r.channels(); ++k) flags.data()[k] = r.null[k] ? 1.0 : 0.0;
  c.tensors.add("null", std::move(flags));
  return c;
}

inline RelevanceMatrix relevance_from(const Checkpoint& c) {
  if (c.kind != "relevance") {
    throw Error(ErrorCode::Format, "checkpoint kind '" + c.kind + "' is not 'relevance'");
  }
  RelevanceMatrix r{c.tensors.get("directions"), {}};
  const Tensor& flags = c.tensors.get("null");
  if (r.directions.rank() != 2 || flags.size() != r.channels()) {
    throw Error(ErrorCode::Format, "relevance checkpoint tensors have inconsistent shapes");
  }
  for (double v : flags.data()) r.null.push_back(v != 0.0);
  return r;
}

}  // namespace deltaedit

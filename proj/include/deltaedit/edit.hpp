#pragma once

#include <optional>
#include <vector>

#include "deltaedit/delta_space.hpp"
#include "deltaedit/disentangle.hpp"
#include "deltaedit/mapper.hpp"

namespace deltaedit {

struct EditOptions {
  std::optional<RelevanceMask> mask;
  // Debug-only multiplier on the predicted direction; 1 leaves it untouched.
  double debug_strength = 1.0;
};

struct EditResult {
  std::vector<double> edited;  // s + delta
  std::vector<double> delta;   // after masking and scaling
};

/// Text-driven edit: the condition is (normalize(i), delta of the two text
/// embeddings); masked channels of the direction are zeroed.
inline EditResult edit(const DeltaMapper& mapper, const ad::ParameterSet& params,
                       std::span<const double> s, std::span<const double> i,
                       std::span<const double> source_text, std::span<const double> target_text,
                       const EditOptions& opts = {}) {
  const auto& cfg = mapper.config();
  if (s.size() != cfg.style_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "style code has dimension " + std::to_string(s.size()) +
                                              ", mapper expects " +
                                              std::to_string(cfg.style_dim()));
  }
  if (opts.mask && opts.mask->keep.size() != s.size()) {
    throw Error(ErrorCode::ShapeMismatch, "mask has " + std::to_string(opts.mask->keep.size()) +
                                              " channels, style code has " +
                                              std::to_string(s.size()));
  }
  EditDirection dir;
  if (cfg.mode == ConditionMode::Delta) {
    DeltaCondition c;
    c.anchor = normalized(i);
    c.delta = make_delta(source_text, target_text).delta;
    dir = mapper.forward(params, s, c);
  } else {
    dir = mapper.baseline_forward(params, s, i, target_text);
  }
  EditResult r;
  r.delta = std::move(dir.delta_s);
  r.edited.assign(s.begin(), s.end());
  for (std::size_t c = 0; c < r.delta.size(); ++c) {
    if (opts.mask && !opts.mask->keep[c]) {
      r.delta[c] = 0.0;
      continue;
    }
    r.delta[c] *= opts.debug_strength;
    r.edited[c] += r.delta[c];
  }
  return r;
}

}  // namespace deltaedit

#pragma once

#include <cmath>
#include <cstdint>

#include "deltaedit/autodiff.hpp"

namespace deltaedit::ad {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Decoupled (AdamW-style) decay; 0 gives plain Adam.
  double weight_decay = 0.0;
};

struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  ParameterSet first_moment;
  ParameterSet second_moment;

  AdamState() = default;
  AdamState(const ParameterSet& params, AdamOptions opts)
      : options(opts), first_moment(params.zeros_like()), second_moment(params.zeros_like()) {}
};

/// One bias-corrected Adam update, in place. Parameters are visited in
/// ParameterSet order so the result is deterministic.
inline void adam_step(ParameterSet& params, const Gradients& grads, AdamState& state) {
  if (state.first_moment.size() == 0 && params.size() != 0) {
    state.first_moment = params.zeros_like();
    state.second_moment = params.zeros_like();
  }
  if (grads.size() != params.size() || state.first_moment.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "adam_step: parameter, gradient and moment counts differ");
  }
  state.step += 1;
  const AdamOptions& o = state.options;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(o.beta1, t);
  const double correction2 = 1.0 - std::pow(o.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params.tensor(i);
    const Tensor& g = grads.tensor(i);
    Tensor& m = state.first_moment.tensor(i);
    Tensor& v = state.second_moment.tensor(i);
    if (g.shape() != p.shape() || m.shape() != p.shape() || v.shape() != p.shape()) {
      throw Error(ErrorCode::ShapeMismatch, "adam_step: shape mismatch for parameter '" +
                                                params.name(i) + "' " + p.shape_string() +
                                                " vs gradient " + g.shape_string());
    }
    // Plain loop rather than Eigen maps: Eigen fuses multiply-adds in its
    // packet path but not in the unaligned head and tail, so results would
    // depend on where the allocator put the buffer.
    auto pd = p.data();
    auto md = m.data();
    auto vd = v.data();
    const auto gd = g.data();
    for (std::size_t k = 0; k < pd.size(); ++k) {
      md[k] = o.beta1 * md[k] + (1.0 - o.beta1) * gd[k];
      vd[k] = o.beta2 * vd[k] + (1.0 - o.beta2) * gd[k] * gd[k];
      const double step = (md[k] / correction1) / (std::sqrt(vd[k] / correction2) + o.epsilon);
      pd[k] -= o.learning_rate * (step + o.weight_decay * pd[k]);
    }
  }
}

}  // namespace deltaedit::ad

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "deltaedit/autodiff.hpp"
#include "deltaedit/rng.hpp"

// Random small graphs for finite-difference gradient checks. Shared by the
// unit tests and the acceptance binary.

namespace deltaedit::testing {

inline constexpr ad::OpKind kCheckedOps[] = {
    ad::OpKind::MatMul,    ad::OpKind::Add,       ad::OpKind::Sub,
    ad::OpKind::Scale,     ad::OpKind::Concat,    ad::OpKind::Slice,
    ad::OpKind::LeakyRelu, ad::OpKind::Relu,      ad::OpKind::GroupNorm,
    ad::OpKind::AffineModulate, ad::OpKind::RowL2Norm, ad::OpKind::RowCosine,
    ad::OpKind::Mean,      ad::OpKind::MeanAbs,   ad::OpKind::MeanSquare,
};

struct GradCase {
  ad::Graph graph;
  ad::NodeId root;
  ad::ParameterSet params;
  ad::Bindings inputs;
  // Returns false when an operand sits too close to a kink for finite
  // differences to be meaningful; the case is then redrawn.
  std::function<bool(const ad::Graph&)> usable = [](const ad::Graph&) { return true; };
};

class CaseBuilder {
 public:
  explicit CaseBuilder(Rng& rng) : rng_(rng) {}

  std::size_t draw(std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng_.index(hi - lo + 1));
  }

  ad::NodeId param(const Tensor::Shape& shape) {
    Tensor t(shape);
    for (double& v : t.data()) v = rng_.normal();
    const std::string name = "p" + std::to_string(c_.params.size());
    c_.params.add(name, std::move(t));
    return c_.graph.parameter(name);
  }

  /// [rows, cols] operand: a parameter, a product of two parameters, or a
  /// parameter plus a bound input.
  ad::NodeId operand(std::size_t rows, std::size_t cols) {
    auto& g = c_.graph;
    switch (rng_.index(3)) {
      case 0:
        return param({rows, cols});
      case 1: {
        const std::size_t k = draw(1, 4);
        return g.matmul(param({rows, k}), param({k, cols}));
      }
      default: {
        const std::string name = "x" + std::to_string(c_.inputs.size());
        Tensor t({rows, cols});
        for (double& v : t.data()) v = rng_.normal();
        c_.inputs.emplace(name, std::move(t));
        return g.add(param({rows, cols}), g.input(name));
      }
    }
  }

  /// Scalar readout with random weights over the columns of `y`.
  ad::NodeId readout(ad::NodeId y, std::size_t cols) {
    auto& g = c_.graph;
    Tensor w({cols});
    for (double& v : w.data()) v = rng_.normal();
    return g.mean(g.matmul(y, g.constant(std::move(w))));
  }

  GradCase& get() { return c_; }

 private:
  Rng& rng_;
  GradCase c_;
};

namespace detail {

inline bool away_from_zero(const Tensor& t, double margin) {
  return std::all_of(t.data().begin(), t.data().end(),
                     [margin](double v) { return std::abs(v) > margin; });
}

inline bool rows_away_from_zero(const Tensor& t, double margin) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    if (!(l2_norm(t.row(r)) > margin)) return false;
  }
  return true;
}

inline bool groups_spread(const Tensor& t, std::size_t groups, double margin) {
  const std::size_t width = t.cols() / groups;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto row = t.row(r);
    for (std::size_t gi = 0; gi < groups; ++gi) {
      double m = 0.0, v = 0.0;
      for (std::size_t j = 0; j < width; ++j) m += row[gi * width + j];
      m /= static_cast<double>(width);
      for (std::size_t j = 0; j < width; ++j) v += (row[gi * width + j] - m) * (row[gi * width + j] - m);
      if (v / static_cast<double>(width) < margin) return false;
    }
  }
  return true;
}

}  // namespace detail

/// One graph whose interesting node is `kind`, fed by random operands.
inline GradCase build_case(ad::OpKind kind, Rng& rng) {
  CaseBuilder b(rng);
  auto& c = b.get();
  auto& g = c.graph;
  const std::size_t rows = b.draw(1, 4);
  const std::size_t cols = b.draw(2, 6);
  constexpr double kMargin = 1e-3;
  using K = ad::OpKind;
  switch (kind) {
    case K::MatMul: {
      const std::size_t k = b.draw(1, 5);
      switch (rng.index(3)) {
        case 0: c.root = b.readout(g.matmul(b.operand(rows, k), b.param({k, cols})), cols); break;
        case 1: c.root = b.readout(g.matmul(b.param({k}), b.operand(k, cols)), cols); break;
        default: c.root = g.mean(g.matmul(b.operand(rows, k), b.param({k}))); break;
      }
      break;
    }
    case K::Add: {
      const auto x = b.operand(rows, cols);
      switch (rng.index(3)) {
        case 0: c.root = b.readout(g.add(x, b.operand(rows, cols)), cols); break;
        case 1: c.root = b.readout(g.add(x, b.param({cols})), cols); break;
        default: c.root = b.readout(g.add(x, b.param({1})), cols); break;
      }
      break;
    }
    case K::Sub:
      c.root = b.readout(g.sub(b.operand(rows, cols), b.operand(rows, cols)), cols);
      break;
    case K::Scale:
      c.root = b.readout(g.scale(b.operand(rows, cols), rng.uniform(-2, 2), rng.uniform(-1, 1)), cols);
      break;
    case K::Concat: {
      std::vector<ad::NodeId> parts;
      std::size_t total = 0;
      const std::size_t n = b.draw(2, 3);
      for (std::size_t p = 0; p < n; ++p) {
        const std::size_t w = b.draw(1, 3);
        parts.push_back(b.operand(rows, w));
        total += w;
      }
      c.root = b.readout(g.concat(parts), total);
      break;
    }
    case K::Slice: {
      const std::size_t lo = b.draw(0, cols - 1);
      const std::size_t hi = b.draw(lo + 1, cols);
      c.root = b.readout(g.slice(b.operand(rows, cols), lo, hi), hi - lo);
      break;
    }
    case K::LeakyRelu:
    case K::Relu: {
      const auto x = b.operand(rows, cols);
      const auto y = kind == K::Relu ? g.relu(x) : g.leaky_relu(x, rng.uniform(0.05, 0.5));
      c.root = b.readout(y, cols);
      c.usable = [x](const ad::Graph& gr) { return detail::away_from_zero(gr.value(x), kMargin); };
      break;
    }
    case K::GroupNorm: {
      // width 2 would make every output +-1 with a zero gradient
      const std::size_t groups = b.draw(1, 3);
      const std::size_t width = b.draw(3, 4);
      const auto x = b.operand(rows, groups * width);
      c.root = b.readout(g.group_norm(x, groups), groups * width);
      c.usable = [x, groups](const ad::Graph& gr) {
        return detail::groups_spread(gr.value(x), groups, 1e-2);
      };
      break;
    }
    case K::AffineModulate:
      c.root = b.readout(g.affine_modulate(b.operand(rows, cols), b.operand(rows, cols),
                                           b.operand(rows, cols)),
                         cols);
      break;
    case K::RowL2Norm: {
      const auto x = b.operand(rows, cols);
      c.root = b.readout(g.row_l2_norm(x), 1);
      c.usable = [x](const ad::Graph& gr) { return detail::rows_away_from_zero(gr.value(x), kMargin); };
      break;
    }
    case K::RowCosine: {
      const auto x = b.operand(rows, cols);
      const auto y = b.operand(rows, cols);
      c.root = b.readout(g.row_cosine(x, y), 1);
      c.usable = [x, y](const ad::Graph& gr) {
        return detail::rows_away_from_zero(gr.value(x), kMargin) &&
               detail::rows_away_from_zero(gr.value(y), kMargin);
      };
      break;
    }
    case K::Mean:
      c.root = g.scale(g.mean(b.operand(rows, cols)), rng.uniform(0.5, 2.0));
      break;
    case K::MeanAbs: {
      const auto x = b.operand(rows, cols);
      c.root = g.mean_abs(x);
      c.usable = [x](const ad::Graph& gr) { return detail::away_from_zero(gr.value(x), kMargin); };
      break;
    }
    case K::MeanSquare:
      c.root = g.mean_square(b.operand(rows, cols));
      break;
    default:
      throw Error(ErrorCode::InvalidArgument, std::string("no gradient case for ") + ad::op_name(kind));
  }
  return std::move(c);
}

/// A chain of 2 to 4 smooth-or-checked unary stages over a random operand,
/// ending in one of the loss reductions used by the library.
inline GradCase build_composite_case(Rng& rng) {
  CaseBuilder b(rng);
  auto& c = b.get();
  auto& g = c.graph;
  const std::size_t rows = b.draw(1, 3);
  const std::size_t cols = 2 * b.draw(1, 3);
  ad::NodeId x = b.operand(rows, cols);
  std::vector<ad::NodeId> kinked;
  const std::size_t stages = b.draw(2, 4);
  for (std::size_t s = 0; s < stages; ++s) {
    switch (rng.index(4)) {
      case 0:
        kinked.push_back(x);
        x = g.leaky_relu(x, 0.2);
        break;
      case 1: {
        const auto w = b.param({cols, cols});
        x = g.add(g.matmul(x, w), b.param({cols}));
        break;
      }
      case 2:
        x = g.affine_modulate(x, b.operand(rows, cols), b.operand(rows, cols));
        break;
      default:
        x = g.concat({g.slice(x, cols / 2, cols), g.slice(x, 0, cols / 2)});
        break;
    }
  }
  const auto target = b.operand(rows, cols);
  switch (rng.index(3)) {
    case 0:
      c.root = g.add(g.mean(g.row_l2_norm(g.sub(x, target))),
                     g.mean(g.scale(g.row_cosine(x, target), -1.0, 1.0)));
      c.usable = [kinked, x, target](const ad::Graph& gr) {
        for (auto k : kinked) {
          if (!detail::away_from_zero(gr.value(k), 1e-3)) return false;
        }
        return detail::rows_away_from_zero(gr.value(x), 1e-3) &&
               detail::rows_away_from_zero(gr.value(target), 1e-3);
      };
      return std::move(c);
    case 1: {
      const auto d = g.sub(x, target);
      c.root = g.mean_abs(d);
      c.usable = [kinked, d](const ad::Graph& gr) {
        for (auto k : kinked) {
          if (!detail::away_from_zero(gr.value(k), 1e-3)) return false;
        }
        return detail::away_from_zero(gr.value(d), 1e-3);
      };
      return std::move(c);
    }
    default:
      c.root = g.mean_square(g.sub(x, target));
      c.usable = [kinked](const ad::Graph& gr) {
        for (auto k : kinked) {
          if (!detail::away_from_zero(gr.value(k), 1e-3)) return false;
        }
        return true;
      };
      return std::move(c);
  }
}

struct GradCheck {
  double rel_error = 0.0;
  std::size_t entries = 0;
};

/// Compares backward() with central differences over every parameter
/// entry. The error is max_k |a_k - n_k| / max(max_k |a_k|, max_k |n_k|, 1e-8).
inline GradCheck check_gradients(GradCase& c, double h = 1e-5) {
  auto& g = c.graph;
  g.forward(c.root, c.inputs, c.params);
  const ad::Gradients analytic = g.backward(c.root);
  double worst = 0.0, scale = 1e-8;
  GradCheck out;
  for (std::size_t i = 0; i < c.params.size(); ++i) {
    Tensor& p = c.params.tensor(i);
    const Tensor& a = analytic.tensor(i);
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double keep = p[k];
      p[k] = keep + h;
      const double up = g.forward(c.root, c.inputs, c.params)[0];
      p[k] = keep - h;
      const double down = g.forward(c.root, c.inputs, c.params)[0];
      p[k] = keep;
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, std::abs(numeric - a[k]));
      scale = std::max({scale, std::abs(numeric), std::abs(a[k])});
      ++out.entries;
    }
  }
  out.rel_error = worst / scale;
  return out;
}

/// Draws until the case is usable (operands clear of kinks).
template <class Make>
GradCase draw_usable(Make&& make, Rng& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    GradCase c = make(rng);
    c.graph.forward(c.root, c.inputs, c.params);
    if (c.usable(c.graph)) return c;
  }
  throw Error(ErrorCode::InvalidArgument, "could not draw a usable gradient case");
}

struct SuiteEntry {
  std::string op;
  std::size_t graphs = 0;
  double worst = 0.0;
};

/// `graphs` random graphs per op kind plus as many composite chains.
inline std::vector<SuiteEntry> run_gradient_suite(std::size_t graphs, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SuiteEntry> out;
  for (ad::OpKind kind : kCheckedOps) {
    SuiteEntry e{ad::op_name(kind), graphs, 0.0};
    for (std::size_t n = 0; n < graphs; ++n) {
      GradCase c = draw_usable([kind](Rng& r) { return build_case(kind, r); }, rng);
      e.worst = std::max(e.worst, check_gradients(c).rel_error);
    }
    out.push_back(e);
  }
  SuiteEntry comp{"composite", graphs, 0.0};
  for (std::size_t n = 0; n < graphs; ++n) {
    GradCase c = draw_usable([](Rng& r) { return build_composite_case(r); }, rng);
    comp.worst = std::max(comp.worst, check_gradients(c).rel_error);
  }
  out.push_back(comp);
  return out;
}

}  // namespace deltaedit::testing

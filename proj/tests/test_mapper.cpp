#include <catch_amalgamated.hpp>

#include "deltaedit/edit.hpp"
#include "deltaedit/mapper.hpp"
#include "support/fixtures.hpp"

using namespace deltaedit;

namespace {

MapperConfig small_config(ConditionMode mode = ConditionMode::Delta, std::size_t depth = 2) {
  MapperConfig c;
  c.clip_dim = 6;
  c.partition = {2, 5, 7};
  c.hidden = 5;
  c.depth = depth;
  c.mode = mode;
  return c;
}

// Plain-loop forward written independently of the graph code.
std::vector<double> ref_mlp(const ad::ParameterSet& p, const std::string& name, std::vector<double> x,
                            std::size_t depth, double slope) {
  for (std::size_t k = 0; k < depth; ++k) {
    const std::string layer = name + "." + std::to_string(k);
    const Tensor& w = p.get(layer + ".weight");
    const Tensor& b = p.get(layer + ".bias");
    std::vector<double> y(w.cols());
    for (std::size_t o = 0; o < w.cols(); ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < w.rows(); ++i) acc += x[i] * w.at(i, o);
      y[o] = (k + 1 != depth && acc < 0) ? slope * acc : acc;
    }
    x = std::move(y);
  }
  return x;
}

std::vector<double> ref_forward(const MapperConfig& c, const ad::ParameterSet& p,
                                const std::vector<double>& s, const std::vector<double>& cond) {
  std::vector<double> out;
  const char* names[] = {"coarse", "medium", "fine"};
  const std::size_t bounds[] = {0, c.partition.coarse_end, c.partition.medium_end, c.partition.dim};
  for (int l = 0; l < 3; ++l) {
    std::vector<double> slice(s.begin() + bounds[l], s.begin() + bounds[l + 1]);
    const auto fs = ref_mlp(p, std::string(names[l]) + ".style", slice, c.depth, c.leaky_slope);
    auto fused = ref_mlp(p, std::string(names[l]) + ".condition", cond, c.depth, c.leaky_slope);
    fused.insert(fused.end(), fs.begin(), fs.end());
    const auto y = ref_mlp(p, std::string(names[l]) + ".fusion", fused, c.depth, c.leaky_slope);
    out.insert(out.end(), y.begin(), y.end());
  }
  return out;
}

std::vector<double> unit(Rng& rng, std::size_t n) { return normalized(testing::random_vector(rng, n)); }

}  // namespace

TEST_CASE("level names match the parameter prefixes") {
  CHECK(std::string(level_name(Level::Coarse)) == "coarse");
  CHECK(std::string(level_name(Level::Medium)) == "medium");
  CHECK(std::string(level_name(Level::Fine)) == "fine");
}

TEST_CASE("zero parameters give a zero direction for any input") {
  Rng rng(41);
  for (auto mode : {ConditionMode::Delta, ConditionMode::Baseline}) {
    DeltaMapper m(small_config(mode));
    const auto p = m.zero_params();
    for (int trial = 0; trial < 20; ++trial) {
      const auto s = testing::random_vector(rng, 7, 5.0);
      const auto cond = testing::random_vector(rng, 12, 5.0);
      for (double v : m.forward(p, s, cond).delta_s) CHECK(v == 0.0);
    }
  }
}

TEST_CASE("forward matches a plain-loop reference network") {
  Rng rng(42);
  for (std::size_t depth : {1u, 2u, 4u}) {
    const auto cfg = small_config(ConditionMode::Delta, depth);
    DeltaMapper m(cfg);
    for (int trial = 0; trial < 10; ++trial) {
      const auto p = m.init_params(100 + trial);
      const auto s = testing::random_vector(rng, 7);
      const auto cond = testing::random_vector(rng, 12);
      const auto got = m.forward(p, s, cond).delta_s;
      const auto want = ref_forward(cfg, p, s, cond);
      REQUIRE(got.size() == 7);
      for (std::size_t k = 0; k < 7; ++k) CHECK(got[k] == Catch::Approx(want[k]).margin(1e-12));
    }
  }
}

TEST_CASE("a level's output depends only on its own slice of the style code") {
  Rng rng(43);
  const auto cfg = small_config();
  DeltaMapper m(cfg);
  for (int trial = 0; trial < 30; ++trial) {
    const auto p = m.init_params(200 + trial);
    const auto s = testing::random_vector(rng, 7);
    const auto cond = testing::random_vector(rng, 12);
    const auto base = m.forward(p, s, cond).delta_s;
    for (Level l : kLevels) {
      auto moved = s;
      for (std::size_t c = cfg.partition.begin(l); c < cfg.partition.end(l); ++c) moved[c] += 3.0 * rng.normal();
      const auto out = m.forward(p, moved, cond).delta_s;
      for (Level other : kLevels) {
        if (other == l) continue;
        for (std::size_t c = cfg.partition.begin(other); c < cfg.partition.end(other); ++c) {
          CHECK(out[c] == base[c]);
        }
      }
    }
  }
}

TEST_CASE("delta condition lays out delta before anchor") {
  const DeltaCondition c{{1.0, 2.0}, {3.0, 4.0}};
  CHECK(condition_input(c) == std::vector<double>{3.0, 4.0, 1.0, 2.0});
  const auto b = condition_input(ConditionMode::Baseline, std::vector<double>{3.0, 4.0},
                                 std::vector<double>{0.0, 2.0});
  CHECK(b == std::vector<double>{0.6, 0.8, 0.0, 1.0});
}

TEST_CASE("baseline output ignores the scale of its embeddings") {
  Rng rng(44);
  DeltaMapper m(small_config(ConditionMode::Baseline));
  const auto p = m.init_params(3);
  const auto s = testing::random_vector(rng, 7);
  const auto i1 = testing::random_vector(rng, 6);
  const auto t = testing::random_vector(rng, 6);
  auto t2 = t;
  for (double& v : t2) v *= 4.0;  // exact in binary
  CHECK(m.baseline_forward(p, s, i1, t).delta_s == m.baseline_forward(p, s, i1, t2).delta_s);
  REQUIRE_THROWS_AS(m.baseline_forward(p, s, i1, std::vector<double>(5, 1.0)), Error);
  DeltaMapper d(small_config());
  REQUIRE_THROWS_AS(d.baseline_forward(p, s, i1, t), Error);
  REQUIRE_THROWS_AS(m.forward(p, s, make_delta(i1, t)), Error);
}

TEST_CASE("batch loss is the row mean of rec plus sim") {
  Rng rng(45);
  DeltaMapper m(small_config());
  const auto p = m.init_params(4);
  const std::size_t batch = 6;
  const Tensor styles = testing::random_tensor(rng, {batch, 7});
  const Tensor conds = testing::random_tensor(rng, {batch, 12});
  const Tensor targets = testing::random_tensor(rng, {batch, 7});
  const auto l = m.batch_loss(p, styles, conds, targets);
  CHECK(l.total == Catch::Approx(l.rec + l.sim).margin(1e-14));

  const Tensor out = m.forward_batch(p, styles, conds);
  double rec = 0, sim = 0;
  for (std::size_t r = 0; r < batch; ++r) {
    const auto b = loss_breakdown(out.row(r), targets.row(r));
    rec += b.rec / batch;
    sim += b.sim / batch;
  }
  CHECK(l.rec == Catch::Approx(rec).margin(1e-12));
  CHECK(l.sim == Catch::Approx(sim).margin(1e-12));
}

TEST_CASE("loss terms on hand vectors") {
  const auto l = loss_breakdown(std::vector<double>{1.0, 0.0}, std::vector<double>{0.0, 1.0});
  CHECK(l.rec == Catch::Approx(std::sqrt(2.0)));
  CHECK(l.sim == Catch::Approx(1.0));
  const auto same = loss_breakdown(std::vector<double>{2.0, 1.0}, std::vector<double>{2.0, 1.0});
  CHECK(same.total == Catch::Approx(0.0).margin(1e-15));
  // sim ignores scale, rec does not
  Rng rng(46);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = testing::random_vector(rng, 5);
    const auto b = testing::random_vector(rng, 5);
    auto b2 = b;
    for (double& v : b2) v *= 7.5;
    CHECK(loss_breakdown(a, b).sim == Catch::Approx(loss_breakdown(a, b2).sim).margin(1e-12));
  }
}

TEST_CASE("analytic gradients agree with central differences") {
  Rng rng(47);
  DeltaMapper m(small_config());
  auto p = m.init_params(5);
  const Tensor styles = testing::random_tensor(rng, {4, 7});
  const Tensor conds = testing::random_tensor(rng, {4, 12});
  const Tensor targets = testing::random_tensor(rng, {4, 7});
  const auto grads = m.loss_and_gradients(p, styles, conds, targets).grads;
  const double h = 1e-6;
  double worst = 0;
  for (std::size_t t = 0; t < p.size(); ++t) {
    for (int pick = 0; pick < 3; ++pick) {
      const auto k = static_cast<std::size_t>(rng.index(p.tensor(t).size()));
      const double keep = p.tensor(t)[k];
      p.tensor(t)[k] = keep + h;
      const double up = m.batch_loss(p, styles, conds, targets).total;
      p.tensor(t)[k] = keep - h;
      const double down = m.batch_loss(p, styles, conds, targets).total;
      p.tensor(t)[k] = keep;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grads.tensor(t)[k];
      const double err = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      INFO(p.name(t) << "[" << k << "] analytic " << analytic << " numeric " << numeric);
      CHECK(err < 1e-4);
      worst = std::max(worst, err);
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("edit with an all-ones mask equals the unmasked edit") {
  Rng rng(48);
  DeltaMapper m(small_config());
  const auto p = m.init_params(6);
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = testing::random_vector(rng, 7);
    const auto i = unit(rng, 6);
    const auto ts = unit(rng, 6);
    const auto tt = unit(rng, 6);
    const auto plain = edit(m, p, s, i, ts, tt);
    EditOptions o;
    o.mask = uniform_mask(7, true);
    const auto masked = edit(m, p, s, i, ts, tt, o);
    CHECK(masked.edited == plain.edited);
    for (std::size_t c = 0; c < 7; ++c) CHECK(plain.edited[c] == s[c] + plain.delta[c]);
  }
}

TEST_CASE("edit with an all-zeros mask returns s exactly") {
  Rng rng(49);
  DeltaMapper m(small_config());
  const auto p = m.init_params(7);
  const auto s = testing::random_vector(rng, 7);
  EditOptions o;
  o.mask = uniform_mask(7, false);
  const auto r = edit(m, p, s, unit(rng, 6), unit(rng, 6), unit(rng, 6), o);
  CHECK(r.edited == s);
  for (double v : r.delta) CHECK(v == 0.0);
}

TEST_CASE("partial masks zero exactly the dropped channels") {
  Rng rng(50);
  DeltaMapper m(small_config());
  const auto p = m.init_params(8);
  const auto s = testing::random_vector(rng, 7);
  const auto i = unit(rng, 6), ts = unit(rng, 6), tt = unit(rng, 6);
  const auto plain = edit(m, p, s, i, ts, tt);
  EditOptions o;
  o.mask = uniform_mask(7, true);
  o.mask->keep[1] = false;
  o.mask->keep[4] = false;
  const auto r = edit(m, p, s, i, ts, tt, o);
  for (std::size_t c = 0; c < 7; ++c) {
    if (c == 1 || c == 4) {
      CHECK(r.edited[c] == s[c]);
    } else {
      CHECK(r.edited[c] == plain.edited[c]);
    }
  }
}

TEST_CASE("mask and style dimension mismatches are errors") {
  DeltaMapper m(small_config());
  const auto p = m.init_params(9);
  const std::vector<double> s(7, 0.1), e(6, 0.3), f = {1, 0, 0, 0, 0, 0};
  EditOptions o;
  o.mask = uniform_mask(6, true);
  REQUIRE_THROWS_AS(edit(m, p, s, e, e, f, o), Error);
  REQUIRE_THROWS_AS(edit(m, p, std::vector<double>(6, 0.1), e, e, f), Error);
  REQUIRE_THROWS_AS(edit(m, p, s, std::vector<double>(5, 1.0), e, f), Error);
}

TEST_CASE("mapper config validation") {
  auto c = small_config();
  c.depth = 0;
  REQUIRE_THROWS_AS(DeltaMapper(c), Error);
  c = small_config();
  c.partition = {3, 2, 7};
  REQUIRE_THROWS_AS(DeltaMapper(c), Error);
  CHECK(parse_mode("delta") == ConditionMode::Delta);
  REQUIRE_THROWS_AS(parse_mode("other"), Error);
}

#include <catch_amalgamated.hpp>

#include "deltaedit/disentangle.hpp"
#include "support/fixtures.hpp"

using namespace deltaedit;

namespace {

std::vector<std::vector<double>> base_codes(Rng& rng, std::size_t n, std::size_t ds) {
  std::vector<std::vector<double>> out;
  for (std::size_t k = 0; k < n; ++k) out.push_back(testing::random_vector(rng, ds));
  return out;
}

}  // namespace

TEST_CASE("a linear probe recovers the normalized rows of its table") {
  Rng rng(81);
  const Tensor table = testing::random_tensor(rng, {5, 7});
  const auto r = estimate_relevance(linear_probe(table), base_codes(rng, 4, 5));
  REQUIRE(r.channels() == 5);
  REQUIRE(r.clip_dim() == 7);
  for (std::size_t c = 0; c < 5; ++c) {
    CHECK_FALSE(r.null[c]);
    const auto want = normalized(table.row(c));
    for (std::size_t j = 0; j < 7; ++j) CHECK(r.directions.at(c, j) == Catch::Approx(want[j]).margin(1e-9));
  }
}

TEST_CASE("a channel the probe ignores is flagged null") {
  Rng rng(82);
  Tensor table = testing::random_tensor(rng, {4, 6});
  for (double& v : table.row(2)) v = 0.0;
  const auto r = estimate_relevance(linear_probe(table), base_codes(rng, 3, 4));
  CHECK(r.null == std::vector<bool>{false, false, true, false});
  for (double v : r.directions.row(2)) CHECK(v == 0.0);
  const auto m = build_mask(r, table.row(0), 0.0);
  CHECK(m.scores[2] == 0.0);
}

TEST_CASE("halving the step changes a linear probe's estimate by rounding only") {
  Rng rng(83);
  const Tensor table = testing::random_tensor(rng, {3, 5});
  const auto codes = base_codes(rng, 5, 3);
  RelevanceOptions a, b;
  a.step = 0.5;
  b.step = 0.25;
  const auto ra = estimate_relevance(linear_probe(table), codes, a);
  const auto rb = estimate_relevance(linear_probe(table), codes, b);
  for (std::size_t k = 0; k < ra.directions.size(); ++k) {
    CHECK(ra.directions[k] == Catch::Approx(rb.directions[k]).margin(1e-12));
  }
}

TEST_CASE("central differences are exact for a quadratic probe at any step") {
  // probe(s) = A^T s + (s_0^2) e_0 ; the averaged central difference is
  // exact for quadratics, so every step gives the same direction.
  Rng rng(84);
  const Tensor table = testing::random_tensor(rng, {3, 4});
  const auto lin = linear_probe(table);
  const LatentProbe quad = [&](std::span<const double> s) {
    auto out = lin(s);
    out[0] += s[0] * s[0];
    return out;
  };
  const auto codes = base_codes(rng, 6, 3);
  double mean0 = 0;
  for (const auto& c : codes) mean0 += c[0] / 6.0;
  std::vector<double> want(table.row(0).begin(), table.row(0).end());
  want[0] += 2.0 * mean0;
  want = normalized(want);
  for (double step : {1.0, 0.5, 0.25}) {
    RelevanceOptions o;
    o.step = step;
    const auto r = estimate_relevance(quad, codes, o);
    for (std::size_t j = 0; j < 4; ++j) CHECK(r.directions.at(0, j) == Catch::Approx(want[j]).margin(1e-9));
  }
}

TEST_CASE("tau bounds select everything or nothing") {
  Rng rng(85);
  const Tensor table = testing::random_tensor(rng, {6, 5});
  const auto r = estimate_relevance(linear_probe(table), base_codes(rng, 2, 6));
  const auto dt = testing::random_vector(rng, 5);
  CHECK(build_mask(r, dt, 0.0).kept() == 6);
  CHECK(build_mask(r, dt, 1.0 + 1e-9).kept() == 0);
  REQUIRE_THROWS_AS(build_mask(r, dt, -0.1), Error);
  REQUIRE_THROWS_AS(build_mask(r, std::vector<double>(5, 0.0), 0.5), Error);
  REQUIRE_THROWS_AS(build_mask(r, std::vector<double>(4, 1.0), 0.5), Error);
}

TEST_CASE("a text direction equal to one row scores that channel 1") {
  Rng rng(86);
  const Tensor table = testing::random_tensor(rng, {5, 8});
  const auto r = estimate_relevance(linear_probe(table), base_codes(rng, 2, 5));
  for (std::size_t k = 0; k < 5; ++k) {
    std::vector<double> dt(table.row(k).begin(), table.row(k).end());
    for (double& v : dt) v *= -3.0;  // sign and scale do not matter
    const auto m = build_mask(r, dt, 0.999);
    CHECK(m.scores[k] == Catch::Approx(1.0).margin(1e-12));
    CHECK(m.keep[k]);
  }
}

TEST_CASE("raising tau never adds channels") {
  Rng rng(87);
  const Tensor table = testing::random_tensor(rng, {12, 6});
  const auto r = estimate_relevance(linear_probe(table), base_codes(rng, 3, 12));
  for (int trial = 0; trial < 20; ++trial) {
    const auto dt = testing::random_vector(rng, 6);
    std::vector<bool> prev(12, true);
    for (double tau = 0.0; tau <= 1.0; tau += 0.05) {
      const auto m = build_mask(r, dt, tau);
      for (std::size_t c = 0; c < 12; ++c) {
        if (m.keep[c]) CHECK(prev[c]);
        CHECK(m.keep[c] == (m.scores[c] >= tau));
      }
      prev = m.keep;
    }
  }
}

TEST_CASE("scores ignore the scale of the text direction") {
  Rng rng(88);
  const Tensor table = testing::random_tensor(rng, {7, 5});
  const auto r = estimate_relevance(linear_probe(table), base_codes(rng, 2, 7));
  const auto dt = testing::random_vector(rng, 5);
  auto dt2 = dt;
  for (double& v : dt2) v *= 1e3;
  const auto a = build_mask(r, dt, 0.3);
  const auto b = build_mask(r, dt2, 0.3);
  for (std::size_t c = 0; c < 7; ++c) CHECK(a.scores[c] == Catch::Approx(b.scores[c]).margin(1e-12));
}

TEST_CASE("relevance checkpoints round-trip") {
  testing::TempDir dir("relevance");
  Rng rng(89);
  Tensor table = testing::random_tensor(rng, {4, 3});
  for (double& v : table.row(1)) v = 0.0;
  const auto r = estimate_relevance(linear_probe(table), base_codes(rng, 2, 4));
  write_checkpoint(relevance_checkpoint(r, {{"tool", "test"}}), dir / "r.dlck");
  const auto ck = read_checkpoint(dir / "r.dlck");
  CHECK(ck.meta.at("tool") == "test");
  const auto back = relevance_from(ck);
  CHECK(back.null == r.null);
  for (std::size_t k = 0; k < r.directions.size(); ++k) {
    CHECK(back.directions[k] == testing::f32(r.directions[k]));
  }
  Checkpoint other = ck;
  other.kind = "mapper";
  REQUIRE_THROWS_AS(relevance_from(other), Error);
}

TEST_CASE("relevance estimation rejects bad arguments") {
  const auto probe = linear_probe(Tensor({2, 3}, std::vector<double>{1, 0, 0, 0, 1, 0}));
  RelevanceOptions o;
  o.step = 0.0;
  REQUIRE_THROWS_AS(estimate_relevance(probe, {{0.0, 0.0}}, o), Error);
  REQUIRE_THROWS_AS(estimate_relevance(probe, {}), Error);
  REQUIRE_THROWS_AS(estimate_relevance(probe, {{0.0, 0.0, 0.0}}), Error);
  REQUIRE_THROWS_AS(estimate_relevance(probe, {{0.0, 0.0}, {0.0}}), Error);
}

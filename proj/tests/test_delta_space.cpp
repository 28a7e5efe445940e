#include <catch_amalgamated.hpp>

#include <fstream>

#include "deltaedit/delta_space.hpp"
#include "deltaedit/synthetic.hpp"
#include "support/fixtures.hpp"

using namespace deltaedit;
using testing::TempDir;

TEST_CASE("make_delta on hand-computable inputs") {
  const auto same = make_delta(std::vector<double>{3.0, 4.0}, std::vector<double>{3.0, 4.0});
  CHECK(same.delta == std::vector<double>{0.0, 0.0});
  CHECK(same.anchor[0] == Catch::Approx(0.6));

  const auto c = make_delta(std::vector<double>{1.0, 0.0}, std::vector<double>{0.0, 1.0});
  CHECK(c.anchor == std::vector<double>{1.0, 0.0});
  CHECK(c.delta == std::vector<double>{-1.0, 1.0});

  REQUIRE_THROWS_AS(make_delta(std::vector<double>{0.0, 0.0}, std::vector<double>{1.0, 0.0}), Error);
  REQUIRE_THROWS_AS(make_delta(std::vector<double>{1.0}, std::vector<double>{1.0, 0.0}), Error);
}

TEST_CASE("make_delta is scale invariant and antisymmetric") {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = testing::random_vector(rng, 6);
    const auto b = testing::random_vector(rng, 6);
    const auto c = make_delta(a, b);
    CHECK(l2_norm(c.anchor) == Catch::Approx(1.0).margin(1e-9));

    auto a2 = a, b2 = b;
    const double ka = rng.uniform(0.1, 10), kb = rng.uniform(0.1, 10);
    for (double& v : a2) v *= ka;
    for (double& v : b2) v *= kb;
    const auto scaled = make_delta(a2, b2);
    const auto pre = make_delta(normalized(a), normalized(b));
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(scaled.delta[j] == Catch::Approx(c.delta[j]).margin(1e-12));
      CHECK(pre.delta[j] == Catch::Approx(c.delta[j]).margin(1e-12));
    }

    const auto back = make_delta(b, a);
    for (std::size_t j = 0; j < 6; ++j) CHECK(back.delta[j] == -c.delta[j]);
  }
}

TEST_CASE("alignment report on identical and negated lists") {
  Rng rng(22);
  std::vector<std::vector<double>> a, neg;
  for (int k = 0; k < 20; ++k) {
    a.push_back(testing::random_vector(rng, 5));
    neg.push_back(a.back());
    for (double& v : neg.back()) v = -v;
  }
  const auto same = alignment_report(a, a);
  CHECK(same.mean_cosine == Catch::Approx(1.0).margin(1e-12));
  CHECK(same.modality_gap == Catch::Approx(0.0).margin(1e-12));
  CHECK(same.count == 20);
  const auto opp = alignment_report(a, neg);
  CHECK(opp.mean_cosine == Catch::Approx(-1.0).margin(1e-12));
  CHECK(opp.modality_gap >= 0.0);
  REQUIRE_THROWS_AS(alignment_report({}, {}), Error);
  REQUIRE_THROWS_AS(alignment_report(a, std::vector<std::vector<double>>(a.begin(), a.end() - 1)), Error);
}

TEST_CASE("alignment report is invariant to rescaling any input") {
  Rng rng(23);
  std::vector<std::vector<double>> a, b;
  for (int k = 0; k < 15; ++k) {
    a.push_back(testing::random_vector(rng, 4));
    b.push_back(testing::random_vector(rng, 4));
  }
  const auto base = alignment_report(a, b);
  auto a2 = a, b2 = b;
  for (auto& v : a2) {
    const double k = std::exp2(static_cast<double>(rng.index(9)) - 4.0);  // exact powers of two
    for (double& x : v) x *= k;
  }
  for (auto& v : b2) {
    const double k = std::exp2(static_cast<double>(rng.index(9)) - 4.0);
    for (double& x : v) x *= k;
  }
  const auto scaled = alignment_report(a2, b2);
  CHECK(scaled.mean_cosine == base.mean_cosine);
  CHECK(scaled.median_cosine == base.median_cosine);
  CHECK(scaled.std_cosine == base.std_cosine);
  CHECK(scaled.modality_gap == base.modality_gap);

  // arbitrary factors agree to rounding
  for (auto& v : a2) for (double& x : v) x *= 3.7;
  const auto loose = alignment_report(a2, b2);
  CHECK(loose.mean_cosine == Catch::Approx(base.mean_cosine).margin(1e-14));
  CHECK(loose.modality_gap == Catch::Approx(base.modality_gap).margin(1e-14));
}

TEST_CASE("synthetic world separates delta space from raw space") {
  SyntheticConfig cfg;
  cfg.records = 2000;
  const auto w = make_synthetic_world(cfg, 31);
  const auto r = analyze_alignment(w.bundle, w.texts, 4000, 32);

  // image = u + g_img + n, text = u + g_txt + n' with |u|^2 ~ 1 and the
  // offsets orthogonal: cos ~ 1 / (1 + offset^2 + noise^2).
  const double off2 = cfg.modality_offset * cfg.modality_offset;
  const double raw_expected = 1.0 / (1.0 + off2 + cfg.noise * cfg.noise);
  CHECK(r.raw.mean_cosine == Catch::Approx(raw_expected).margin(0.03));
  // offsets cancel in the delta; only the noise remains against |u_b - u_a|^2 ~ 2
  CHECK(r.delta.mean_cosine > 0.9);
  CHECK(r.delta.mean_cosine - r.raw.mean_cosine > 0.9 - raw_expected - 0.03);
  // centroids of normalized sets sit off2-apart scaled by the norm ~ sqrt(1 + off2)
  const double gap_expected = std::sqrt(2.0 * off2) / std::sqrt(1.0 + off2);
  CHECK(r.raw.modality_gap == Catch::Approx(gap_expected).margin(0.05));
}

TEST_CASE("csv export writes a header and one line per embedding") {
  TempDir dir("csv");
  export_csv({{1.0, 2.0}, {3.5, -4.25}}, {"a", "b,c"}, dir / "x.csv");
  std::ifstream in(dir / "x.csv");
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == "label,dim_0,dim_1");
  CHECK(lines[1] == "a,1,2");
  CHECK(lines[2] == "\"b,c\",3.5,-4.25");
  const auto t = read_csv(dir / "x.csv");
  CHECK(t.labels == std::vector<std::string>{"a", "b,c"});
}

TEST_CASE("csv round trip reproduces values to 1e-7") {
  TempDir dir("csv-rt");
  Rng rng(24);
  std::vector<std::vector<double>> rows;
  std::vector<std::string> labels;
  for (int k = 0; k < 30; ++k) {
    rows.push_back(testing::random_vector(rng, 7, std::exp(rng.uniform(-5, 5))));
    labels.push_back("r\"" + std::to_string(k));
  }
  export_csv(rows, labels, dir / "r.csv");
  const auto t = read_csv(dir / "r.csv");
  CHECK(t.labels == labels);
  REQUIRE(t.rows.size() == rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    for (std::size_t j = 0; j < 7; ++j) {
      CHECK(std::abs(t.rows[k][j] - rows[k][j]) <= 1e-7 * std::max(1.0, std::abs(rows[k][j])));
    }
  }
}

TEST_CASE("exported bundle deltas match make_delta row for row") {
  TempDir dir("csv-delta");
  SyntheticConfig cfg;
  cfg.records = 50;
  cfg.clip_dim = 8;
  cfg.partition = {2, 4, 6};
  const auto w = make_synthetic_world(cfg, 33);
  const auto pairs = sample_pairs(w.bundle, 40, 34);
  std::vector<std::vector<double>> deltas;
  std::vector<std::string> labels;
  for (const auto& [i, j] : pairs) {
    deltas.push_back(make_delta(w.bundle.records[i].clip, w.bundle.records[j].clip).delta);
    labels.push_back(std::to_string(i) + "->" + std::to_string(j));
  }
  export_csv(deltas, labels, dir / "d.csv");
  const auto t = read_csv(dir / "d.csv");
  REQUIRE(t.rows.size() == pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto& a = w.bundle.records[pairs[k].first].clip;
    const auto& b = w.bundle.records[pairs[k].second].clip;
    const double na = std::sqrt(std::inner_product(a.begin(), a.end(), a.begin(), 0.0));
    const double nb = std::sqrt(std::inner_product(b.begin(), b.end(), b.begin(), 0.0));
    for (std::size_t j = 0; j < a.size(); ++j) {
      CHECK(t.rows[k][j] == Catch::Approx(b[j] / nb - a[j] / na).margin(1e-7));
    }
  }
}

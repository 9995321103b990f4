#include <cmath>
#include <numeric>

#include "doctest.h"

#include "divdis/error.hpp"
#include "divdis/metrics.hpp"
#include "divdis/rng.hpp"
#include "support.hpp"

using namespace divdis;
using divdis::testing::linear_heads;

TEST_CASE("evaluate on the quadrant target") {
  const TaskBundle b = gen_quadrants2d(SplitSizes{16, 16, 2048}, 1);
  // Head 0 is the target rule, head 1 the x2 shortcut.
  const EvalReport r = evaluate(linear_heads({{1, 0}, {0, -1}}), b.target_eval, 1, 4);
  CHECK(r.heads[0].average == 1.0);
  CHECK(r.heads[0].worst_group == 1.0);
  CHECK(r.heads[1].average == doctest::Approx(0.5).epsilon(0.05));
  CHECK(r.heads[1].worst_group == 0.0);
  CHECK(r.heads[1].group_accuracy.at(1) == 1.0);
  CHECK(r.heads[1].group_accuracy.at(3) == 1.0);
  CHECK(r.heads[1].group_accuracy.at(0) == 0.0);
  CHECK(r.heads[1].group_accuracy.at(2) == 0.0);
  CHECK(r.chosen_head().average == r.heads[1].average);
  CHECK(r.best_head() == 0);
  CHECK(r.warnings.empty());
}

TEST_CASE("single group, missing groups, ties and errors") {
  LabeledSet s{Matrix::matrix(4, 1, {1, 2, 3, 4}), {0, 1, 1, 0}, {0, 0, 0, 0}};
  const std::vector<std::vector<int>> preds{{0, 1, 0, 0}, {0, 1, 0, 0}};
  const EvalReport r = evaluate_predictions(preds, s, std::nullopt, 3);
  CHECK(r.heads[0].worst_group == r.heads[0].average);
  CHECK(r.heads[0].average == 0.75);
  CHECK(r.best_head() == 0);
  CHECK(r.warnings.size() == 2);
  CHECK(r.warnings[0].find("group 1") != std::string::npos);
  CHECK(!r.chosen);

  CHECK_THROWS_AS(evaluate_predictions(preds, s, 2), Error);
  CHECK_THROWS_AS(evaluate_predictions(std::vector<std::vector<int>>{{0}}, s), Error);
  LabeledSet empty{Matrix::matrix(0, 1, {}), {}, {}};
  CHECK_THROWS_AS(evaluate_predictions(std::vector<std::vector<int>>{{}}, empty), Error);
}

TEST_CASE("worst group never exceeds the average and row order does not matter") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.index(60);
    std::vector<int> y(n), g(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng.index(2));
      g[i] = static_cast<int>(rng.index(4));
      p[i] = static_cast<int>(rng.index(2));
    }
    const LabeledSet s{Matrix::matrix(n, 1, std::vector<double>(n, 0.0)), y, g};
    const EvalReport r = evaluate_predictions(std::vector<std::vector<int>>{p}, s);
    CHECK(r.heads[0].worst_group <= r.heads[0].average + 1e-15);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
    std::vector<int> yp(n), gp(n), pp(n);
    for (std::size_t i = 0; i < n; ++i) {
      yp[i] = y[perm[i]];
      gp[i] = g[perm[i]];
      pp[i] = p[perm[i]];
    }
    const LabeledSet sp{s.x, yp, gp};
    const EvalReport rp = evaluate_predictions(std::vector<std::vector<int>>{pp}, sp);
    CHECK(rp.heads[0].average == r.heads[0].average);
    CHECK(rp.heads[0].group_accuracy == r.heads[0].group_accuracy);
  }
}

TEST_CASE("boundary coverage") {
  SUBCASE("one diagonal head covers a 10 degree window") {
    const CoverageReport c = boundary_coverage(linear_heads({{1, -1}}, 3));
    REQUIRE(c.angles.size() == 1);
    CHECK(*c.angles[0] == doctest::Approx(45.0));
    CHECK(c.covered_degrees == 10.0);
    CHECK(c.fraction == doctest::Approx(10.0 / 90.0));
  }
  SUBCASE("the two axes and the diagonal") {
    const CoverageReport c = boundary_coverage(linear_heads({{1, 0}, {0, -1}, {1, -1}}));
    CHECK(*c.angles[0] == doctest::Approx(90.0));
    CHECK(*c.angles[1] == doctest::Approx(0.0));
    CHECK(c.covered_degrees == 20.0);  // 5 + 5 at the sector edges, 10 in the middle
  }
  SUBCASE("positive rescaling leaves angles alone") {
    const auto a = boundary_coverage(linear_heads({{0.3, -0.7}, {2, 1}}, 1));
    const auto b = boundary_coverage(linear_heads({{0.3, -0.7}, {2, 1}}, 250));
    CHECK(*a.angles[0] == doctest::Approx(*b.angles[0]).epsilon(1e-12));
    CHECK(*a.angles[1] == doctest::Approx(*b.angles[1]).epsilon(1e-12));
  }
  SUBCASE("zero heads are skipped with a note") {
    const CoverageReport c = boundary_coverage(linear_heads({{0, 0}, {1, -1}}));
    CHECK(!c.angles[0]);
    CHECK(c.notes.size() == 1);
    CHECK(c.covered_degrees == 10.0);
  }
  SUBCASE("wrap-around near 180 counts toward the low end") {
    const std::vector<double> angles{178.0};
    CHECK(angle_coverage(angles).covered_degrees == 3.0);
  }
  CHECK_THROWS_AS(boundary_coverage(MultiHeadClassifier::init(2, std::vector<std::size_t>{4}, 2, 2, InitSpec{})), Error);
}

TEST_CASE("diversity statistic") {
  const std::vector<std::vector<double>> same{{0.2, 0.3, 0.5}, {0.2, 0.3, 0.5}};
  const std::vector<std::vector<double>> two{{1, 0, 0}, {0, 1, 0}};
  const std::vector<std::vector<double>> three{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  CHECK(diversity_stat(same) == 0.0);
  CHECK(diversity_stat(two) == 2.0);
  CHECK(diversity_stat(three) == 2.0);
  CHECK_THROWS_AS(diversity_stat(std::vector<std::vector<double>>{{1, 0}}), Error);
  CHECK_THROWS_AS(diversity_stat(std::vector<std::vector<double>>{{1, 0}, {1}}), Error);
}

TEST_CASE("spearman") {
  const std::vector<double> a{1, 2, 3, 4, 5}, b{10, 20, 30, 40, 1000}, c{5, 4, 3, 2, 1};
  CHECK(spearman(a, b) == doctest::Approx(1.0));
  CHECK(spearman(a, c) == doctest::Approx(-1.0));
  const std::vector<double> tied{1, 1, 2, 2, 3};
  // Average ranks 1.5,1.5,3.5,3.5,5 against 1..5.
  CHECK(spearman(a, tied) == doctest::Approx(0.9486832980505138));
  CHECK(std::isnan(spearman(a, std::vector<double>{2, 2, 2, 2, 2})));
  CHECK_THROWS_AS(spearman(a, std::vector<double>{1}), Error);
}

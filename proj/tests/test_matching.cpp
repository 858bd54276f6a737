#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>

#include "hierdet/matching.hpp"
#include "hierdet/rng.hpp"
#include "hierdet/taxonomy.hpp"
#include "testutil.hpp"

using namespace hierdet;

namespace {

Box from_corners(double x1, double y1, double x2, double y2) {
  return Box{(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1};
}

Box random_box(Rng& rng) {
  return Box{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8),
             rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.4)};
}

}  // namespace

TEST_CASE("giou of identical boxes is one") {
  Box b{0.5, 0.5, 0.2, 0.3};
  CHECK(giou(b, b) == doctest::Approx(1.0));
  CHECK(iou(b, b) == doctest::Approx(1.0));
}

TEST_CASE("worked giou for disjoint boxes") {
  Box a = from_corners(0, 0, 1, 1);
  Box b = from_corners(2, 2, 3, 3);
  // IoU 0; enclosing box area 9, union 2: giou = -(9 - 2) / 9.
  CHECK(giou(a, b) == doctest::Approx(-7.0 / 9.0).epsilon(1e-12));
}

TEST_CASE("giou is symmetric") {
  Rng rng(21);
  for (int t = 0; t < 100; ++t) {
    Box a = random_box(rng), b = random_box(rng);
    CHECK(giou(a, b) == doctest::Approx(giou(b, a)).epsilon(1e-12));
  }
}

TEST_CASE("giou never exceeds iou and matches it under containment") {
  Rng rng(22);
  for (int t = 0; t < 100; ++t) {
    Box a = random_box(rng), b = random_box(rng);
    CHECK(giou(a, b) <= iou(a, b) + 1e-12);
    CHECK(giou(a, b) >= -1.0 - 1e-12);
    CHECK(giou(a, b) <= 1.0 + 1e-12);
  }
  // One box containing the other: enclosing box equals the outer box.
  Box outer{0.5, 0.5, 0.6, 0.6};
  Box inner{0.5, 0.5, 0.2, 0.2};
  CHECK(giou(outer, inner) == doctest::Approx(iou(outer, inner)).epsilon(1e-12));
}

TEST_CASE("degenerate enclosing box yields zero with a flag") {
  Box pt{0.5, 0.5, 0.0, 0.0};
  GiouGrad g = giou_grad(pt, pt);
  CHECK(g.degenerate);
  CHECK(g.value == 0.0);
}

TEST_CASE("giou gradient matches finite differences") {
  Rng rng(23);
  for (int t = 0; t < 100; ++t) {
    Box a = random_box(rng), b = random_box(rng);
    GiouGrad g = giou_grad(a, b);
    double* fields[4] = {&a.cx, &a.cy, &a.w, &a.h};
    for (int k = 0; k < 4; ++k) {
      double fd = testutil::central_diff([&] { return giou(a, b); }, *fields[k]);
      CHECK(testutil::rel_err(g.d_a[k], fd) < 1e-5);
    }
  }
}

TEST_CASE("match cost worked examples") {
  TaxonomyForest forest = parse_taxonomy("P -> a\nP -> b\n");
  NodeId a = forest.id_of("a");

  Matrix act(2, forest.size(), 0.0);
  act(0, a) = 1.0;  // query 0 is a perfect 'a'
  act(1, a) = 0.25;
  Box box{0.5, 0.5, 0.2, 0.2};
  std::vector<Box> qboxes = {box, Box{0.1, 0.1, 0.1, 0.1}};
  std::vector<NodeId> gts = {a};
  std::vector<Box> gboxes = {box};

  SUBCASE("perfect query costs zero") {
    Matrix cost = match_cost(act, qboxes, gts, gboxes, forest);
    CHECK(cost(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(cost(0, 1) > 0.0);
  }
  SUBCASE("zero coefficients give a zero matrix") {
    Matrix cost = match_cost(act, qboxes, gts, gboxes, forest,
                             MatchCoeffs{0.0, 0.0, 0.0});
    for (std::size_t i = 0; i < cost.size(); ++i) CHECK(cost.data()[i] == 0.0);
  }
  SUBCASE("2x2 instance matches hand arithmetic") {
    Matrix act2(2, forest.size(), 0.0);
    act2(0, a) = 0.5;
    act2(1, a) = 0.75;
    std::vector<Box> qb = {box, box};
    Matrix cost = match_cost(act2, qb, gts, gboxes, forest,
                             MatchCoeffs{2.0, 5.0, 2.0});
    CHECK(cost(0, 0) == doctest::Approx(2.0 * 0.5).epsilon(1e-12));
    CHECK(cost(0, 1) == doctest::Approx(2.0 * 0.25).epsilon(1e-12));
  }
  SUBCASE("non-leaf ground truth is rejected") {
    std::vector<NodeId> bad = {forest.id_of("P")};
    CHECK_THROWS_AS(match_cost(act, qboxes, bad, gboxes, forest),
                    std::invalid_argument);
  }
}

TEST_CASE("hungarian picks the diagonal on an identity-favoring matrix") {
  Matrix cost(3, 3, 1.0);
  for (int i = 0; i < 3; ++i) cost(i, i) = 0.0;
  MatchResult m = hungarian(cost);
  REQUIRE(m.pairs.size() == 3);
  for (auto& [g, q] : m.pairs) CHECK(g == q);
  CHECK(m.cost == doctest::Approx(0.0));
}

TEST_CASE("hungarian equals exhaustive enumeration on random instances") {
  Rng rng(606);
  for (int t = 0; t < 200; ++t) {
    int rows = rng.uniform_int(1, 7);
    int cols = rng.uniform_int(rows, 7);
    Matrix cost(rows, cols);
    for (std::size_t i = 0; i < cost.size(); ++i)
      cost.data()[i] = rng.uniform(-5.0, 5.0);
    MatchResult m = hungarian(cost);
    CHECK(m.pairs.size() == static_cast<std::size_t>(rows));
    CHECK(m.cost ==
          doctest::Approx(testutil::brute_force_assignment(cost)).epsilon(1e-9));
    // Assignment is injective in both coordinates.
    std::vector<char> gt_seen(rows, 0), q_seen(cols, 0);
    for (auto& [g, q] : m.pairs) {
      CHECK(!gt_seen[g]);
      CHECK(!q_seen[q]);
      gt_seen[g] = q_seen[q] = 1;
    }
  }
}

TEST_CASE("assignment is invariant to constant shifts and positive scaling") {
  Rng rng(607);
  for (int t = 0; t < 50; ++t) {
    int rows = rng.uniform_int(2, 5);
    int cols = rng.uniform_int(rows, 7);
    Matrix cost(rows, cols);
    for (std::size_t i = 0; i < cost.size(); ++i)
      cost.data()[i] = rng.uniform_int(-8, 8);  // exact values
    MatchResult base = hungarian(cost);

    Matrix shifted = cost;
    for (std::size_t i = 0; i < shifted.size(); ++i) shifted.data()[i] += 3.0;
    CHECK(hungarian(shifted).pairs == base.pairs);

    Matrix scaled = cost;
    for (std::size_t i = 0; i < scaled.size(); ++i) scaled.data()[i] *= 2.0;
    CHECK(hungarian(scaled).pairs == base.pairs);
  }
}

TEST_CASE("hungarian input validation") {
  Matrix wide(3, 2, 0.0);
  CHECK_THROWS_AS(hungarian(wide), std::invalid_argument);
  Matrix bad(2, 2, 0.0);
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(hungarian(bad), std::invalid_argument);
  Matrix empty(0, 4, 0.0);
  CHECK(hungarian(empty).pairs.empty());
}

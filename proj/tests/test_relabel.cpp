#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "hierdet/relabel.hpp"
#include "hierdet/rng.hpp"

using namespace hierdet;

namespace {

// 2 non-leaf nodes (P, Q) + 3 leaves.
TaxonomyForest make_forest() {
  return parse_taxonomy("P -> a\nP -> b\nQ -> c\n");
}

Matrix activations_with_nonleaf_scores(const TaxonomyForest& forest,
                                       const std::vector<double>& scores) {
  // Sets both non-leaf columns so the max equals the requested score.
  Matrix m(scores.size(), forest.size(), 0.05);
  for (std::size_t q = 0; q < scores.size(); ++q) {
    m(q, 0) = scores[q];
    m(q, 1) = scores[q] / 2;
  }
  return m;
}

MatchResult matches_for(const std::vector<int>& queries) {
  MatchResult m;
  for (std::size_t g = 0; g < queries.size(); ++g)
    m.pairs.emplace_back(static_cast<int>(g), queries[g]);
  return m;
}

}  // namespace

TEST_CASE("nonleaf score takes the max over non-leaf columns") {
  TaxonomyForest forest = make_forest();
  std::vector<double> row(forest.size(), 0.1);
  row[0] = 0.1;
  row[1] = 0.7;
  row[forest.leaf_begin] = 0.99;  // leaf columns must be ignored
  CHECK(nonleaf_score(row.data(), forest) == doctest::Approx(0.7));
  CHECK(nonleaf_score(row.data(), forest, NonleafAggregate::mean) ==
        doctest::Approx(0.4));
}

TEST_CASE("taxonomy without non-leaf nodes scores zero") {
  TaxonomyForest isolated = parse_taxonomy("a\nb\n");
  std::vector<double> row = {0.9, 0.8};
  CHECK(nonleaf_score(row.data(), isolated) == 0.0);
}

TEST_CASE("relabel promotes unmatched queries above the matched minimum") {
  TaxonomyForest forest = make_forest();
  // Queries 0,1 matched with scores 0.6, 0.8; unmatched 2,3 score 0.7, 0.3.
  Matrix act = activations_with_nonleaf_scores(forest, {0.6, 0.8, 0.7, 0.3});
  RelabelOutcome out = relabel(act, matches_for({0, 1}), forest);
  REQUIRE(out.threshold.has_value());
  CHECK(*out.threshold == doctest::Approx(0.6));
  CHECK(out.relabeled == std::vector<int>{2});
}

TEST_CASE("no matched queries means no relabeling") {
  TaxonomyForest forest = make_forest();
  Matrix act = activations_with_nonleaf_scores(forest, {0.9, 0.8});
  RelabelOutcome out = relabel(act, MatchResult{}, forest);
  CHECK_FALSE(out.threshold.has_value());
  CHECK(out.relabeled.empty());
}

TEST_CASE("a score exactly at the threshold is not relabeled") {
  TaxonomyForest forest = make_forest();
  Matrix act = activations_with_nonleaf_scores(forest, {0.6, 0.6});
  RelabelOutcome out = relabel(act, matches_for({0}), forest);
  CHECK(*out.threshold == doctest::Approx(0.6));
  CHECK(out.relabeled.empty());  // strict inequality
}

TEST_CASE("raising a matched score can only shrink the relabeled set") {
  TaxonomyForest forest = make_forest();
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> scores(6);
    for (double& s : scores) s = rng.uniform(0.0, 1.0);
    Matrix act = activations_with_nonleaf_scores(forest, scores);
    MatchResult m = matches_for({0, 1});
    std::size_t before = relabel(act, m, forest).relabeled.size();

    std::vector<double> raised = scores;
    raised[0] = std::min(1.0, raised[0] + rng.uniform(0.0, 0.5));
    Matrix act2 = activations_with_nonleaf_scores(forest, raised);
    std::size_t after = relabel(act2, m, forest).relabeled.size();
    CHECK(after <= before);
  }
}

TEST_CASE("equal-budget target splits over the positive set") {
  SUBCASE("matched only") {
    ObjectnessTarget t = objectness_target({2, 5}, {}, 6);
    CHECK(t.q == std::vector<double>{0, 0, 0.5, 0, 0, 0.5});
    CHECK_FALSE(t.degenerate());
  }
  SUBCASE("relabeled queries share the same budget") {
    ObjectnessTarget t = objectness_target({2, 5}, {0}, 6);
    CHECK(t.q[0] == doctest::Approx(1.0 / 3));
    CHECK(t.q[2] == doctest::Approx(1.0 / 3));
    CHECK(t.q[5] == doctest::Approx(1.0 / 3));
    CHECK(t.positive_set == std::vector<int>{0, 2, 5});
  }
  SUBCASE("empty sets flag the degenerate target") {
    ObjectnessTarget t = objectness_target({}, {}, 4);
    CHECK(t.degenerate());
    for (double v : t.q) CHECK(v == 0.0);
  }
  SUBCASE("overlap is rejected") {
    CHECK_THROWS_AS(objectness_target({1, 2}, {2}, 4), std::invalid_argument);
  }
  SUBCASE("out-of-range query is rejected") {
    CHECK_THROWS_AS(objectness_target({5}, {}, 4), std::invalid_argument);
  }
}

TEST_CASE("relabeling only grows the positive set") {
  TaxonomyForest forest = make_forest();
  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> scores(8);
    for (double& s : scores) s = rng.uniform(0.0, 1.0);
    Matrix act = activations_with_nonleaf_scores(forest, scores);
    MatchResult m = matches_for({1, 4});
    RelabelOutcome out = relabel(act, m, forest);

    ObjectnessTarget with = objectness_target(m.matched_queries(), out.relabeled, 8);
    ObjectnessTarget without = objectness_target(m.matched_queries(), {}, 8);
    for (int q : without.positive_set) {
      CHECK(std::find(with.positive_set.begin(), with.positive_set.end(), q) !=
            with.positive_set.end());
    }
    // Disabling relabeling reproduces the matched-only equal split.
    CHECK(without.q[1] == doctest::Approx(0.5));
    CHECK(without.q[4] == doctest::Approx(0.5));
  }
}

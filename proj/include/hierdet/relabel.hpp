#pragma once

#include <optional>
#include <vector>

#include "hierdet/matching.hpp"
#include "hierdet/matrix.hpp"
#include "hierdet/sparsemax.hpp"
#include "hierdet/taxonomy.hpp"

namespace hierdet {

// Aggregate used to summarize a query's non-leaf activations into its
// "looks like some broad category" score.
enum class NonleafAggregate { max, mean };

// Score over the non-leaf columns of one activation row; 0 when the
// taxonomy has no non-leaf nodes.
double nonleaf_score(const double* activation_row, const TaxonomyForest& forest,
                     NonleafAggregate agg = NonleafAggregate::max);

struct RelabelOutcome {
  // Unset when there are no matched queries (no threshold can be formed,
  // nothing is relabeled).
  std::optional<double> threshold;
  std::vector<int> relabeled;  // sorted query indices, disjoint from matched
  std::vector<double> per_query_nonleaf_score;
};

// Promotes unmatched queries whose non-leaf score strictly exceeds the
// minimum non-leaf score among matched queries.
RelabelOutcome relabel(const Matrix& activations, const MatchResult& matches,
                       const TaxonomyForest& forest,
                       NonleafAggregate agg = NonleafAggregate::max);

// Equal probability budget over matched + relabeled queries. Throws
// std::invalid_argument when the two sets overlap.
ObjectnessTarget objectness_target(const std::vector<int>& matched,
                                   const std::vector<int>& relabeled,
                                   int num_queries);

}  // namespace hierdet

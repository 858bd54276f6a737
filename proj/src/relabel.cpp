#include "hierdet/relabel.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "hierdet/kernels.hpp"

namespace hierdet {

double nonleaf_score(const double* activation_row,
                     const TaxonomyForest& forest, NonleafAggregate agg) {
  const std::size_t n = static_cast<std::size_t>(forest.num_nonleaf());
  if (n == 0) return 0.0;
  // Non-leaf nodes occupy the contiguous block [0, leaf_begin).
  if (agg == NonleafAggregate::max)
    return kernels::max_value(activation_row, n);
  return kernels::sum(activation_row, n) / static_cast<double>(n);
}

RelabelOutcome relabel(const Matrix& activations, const MatchResult& matches,
                       const TaxonomyForest& forest, NonleafAggregate agg) {
  const int num_queries = static_cast<int>(activations.rows());
  RelabelOutcome out;
  out.per_query_nonleaf_score.resize(num_queries);
  for (int q = 0; q < num_queries; ++q)
    out.per_query_nonleaf_score[q] = nonleaf_score(activations.row(q), forest, agg);

  const std::vector<int> matched = matches.matched_queries();
  if (matched.empty()) return out;  // min over no matches is undefined

  double threshold = out.per_query_nonleaf_score[matched.front()];
  for (int q : matched)
    threshold = std::min(threshold, out.per_query_nonleaf_score[q]);
  out.threshold = threshold;

  const std::set<int> matched_set(matched.begin(), matched.end());
  for (int q = 0; q < num_queries; ++q) {
    if (matched_set.count(q)) continue;
    if (out.per_query_nonleaf_score[q] > threshold) out.relabeled.push_back(q);
  }
  return out;
}

ObjectnessTarget objectness_target(const std::vector<int>& matched,
                                   const std::vector<int>& relabeled,
                                   int num_queries) {
  std::set<int> positives(matched.begin(), matched.end());
  for (int q : relabeled)
    if (!positives.insert(q).second)
      throw std::invalid_argument(
          "objectness_target: relabeled query overlaps matched set: " +
          std::to_string(q));
  for (int q : positives)
    if (q < 0 || q >= num_queries)
      throw std::invalid_argument("objectness_target: query index out of range");

  ObjectnessTarget target;
  target.q.assign(num_queries, 0.0);
  target.positive_set.assign(positives.begin(), positives.end());
  if (!target.positive_set.empty()) {
    const double share = 1.0 / static_cast<double>(target.positive_set.size());
    for (int q : target.positive_set) target.q[q] = share;
  }
  return target;
}

}  // namespace hierdet

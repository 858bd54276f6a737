#pragma once

#include <optional>
#include <utility>
#include <vector>

namespace hierdet {

// Euclidean projection of a logit vector onto the probability simplex.
struct SparseProjection {
  std::vector<double> probabilities;  // sums to 1, entries >= 0
  std::vector<int> support;           // indices with positive probability
  double tau = 0.0;                   // threshold: p_i = max(z_i - tau, 0)
};

// Equal-budget target distribution over queries. `q` is 1/|positive_set| on
// the positive set and 0 elsewhere; an empty positive set leaves q all-zero
// and the target flagged degenerate (no objectness loss for that image).
struct ObjectnessTarget {
  std::vector<double> q;
  std::vector<int> positive_set;  // sorted, unique
  bool degenerate() const { return positive_set.empty(); }
};

// Exact sort-based projection, O(Q log Q). Throws std::invalid_argument on
// an empty vector or non-finite entries.
SparseProjection sparsemax(const std::vector<double>& logits);

// Sparsemax loss against an equal-budget target:
//   -q.z + 1/2 sum_{j in S(z)} (z_j^2 - tau^2) + 1/2 |q|^2
// Nonnegative; zero exactly when sparsemax(z) = q. Returns nullopt for a
// degenerate (empty positive set) target.
std::optional<double> sparsemax_loss(const std::vector<double>& logits,
                                     const ObjectnessTarget& target);

// Analytic gradient of sparsemax_loss: sparsemax(z) - q (entries sum to 0).
std::optional<std::vector<double>> sparsemax_loss_grad(
    const std::vector<double>& logits, const ObjectnessTarget& target);

std::vector<double> softmax(const std::vector<double>& logits);

// Ablation objective: KL(q || softmax(z)) with gradient softmax(z) - q.
std::optional<std::pair<double, std::vector<double>>> softmax_kl_loss(
    const std::vector<double>& logits, const ObjectnessTarget& target);

}  // namespace hierdet

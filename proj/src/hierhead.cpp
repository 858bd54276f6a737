#include "hierdet/hierhead.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hierdet {

namespace {

double clamp_act(double v) {
  return std::clamp(v, kActivationEps, 1.0 - kActivationEps);
}

bool clamp_open(double v) {
  return v > kActivationEps && v < 1.0 - kActivationEps;
}

// Ids ordered by depth; parents always precede children.
std::vector<NodeId> topo_order(const TaxonomyForest& forest) {
  std::vector<NodeId> order(forest.size());
  for (NodeId id = 0; id < forest.size(); ++id) order[id] = id;
  std::stable_sort(order.begin(), order.end(), [&](NodeId a, NodeId b) {
    return forest.nodes[a].depth < forest.nodes[b].depth;
  });
  return order;
}

}  // namespace

Matrix sigmoid_activations(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.size(); ++i)
    out.data()[i] = 1.0 / (1.0 + std::exp(-logits.data()[i]));
  return out;
}

Matrix hier_activation(const Matrix& y, const StrengthParams& alpha,
                       const TaxonomyForest& forest, CouplingMode mode) {
  if (static_cast<int>(y.cols()) != forest.size())
    throw std::invalid_argument("hier_activation: column/node mismatch");
  Matrix out = y;
  const auto order = topo_order(forest);
  for (std::size_t q = 0; q < y.rows(); ++q) {
    for (NodeId c : order) {
      NodeId p = forest.parent[c];
      if (p < 0) continue;  // roots stay as their raw sigmoid
      const double parent_act =
          mode == CouplingMode::raw_parent ? y(q, p) : out(q, p);
      out(q, c) = y(q, c) * std::pow(clamp_act(parent_act), alpha.alpha[c]);
    }
  }
  return out;
}

HierPartials hier_activation_grads(const Matrix& y,
                                   const StrengthParams& alpha,
                                   const TaxonomyForest& forest,
                                   CouplingMode mode) {
  const Matrix out = hier_activation(y, alpha, forest, mode);
  HierPartials partials{Matrix(y.rows(), y.cols(), 1.0),
                        Matrix(y.rows(), y.cols(), 0.0),
                        Matrix(y.rows(), y.cols(), 0.0)};
  for (std::size_t q = 0; q < y.rows(); ++q) {
    for (NodeId c = 0; c < forest.size(); ++c) {
      NodeId p = forest.parent[c];
      if (p < 0) continue;
      const double parent_act =
          mode == CouplingMode::raw_parent ? y(q, p) : out(q, p);
      const double cl = clamp_act(parent_act);
      const double a = alpha.alpha[c];
      const double powered = std::pow(cl, a);
      partials.d_self(q, c) = powered;
      partials.d_parent(q, c) =
          clamp_open(parent_act) ? a * y(q, c) * std::pow(cl, a - 1.0) : 0.0;
      partials.d_alpha(q, c) = y(q, c) * powered * std::log(cl);
    }
  }
  return partials;
}

HierBackward backprop_hier_activation(const Matrix& grad_out, const Matrix& y,
                                      const Matrix& out,
                                      const StrengthParams& alpha,
                                      const TaxonomyForest& forest,
                                      CouplingMode mode) {
  if (grad_out.rows() != y.rows() || grad_out.cols() != y.cols())
    throw std::invalid_argument("backprop_hier_activation: shape mismatch");
  HierBackward back{Matrix(y.rows(), y.cols(), 0.0),
                    std::vector<double>(forest.size(), 0.0)};
  auto order = topo_order(forest);
  std::reverse(order.begin(), order.end());

  // In coupled mode the upstream gradient of a parent accumulates from its
  // children before the parent itself is popped, hence the reverse
  // topological sweep over a working copy.
  Matrix gtilde = grad_out;
  for (std::size_t q = 0; q < y.rows(); ++q) {
    for (NodeId c : order) {
      const double g = gtilde(q, c);
      NodeId p = forest.parent[c];
      if (p < 0) {
        back.grad_y(q, c) += g;
        continue;
      }
      const double parent_act =
          mode == CouplingMode::raw_parent ? y(q, p) : out(q, p);
      const double cl = clamp_act(parent_act);
      const double a = alpha.alpha[c];
      const double powered = std::pow(cl, a);
      back.grad_y(q, c) += g * powered;
      back.grad_alpha[c] += g * y(q, c) * powered * std::log(cl);
      if (clamp_open(parent_act)) {
        const double d_parent = g * a * y(q, c) * std::pow(cl, a - 1.0);
        if (mode == CouplingMode::raw_parent)
          back.grad_y(q, p) += d_parent;
        else
          gtilde(q, p) += d_parent;
      }
    }
  }
  return back;
}

ClassTargets build_class_targets(const MatchResult& matches,
                                 const std::vector<NodeId>& gt_leaves,
                                 const TaxonomyForest& forest,
                                 int num_queries) {
  const int n = forest.size();
  ClassTargets ct{Matrix(num_queries, n, 0.0), Matrix(num_queries, n, 0.0)};

  // Default every row to unmatched: leaf columns supervised as negatives.
  for (int q = 0; q < num_queries; ++q)
    for (NodeId c = forest.leaf_begin; c < n; ++c) ct.mask(q, c) = 1.0;

  for (const auto& [g, q] : matches.pairs) {
    if (g < 0 || g >= static_cast<int>(gt_leaves.size()))
      throw std::invalid_argument("build_class_targets: bad gt index");
    if (q < 0 || q >= num_queries)
      throw std::invalid_argument("build_class_targets: bad query index");
    NodeId leaf = gt_leaves[g];
    if (!forest.is_leaf(leaf))
      throw std::invalid_argument("build_class_targets: assigned class is not a leaf: " +
                                  forest.nodes[leaf].name);
    std::vector<double> hot = multi_hot_target(forest, leaf);
    for (NodeId c = 0; c < n; ++c) {
      ct.targets(q, c) = hot[c];
      ct.mask(q, c) = 1.0;
    }
  }
  return ct;
}

ClassificationLoss classification_loss(const Matrix& activations,
                                       const ClassTargets& targets,
                                       const std::vector<double>& pos_weights) {
  if (activations.rows() != targets.targets.rows() ||
      activations.cols() != targets.targets.cols())
    throw std::invalid_argument("classification_loss: shape mismatch");
  if (!pos_weights.empty() && pos_weights.size() != activations.cols())
    throw std::invalid_argument("classification_loss: weight size mismatch");

  ClassificationLoss result;
  result.grad = Matrix(activations.rows(), activations.cols(), 0.0);

  long supervised = 0;
  for (std::size_t i = 0; i < targets.mask.size(); ++i)
    if (targets.mask.data()[i] != 0.0) ++supervised;
  result.supervised = supervised;
  if (supervised == 0) {
    result.all_masked = true;
    return result;
  }

  const double inv_m = 1.0 / static_cast<double>(supervised);
  double total = 0.0;
  for (std::size_t q = 0; q < activations.rows(); ++q) {
    for (std::size_t c = 0; c < activations.cols(); ++c) {
      if (targets.mask(q, c) == 0.0) continue;
      const double w = pos_weights.empty() ? 1.0 : pos_weights[c];
      const double t = targets.targets(q, c);
      const double raw = activations(q, c);
      const double a = clamp_act(raw);
      total += -w * t * std::log(a) - (1.0 - t) * std::log(1.0 - a);
      if (clamp_open(raw))
        result.grad(q, c) = inv_m * (-w * t / a + (1.0 - t) / (1.0 - a));
    }
  }
  result.loss = total * inv_m;
  return result;
}

}  // namespace hierdet

#pragma once

#include <vector>

#include "hierdet/matching.hpp"
#include "hierdet/matrix.hpp"
#include "hierdet/taxonomy.hpp"

namespace hierdet {

// Numeric floor applied to parent activations before the power/log and to
// activations inside the cross-entropy; both are singular at 0.
inline constexpr double kActivationEps = 1e-6;

// Per-child coupling strengths, indexed by node id. Root entries exist but
// are never read (roots have no parent to couple to).
struct StrengthParams {
  std::vector<double> alpha;

  static StrengthParams constant(int num_nodes, double value) {
    return {std::vector<double>(static_cast<std::size_t>(num_nodes), value)};
  }
};

// Which parent activation the coupling reads. `raw_parent` uses the plain
// sigmoid of the parent at every depth; `coupled_parent` compounds through
// already-coupled ancestors (differs only for taxonomies deeper than two
// levels).
enum class CouplingMode { raw_parent, coupled_parent };

// Elementwise logistic function over the Q x N logit grid.
Matrix sigmoid_activations(const Matrix& logits);

// Couples each child activation to its parent:
//   out_c = y_c * clamp(parent_act)^alpha_c,   out_r = y_r for roots,
// where parent_act is y_p or out_p depending on `mode`.
Matrix hier_activation(const Matrix& y, const StrengthParams& alpha,
                       const TaxonomyForest& forest,
                       CouplingMode mode = CouplingMode::raw_parent);

// Local partials of the coupled activation per (query, node) entry.
struct HierPartials {
  Matrix d_self;    // d out_c / d y_c
  Matrix d_parent;  // d out_c / d parent_act   (0 for roots)
  Matrix d_alpha;   // d out_c / d alpha_c      (0 for roots)
};
HierPartials hier_activation_grads(const Matrix& y,
                                   const StrengthParams& alpha,
                                   const TaxonomyForest& forest,
                                   CouplingMode mode = CouplingMode::raw_parent);

// Reverse-mode accumulation through the coupling: maps dL/d out to
// (dL/d y, dL/d alpha). Handles both coupling modes, including the chain
// through grandparents in coupled_parent mode.
struct HierBackward {
  Matrix grad_y;
  std::vector<double> grad_alpha;
};
HierBackward backprop_hier_activation(const Matrix& grad_out, const Matrix& y,
                                      const Matrix& out,
                                      const StrengthParams& alpha,
                                      const TaxonomyForest& forest,
                                      CouplingMode mode = CouplingMode::raw_parent);

// Multi-hot targets plus the supervision mask. Matched rows supervise every
// node; unmatched rows supervise only the leaf block (all negatives), so
// non-leaf columns stay unconstrained there.
struct ClassTargets {
  Matrix targets;  // Q x N of {0,1}
  Matrix mask;     // Q x N of {0,1}
};

ClassTargets build_class_targets(const MatchResult& matches,
                                 const std::vector<NodeId>& gt_leaves,
                                 const TaxonomyForest& forest, int num_queries);

// Mean binary cross-entropy over supervised positions, with optional
// per-node positive weights. Gradient is zero at masked-out positions.
struct ClassificationLoss {
  double loss = 0.0;
  Matrix grad;       // dL/d activations, same shape
  long supervised = 0;
  bool all_masked = false;
};

ClassificationLoss classification_loss(const Matrix& activations,
                                       const ClassTargets& targets,
                                       const std::vector<double>& pos_weights = {});

}  // namespace hierdet

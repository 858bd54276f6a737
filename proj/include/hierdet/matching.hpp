#pragma once

#include <array>
#include <vector>

#include "hierdet/matrix.hpp"
#include "hierdet/taxonomy.hpp"

namespace hierdet {

// Axis-aligned box in normalized center format.
struct Box {
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;

  std::array<double, 4> corners() const {
    return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
  }
};

double box_l1(const Box& a, const Box& b);

double iou(const Box& a, const Box& b);

// Generalized IoU in [-1, 1]: IoU - (|C| - |A u B|) / |C| with C the
// tightest enclosing box. A zero-area enclosing box is defined as 0.
double giou(const Box& a, const Box& b);

// GIoU together with its partial derivatives w.r.t. the first box's
// center-format parameters (d/dcx, d/dcy, d/dw, d/dh). Piecewise smooth;
// min/max branches follow the first argument on ties.
struct GiouGrad {
  double value = 0.0;
  std::array<double, 4> d_a{};  // d value / d (a.cx, a.cy, a.w, a.h)
  bool degenerate = false;      // zero-area enclosing box
};
GiouGrad giou_grad(const Box& a, const Box& b);

struct MatchCoeffs {
  double cls = 2.0;
  double l1 = 5.0;
  double giou = 2.0;
};

// Injective assignment of ground-truth objects to queries.
struct MatchResult {
  std::vector<std::pair<int, int>> pairs;  // (gt_index, query_index)
  double cost = 0.0;

  std::vector<int> matched_queries() const;
};

// cost(g, q) = cls * (1 - ytilde_q[leaf_g]) + l1 * |box_q - box_g|_1
//            + giou * (1 - giou(box_q, box_g)).
// `activations` is the coupled Q x N activation grid; rows are queries.
Matrix match_cost(const Matrix& activations,
                  const std::vector<Box>& query_boxes,
                  const std::vector<NodeId>& gt_leaves,
                  const std::vector<Box>& gt_boxes,
                  const TaxonomyForest& forest,
                  const MatchCoeffs& coeffs = {});

// Minimum-cost assignment of every row (ground truth) to a distinct column
// (query) on a G x Q matrix with G <= Q. Deterministic for a given matrix.
// Throws std::invalid_argument when G > Q or entries are non-finite.
MatchResult hungarian(const Matrix& cost);

}  // namespace hierdet

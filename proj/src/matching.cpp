#include "hierdet/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "hierdet/kernels.hpp"

namespace hierdet {

double box_l1(const Box& a, const Box& b) {
  const double pa[4] = {a.cx, a.cy, a.w, a.h};
  const double pb[4] = {b.cx, b.cy, b.w, b.h};
  return kernels::l1_distance(pa, pb, 4);
}

double iou(const Box& a, const Box& b) {
  auto ca = a.corners();
  auto cb = b.corners();
  const double iw =
      std::max(0.0, std::min(ca[2], cb[2]) - std::max(ca[0], cb[0]));
  const double ih =
      std::max(0.0, std::min(ca[3], cb[3]) - std::max(ca[1], cb[1]));
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

double giou(const Box& a, const Box& b) { return giou_grad(a, b).value; }

GiouGrad giou_grad(const Box& a, const Box& b) {
  GiouGrad out;
  auto ca = a.corners();
  auto cb = b.corners();

  // Everything below is expressed in corner coordinates of `a`; the chain
  // back to center format happens at the end.
  // d corner / d (cx, cy, w, h): x1 = cx - w/2, y1 = cy - h/2, ...
  auto corner_grad_to_center = [](const std::array<double, 4>& dc) {
    return std::array<double, 4>{
        dc[0] + dc[2],                  // d/dcx
        dc[1] + dc[3],                  // d/dcy
        0.5 * (dc[2] - dc[0]),          // d/dw
        0.5 * (dc[3] - dc[1]),          // d/dh
    };
  };

  const double area_a = a.w * a.h;
  const double area_b = b.w * b.h;
  // d area_a / d corners of a
  std::array<double, 4> d_area = {-(ca[3] - ca[1]), -(ca[2] - ca[0]),
                                  ca[3] - ca[1], ca[2] - ca[0]};

  const double ix1 = std::max(ca[0], cb[0]);
  const double iy1 = std::max(ca[1], cb[1]);
  const double ix2 = std::min(ca[2], cb[2]);
  const double iy2 = std::min(ca[3], cb[3]);
  const double iw = std::max(0.0, ix2 - ix1);
  const double ih = std::max(0.0, iy2 - iy1);
  const double inter = iw * ih;

  std::array<double, 4> d_inter = {0, 0, 0, 0};
  if (iw > 0.0 && ih > 0.0) {
    const double dix1 = (ca[0] >= cb[0]) ? 1.0 : 0.0;
    const double diy1 = (ca[1] >= cb[1]) ? 1.0 : 0.0;
    const double dix2 = (ca[2] <= cb[2]) ? 1.0 : 0.0;
    const double diy2 = (ca[3] <= cb[3]) ? 1.0 : 0.0;
    d_inter = {-dix1 * ih, -diy1 * iw, dix2 * ih, diy2 * iw};
  }

  const double uni = area_a + area_b - inter;
  std::array<double, 4> d_uni;
  for (int i = 0; i < 4; ++i) d_uni[i] = d_area[i] - d_inter[i];

  const double ex1 = std::min(ca[0], cb[0]);
  const double ey1 = std::min(ca[1], cb[1]);
  const double ex2 = std::max(ca[2], cb[2]);
  const double ey2 = std::max(ca[3], cb[3]);
  const double ew = ex2 - ex1;
  const double eh = ey2 - ey1;
  const double area_c = ew * eh;

  if (area_c <= 0.0) {
    out.degenerate = true;
    return out;
  }

  const double dex1 = (ca[0] <= cb[0]) ? 1.0 : 0.0;
  const double dey1 = (ca[1] <= cb[1]) ? 1.0 : 0.0;
  const double dex2 = (ca[2] >= cb[2]) ? 1.0 : 0.0;
  const double dey2 = (ca[3] >= cb[3]) ? 1.0 : 0.0;
  std::array<double, 4> d_area_c = {-dex1 * eh, -dey1 * ew, dex2 * eh,
                                    dey2 * ew};

  double iou_val = 0.0;
  std::array<double, 4> d_iou = {0, 0, 0, 0};
  if (uni > 0.0) {
    iou_val = inter / uni;
    for (int i = 0; i < 4; ++i)
      d_iou[i] = (d_inter[i] * uni - inter * d_uni[i]) / (uni * uni);
  }

  // giou = iou - 1 + union / area_c
  out.value = iou_val - (area_c - uni) / area_c;
  std::array<double, 4> d_corners;
  for (int i = 0; i < 4; ++i)
    d_corners[i] = d_iou[i] +
                   (d_uni[i] * area_c - uni * d_area_c[i]) / (area_c * area_c);
  out.d_a = corner_grad_to_center(d_corners);
  return out;
}

std::vector<int> MatchResult::matched_queries() const {
  std::vector<int> out;
  out.reserve(pairs.size());
  for (const auto& [g, q] : pairs) out.push_back(q);
  std::sort(out.begin(), out.end());
  return out;
}

Matrix match_cost(const Matrix& activations,
                  const std::vector<Box>& query_boxes,
                  const std::vector<NodeId>& gt_leaves,
                  const std::vector<Box>& gt_boxes,
                  const TaxonomyForest& forest, const MatchCoeffs& coeffs) {
  const std::size_t n_gt = gt_leaves.size();
  const std::size_t n_query = activations.rows();
  if (gt_boxes.size() != n_gt || query_boxes.size() != n_query)
    throw std::invalid_argument("match_cost: shape mismatch");
  for (NodeId leaf : gt_leaves)
    if (!forest.is_leaf(leaf))
      throw std::invalid_argument("match_cost: ground-truth class is not a leaf: " +
                                  forest.nodes[leaf].name);

  Matrix cost(n_gt, n_query);
  for (std::size_t g = 0; g < n_gt; ++g) {
    for (std::size_t q = 0; q < n_query; ++q) {
      const double cls = 1.0 - activations(q, gt_leaves[g]);
      const double l1 = box_l1(query_boxes[q], gt_boxes[g]);
      const double gi = 1.0 - giou(query_boxes[q], gt_boxes[g]);
      cost(g, q) = coeffs.cls * cls + coeffs.l1 * l1 + coeffs.giou * gi;
    }
  }
  return cost;
}

MatchResult hungarian(const Matrix& cost) {
  const int n_rows = static_cast<int>(cost.rows());
  const int n_cols = static_cast<int>(cost.cols());
  if (n_rows > n_cols)
    throw std::invalid_argument("hungarian: more ground truths than queries");
  for (std::size_t i = 0; i < cost.size(); ++i)
    if (!std::isfinite(cost.data()[i]))
      throw std::invalid_argument("hungarian: non-finite cost entry");

  MatchResult result;
  if (n_rows == 0) return result;

  // Kuhn-Munkres with row/column potentials on the rectangular matrix,
  // 1-indexed internally. Column scan order is ascending, so among equal
  // augmenting paths the lowest query index is taken first.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n_rows + 1, 0.0), v(n_cols + 1, 0.0);
  std::vector<int> match_col(n_cols + 1, 0);  // column -> row
  std::vector<int> way(n_cols + 1, 0);

  for (int i = 1; i <= n_rows; ++i) {
    match_col[0] = i;
    int j0 = 0;
    std::vector<double> minv(n_cols + 1, inf);
    std::vector<char> used(n_cols + 1, 0);
    do {
      used[j0] = 1;
      int i0 = match_col[j0], j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n_cols; ++j) {
        if (used[j]) continue;
        double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n_cols; ++j) {
        if (used[j]) {
          u[match_col[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match_col[j0] != 0);
    do {
      int j1 = way[j0];
      match_col[j0] = match_col[j1];
      j0 = j1;
    } while (j0);
  }

  result.pairs.reserve(n_rows);
  for (int j = 1; j <= n_cols; ++j)
    if (match_col[j] > 0)
      result.pairs.emplace_back(match_col[j] - 1, j - 1);
  std::sort(result.pairs.begin(), result.pairs.end());
  for (const auto& [g, q] : result.pairs) result.cost += cost(g, q);
  return result;
}

}  // namespace hierdet

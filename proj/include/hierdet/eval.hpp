#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hierdet/matching.hpp"
#include "hierdet/matrix.hpp"
#include "hierdet/taxonomy.hpp"

namespace hierdet {

// Malformed input files, unknown class names, taxonomy mismatches.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DetectionKind { known_leaf, unknown_nonleaf };

struct Detection {
  std::string image_id;
  NodeId node = -1;  // leaf for known detections, the coarse node otherwise
  Box box;
  double score = 0.0;
  DetectionKind kind = DetectionKind::known_leaf;
};

enum class GtStatus { known, future };

struct GroundTruthObject {
  std::string image_id;
  NodeId leaf = -1;
  Box box;
  GtStatus status = GtStatus::known;
};

// Leaf classes grouped into incremental tasks. Classes of tasks up to and
// including `current_task` are known; later tasks are future.
struct SplitConfig {
  std::vector<std::vector<NodeId>> tasks;
  int current_task = 0;

  std::vector<NodeId> known_leaves() const;
  std::vector<NodeId> previous_leaves() const;
  std::vector<NodeId> current_leaves() const;
};

struct EvalCounts {
  long tp_known = 0;
  long fp_known = 0;
  long fp_unknown = 0;  // known-class detections that land on future objects
};

struct EvalReport {
  std::map<std::string, double> per_class_ap;  // known classes with gt
  double map_known = 0.0;                      // "both" partition
  std::optional<double> map_previous;
  std::optional<double> map_current;
  std::optional<double> unknown_recall;
  long aose = 0;
  std::optional<double> hacc;
  std::optional<double> wi;
  EvalCounts counts;
  std::vector<std::string> diagnostics;
};

struct EvalOptions {
  double iou_threshold = 0.5;
  int top_k = 100;  // per-image cap, by score
};

// Turns one image's raw head outputs into detections: each query reports
// its argmax node over the coupled activations, scored by
// objectness * activation; only the top_k by score survive.
std::vector<Detection> decode_predictions(const Matrix& activations,
                                          const std::vector<double>& objectness,
                                          const std::vector<Box>& boxes,
                                          const TaxonomyForest& forest,
                                          int top_k,
                                          const std::string& image_id);

// Greedy-matched average precision for one leaf class at the given IoU
// threshold, area under the continuous precision envelope. Returns nullopt
// when the class has no ground truth.
std::optional<double> average_precision(const std::vector<Detection>& dets,
                                        const std::vector<GroundTruthObject>& gts,
                                        NodeId leaf, double iou_threshold);

// Fraction of future-class ground-truth boxes recalled by unknown
// detections (greedy by score, one detection per gt, injective). Absent
// when there are no future ground truths.
std::optional<double> unknown_recall(const std::vector<Detection>& dets,
                                     const std::vector<GroundTruthObject>& gts,
                                     double iou_threshold);

// Number of future-class ground truths misclassified as known: not
// recalled as unknown, and their best-overlapping detection at the IoU
// threshold carries a known leaf label.
long aose(const std::vector<Detection>& dets,
          const std::vector<GroundTruthObject>& gts, double iou_threshold);

// One recalled unknown: the coarse node the detection predicted and the
// leaf of the ground truth it covers.
struct UnknownMatch {
  NodeId predicted = -1;
  NodeId gt_leaf = -1;
};

// Fraction of recalled unknowns whose predicted node is exactly the
// ground-truth leaf's parent. Absent when nothing was recalled.
std::optional<double> hacc(const std::vector<UnknownMatch>& matches,
                           const TaxonomyForest& forest);

// FP_u / (TP_k + FP_k); absent when the denominator is zero.
std::optional<double> wilderness_impact(const EvalCounts& counts);

EvalReport evaluate(const std::vector<Detection>& dets,
                    const std::vector<GroundTruthObject>& gts,
                    const TaxonomyForest& forest, const SplitConfig& split,
                    const EvalOptions& options = {});

// JSONL / JSON file front-ends (one object per line for gt/detections).
std::vector<GroundTruthObject> load_ground_truth(const std::string& path,
                                                 const TaxonomyForest& forest);
std::vector<Detection> load_detections(const std::string& path,
                                       const TaxonomyForest& forest);
SplitConfig load_split(const std::string& path, const TaxonomyForest& forest);

std::string report_to_json(const EvalReport& report);
std::string report_to_table(const EvalReport& report);

}  // namespace hierdet

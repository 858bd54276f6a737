#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hierdet/eval.hpp"
#include "hierdet/hierhead.hpp"
#include "hierdet/matching.hpp"
#include "hierdet/matrix.hpp"
#include "hierdet/relabel.hpp"
#include "hierdet/taxonomy.hpp"

namespace hierdet {

// A training step produced a non-finite loss; carries the offending term.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Ablation grid: each mode flips exactly one component of the full system.
enum class ExperimentMode { full, softmax_obj, no_relabel, alpha_fixed_0 };

ExperimentMode parse_mode(const std::string& name);  // throws on unknown mode
std::string mode_name(ExperimentMode mode);

struct ToyConfig {
  // World shape. Feature vectors carry semantic_dim prototype dimensions
  // plus 4 dimensions encoding the object's box in logit space, so a linear
  // head can read the box back out.
  int semantic_dim = 16;
  int queries = 40;
  int parents = 3;
  int leaves_per_parent = 4;
  int future_per_parent = 1;
  double feature_scale = 0.2;  // global magnitude of every feature component
  double background_scale = 1.0;  // background-query energy, relative to feature_scale
  double noise_sigma = 0.25;   // object feature jitter, relative to feature_scale
  double parent_scale = 2.0;
  double leaf_scale = 2.0;
  double box_feature_scale = 1.0;
  int min_objects = 3;
  int max_objects = 3;
  // Atypical-instance stand-in: a fraction of objects carry attenuated
  // parent-direction evidence (subtype features intact). Their weak coarse
  // scores pull the adaptive relabeling threshold down, which is what lets
  // strong unmatched queries clear it.
  double hard_object_prob = 0.3;
  double hard_object_scale = 0.45;

  // Training.
  double learning_rate = 0.05;
  int steps = 3000;
  // Step-schedule mirroring the usual detector recipe: the last stretch of
  // training runs at a decayed rate so the heads settle.
  double lr_decay_factor = 0.1;
  double lr_decay_fraction = 0.8;  // decay once past this fraction of steps
  double init_scale = 0.01;  // head weight init stddev, times 1/sqrt(d)
  double coeff_class = 2.0;
  double coeff_objectness = 2.0;
  double coeff_l1 = 5.0;
  double coeff_giou = 2.0;
  // Matcher cost weights. Class-dominant on purpose: with box-dominant
  // matching the assignment degenerates into a spatial quantizer over box
  // space and never discovers which query carries which object.
  double match_coeff_class = 10.0;
  double match_coeff_l1 = 1.0;
  double match_coeff_giou = 0.5;
  double class_pos_weight = 200.0;  // leaf positive-cell weight in the BCE
  double parent_pos_weight = 0.05;  // non-leaf positive-cell weight
  double alpha_init = 0.2;
  double alpha_min = 0.0;  // coupling strength kept in [alpha_min, alpha_max]
  double alpha_max = 0.2;
  CouplingMode coupling = CouplingMode::raw_parent;
  NonleafAggregate relabel_aggregate = NonleafAggregate::max;

  // Evaluation.
  int eval_scenes = 50;
  int top_k = 10;
  double iou_threshold = 0.5;

  ExperimentMode mode = ExperimentMode::full;

  int feature_dim() const { return semantic_dim + 4; }
  void validate() const;  // throws std::invalid_argument
};

// Flat key-value JSON document; unknown keys are rejected.
ToyConfig config_from_json(const std::string& text);
std::string config_to_json(const ToyConfig& config);

struct SyntheticWorld {
  TaxonomyForest forest;
  std::map<NodeId, std::vector<double>> prototypes;   // leaf -> semantic vector
  std::map<NodeId, std::vector<double>> parent_part;  // coarse component
  std::vector<NodeId> known_leaves;
  std::vector<NodeId> future_leaves;
};

SyntheticWorld make_world(const ToyConfig& config, std::uint64_t seed);

struct SceneObject {
  NodeId leaf = -1;
  Box box;
  bool future = false;  // present in the image but never annotated
};

struct Scene {
  std::vector<SceneObject> objects;
  std::vector<int> object_slots;  // query slot of each object
  Matrix query_features;          // Q x feature_dim

  // Training annotations: known-leaf objects only.
  std::vector<NodeId> annotated_leaves() const;
  std::vector<Box> annotated_boxes() const;
  std::vector<int> annotated_slots() const;
};

Scene generate_scene(const SyntheticWorld& world, const ToyConfig& config,
                     std::uint64_t seed);

// Linear heads over the query features; the learnable surface of the toy.
struct DetectorParams {
  Matrix class_weights;            // N x d
  std::vector<double> class_bias;  // N
  std::vector<double> obj_weights; // d
  double obj_bias = 0.0;
  Matrix box_weights;              // 4 x d
  std::vector<double> box_bias;    // 4
  StrengthParams alpha;            // per node; roots unused

  static DetectorParams init(const TaxonomyForest& forest,
                             const ToyConfig& config, std::uint64_t seed);
};

// Stable enumeration of every scalar parameter, for generic finite
// difference sweeps and the gradient-descent update.
std::vector<std::pair<std::string, double*>> param_refs(DetectorParams& params);

struct ForwardResult {
  Matrix class_logits;             // Q x N
  std::vector<double> obj_logits;  // Q
  Matrix box_raw;                  // Q x 4, pre-squash
  std::vector<Box> boxes;          // logistic-squashed into [0,1]^4
};

ForwardResult forward(const DetectorParams& params, const Scene& scene);

struct StepBreakdown {
  double total = 0.0;
  double classification = 0.0;
  double objectness = 0.0;
  double box_l1 = 0.0;
  double box_giou = 0.0;
  int matched = 0;
  int relabeled = 0;
  bool degenerate_target = false;  // no positives, objectness loss skipped
  double target_sum = 0.0;         // sum of the objectness target q
};

struct StepGradients {
  DetectorParams grads;  // same shapes as the parameters
  StepBreakdown breakdown;
};

// Total loss of one step without updating anything (finite-difference
// oracle side).
double step_loss(const DetectorParams& params, const Scene& scene,
                 const TaxonomyForest& forest, const ToyConfig& config);

// Analytic gradients of the same total loss.
StepGradients step_gradients(const DetectorParams& params, const Scene& scene,
                             const TaxonomyForest& forest,
                             const ToyConfig& config);

// One full training step: gradients plus a plain gradient-descent update of
// every parameter group (alpha held fixed in alpha_fixed_0 mode). Throws
// NumericalError on a non-finite loss.
StepBreakdown train_step(DetectorParams& params, const Scene& scene,
                         const TaxonomyForest& forest, const ToyConfig& config);

struct SeedResult {
  std::uint64_t seed = 0;
  EvalReport report;
  std::vector<StepBreakdown> step_log;  // per-step diagnostics
};

SeedResult run_seed(const ToyConfig& config, std::uint64_t seed);

std::vector<SeedResult> run_experiment(const ToyConfig& config,
                                       const std::vector<std::uint64_t>& seeds);

// Deterministic JSON document: config plus the per-seed reports.
std::string experiment_to_json(const ToyConfig& config,
                               const std::vector<SeedResult>& results);

}  // namespace hierdet

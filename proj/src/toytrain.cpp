#include "hierdet/toytrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "hierdet/kernels.hpp"
#include "hierdet/rng.hpp"
#include "hierdet/sparsemax.hpp"
#include "json.hpp"

namespace hierdet {

namespace {

using json = nlohmann::json;

// Disjoint deterministic RNG streams per pipeline stage.
constexpr std::uint64_t kWorldStream = 10;
constexpr std::uint64_t kParamStream = 11;
constexpr std::uint64_t kTrainStream = 12;
constexpr std::uint64_t kEvalStream = 13;

double logit(double v) { return std::log(v / (1.0 - v)); }

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

std::string pad4(int v) {
  std::ostringstream s;
  s << v;
  std::string out = s.str();
  while (out.size() < 4) out.insert(out.begin(), '0');
  return out;
}

}  // namespace

ExperimentMode parse_mode(const std::string& name) {
  if (name == "full") return ExperimentMode::full;
  if (name == "softmax-obj") return ExperimentMode::softmax_obj;
  if (name == "no-relabel") return ExperimentMode::no_relabel;
  if (name == "alpha-fixed-0") return ExperimentMode::alpha_fixed_0;
  throw std::invalid_argument("unknown experiment mode: " + name);
}

std::string mode_name(ExperimentMode mode) {
  switch (mode) {
    case ExperimentMode::full: return "full";
    case ExperimentMode::softmax_obj: return "softmax-obj";
    case ExperimentMode::no_relabel: return "no-relabel";
    case ExperimentMode::alpha_fixed_0: return "alpha-fixed-0";
  }
  return "full";
}

void ToyConfig::validate() const {
  auto fail = [](const std::string& msg) {
    throw std::invalid_argument("toy config: " + msg);
  };
  if (semantic_dim < 1) fail("semantic_dim must be >= 1");
  if (semantic_dim < parents * (1 + leaves_per_parent))
    fail("semantic_dim too small for orthogonal prototype directions");
  if (queries < 1) fail("queries must be >= 1");
  if (parents < 1) fail("parents must be >= 1");
  if (leaves_per_parent < 1) fail("leaves_per_parent must be >= 1");
  if (future_per_parent < 0 || future_per_parent >= leaves_per_parent)
    fail("future_per_parent must leave at least one known sibling");
  if (min_objects < 0 || min_objects > max_objects)
    fail("object count range is empty");
  if (max_objects > queries) fail("max_objects exceeds query count");
  if (noise_sigma < 0) fail("noise_sigma must be >= 0");
  if (feature_scale <= 0) fail("feature_scale must be > 0");
  if (background_scale <= 0) fail("background_scale must be > 0");
  if (hard_object_prob < 0 || hard_object_prob > 1) fail("hard_object_prob in [0,1]");
  if (hard_object_scale <= 0 || hard_object_scale > 1) fail("hard_object_scale in (0,1]");
  if (learning_rate <= 0) fail("learning_rate must be > 0");
  if (init_scale <= 0) fail("init_scale must be > 0");
  if (lr_decay_factor <= 0 || lr_decay_factor > 1) fail("lr_decay_factor in (0,1]");
  if (lr_decay_fraction < 0 || lr_decay_fraction > 1) fail("lr_decay_fraction in [0,1]");
  if (class_pos_weight <= 0) fail("class_pos_weight must be > 0");
  if (parent_pos_weight <= 0) fail("parent_pos_weight must be > 0");
  if (steps < 0) fail("steps must be >= 0");
  if (eval_scenes < 0) fail("eval_scenes must be >= 0");
  if (top_k < 1) fail("top_k must be >= 1");
  if (iou_threshold <= 0 || iou_threshold > 1) fail("iou_threshold in (0,1]");
  if (alpha_min > alpha_max) fail("alpha bounds are inverted");
  if (mode != ExperimentMode::alpha_fixed_0 &&
      (alpha_init < alpha_min || alpha_init > alpha_max))
    fail("alpha_init outside the alpha bounds");
}

ToyConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError("malformed toy config: " + std::string(e.what()));
  }
  ToyConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "semantic_dim") c.semantic_dim = value.get<int>();
      else if (key == "queries") c.queries = value.get<int>();
      else if (key == "parents") c.parents = value.get<int>();
      else if (key == "leaves_per_parent") c.leaves_per_parent = value.get<int>();
      else if (key == "future_per_parent") c.future_per_parent = value.get<int>();
      else if (key == "feature_scale") c.feature_scale = value.get<double>();
      else if (key == "background_scale") c.background_scale = value.get<double>();
      else if (key == "noise_sigma") c.noise_sigma = value.get<double>();
      else if (key == "parent_scale") c.parent_scale = value.get<double>();
      else if (key == "leaf_scale") c.leaf_scale = value.get<double>();
      else if (key == "box_feature_scale") c.box_feature_scale = value.get<double>();
      else if (key == "min_objects") c.min_objects = value.get<int>();
      else if (key == "max_objects") c.max_objects = value.get<int>();
      else if (key == "hard_object_prob") c.hard_object_prob = value.get<double>();
      else if (key == "hard_object_scale") c.hard_object_scale = value.get<double>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "steps") c.steps = value.get<int>();
      else if (key == "lr_decay_factor") c.lr_decay_factor = value.get<double>();
      else if (key == "lr_decay_fraction") c.lr_decay_fraction = value.get<double>();
      else if (key == "init_scale") c.init_scale = value.get<double>();
      else if (key == "class_pos_weight") c.class_pos_weight = value.get<double>();
      else if (key == "parent_pos_weight") c.parent_pos_weight = value.get<double>();
      else if (key == "coeff_class") c.coeff_class = value.get<double>();
      else if (key == "coeff_objectness") c.coeff_objectness = value.get<double>();
      else if (key == "coeff_l1") c.coeff_l1 = value.get<double>();
      else if (key == "coeff_giou") c.coeff_giou = value.get<double>();
      else if (key == "match_coeff_class") c.match_coeff_class = value.get<double>();
      else if (key == "match_coeff_l1") c.match_coeff_l1 = value.get<double>();
      else if (key == "match_coeff_giou") c.match_coeff_giou = value.get<double>();
      else if (key == "alpha_init") c.alpha_init = value.get<double>();
      else if (key == "alpha_min") c.alpha_min = value.get<double>();
      else if (key == "alpha_max") c.alpha_max = value.get<double>();
      else if (key == "coupling") {
        const std::string v = value.get<std::string>();
        if (v == "raw-parent") c.coupling = CouplingMode::raw_parent;
        else if (v == "coupled-parent") c.coupling = CouplingMode::coupled_parent;
        else throw DataError("bad coupling value: " + v);
      } else if (key == "relabel_aggregate") {
        const std::string v = value.get<std::string>();
        if (v == "max") c.relabel_aggregate = NonleafAggregate::max;
        else if (v == "mean") c.relabel_aggregate = NonleafAggregate::mean;
        else throw DataError("bad relabel_aggregate value: " + v);
      } else if (key == "eval_scenes") c.eval_scenes = value.get<int>();
      else if (key == "top_k") c.top_k = value.get<int>();
      else if (key == "iou_threshold") c.iou_threshold = value.get<double>();
      else if (key == "mode") c.mode = parse_mode(value.get<std::string>());
      else throw DataError("unknown toy config key: " + key);
    } catch (const json::exception& e) {
      throw DataError("bad value for toy config key '" + key + "': " + e.what());
    }
  }
  return c;
}

std::string config_to_json(const ToyConfig& c) {
  json j;
  j["semantic_dim"] = c.semantic_dim;
  j["queries"] = c.queries;
  j["parents"] = c.parents;
  j["leaves_per_parent"] = c.leaves_per_parent;
  j["future_per_parent"] = c.future_per_parent;
  j["feature_scale"] = c.feature_scale;
  j["background_scale"] = c.background_scale;
  j["noise_sigma"] = c.noise_sigma;
  j["parent_scale"] = c.parent_scale;
  j["leaf_scale"] = c.leaf_scale;
  j["box_feature_scale"] = c.box_feature_scale;
  j["min_objects"] = c.min_objects;
  j["max_objects"] = c.max_objects;
  j["hard_object_prob"] = c.hard_object_prob;
  j["hard_object_scale"] = c.hard_object_scale;
  j["learning_rate"] = c.learning_rate;
  j["steps"] = c.steps;
  j["lr_decay_factor"] = c.lr_decay_factor;
  j["lr_decay_fraction"] = c.lr_decay_fraction;
  j["init_scale"] = c.init_scale;
  j["class_pos_weight"] = c.class_pos_weight;
  j["parent_pos_weight"] = c.parent_pos_weight;
  j["coeff_class"] = c.coeff_class;
  j["coeff_objectness"] = c.coeff_objectness;
  j["coeff_l1"] = c.coeff_l1;
  j["coeff_giou"] = c.coeff_giou;
  j["match_coeff_class"] = c.match_coeff_class;
  j["match_coeff_l1"] = c.match_coeff_l1;
  j["match_coeff_giou"] = c.match_coeff_giou;
  j["alpha_init"] = c.alpha_init;
  j["alpha_min"] = c.alpha_min;
  j["alpha_max"] = c.alpha_max;
  j["coupling"] = c.coupling == CouplingMode::raw_parent ? "raw-parent"
                                                         : "coupled-parent";
  j["relabel_aggregate"] =
      c.relabel_aggregate == NonleafAggregate::max ? "max" : "mean";
  j["eval_scenes"] = c.eval_scenes;
  j["top_k"] = c.top_k;
  j["iou_threshold"] = c.iou_threshold;
  j["mode"] = mode_name(c.mode);
  return j.dump(2);
}

SyntheticWorld make_world(const ToyConfig& config, std::uint64_t seed) {
  config.validate();
  SyntheticWorld world;

  std::ostringstream doc;
  for (int p = 0; p < config.parents; ++p)
    for (int k = 0; k < config.leaves_per_parent; ++k)
      doc << "family" << p << " -> family" << p << "-kind" << k << "\n";
  world.forest = parse_taxonomy(doc.str());

  Rng rng(Rng::mix(seed, kWorldStream));

  // Mutually orthogonal direction per parent and per leaf (Gram-Schmidt on
  // seeded Gaussian draws, scaled to |.| = sqrt(semantic_dim)). Orthogonal
  // prototypes keep sibling classes from bleeding into each other through
  // chance correlations at this dimensionality.
  const int n_dirs = config.parents * (1 + config.leaves_per_parent);
  std::vector<std::vector<double>> dirs;
  dirs.reserve(n_dirs);
  while (static_cast<int>(dirs.size()) < n_dirs) {
    std::vector<double> v(config.semantic_dim);
    for (double& x : v) x = rng.normal();
    for (const auto& u : dirs) {
      double dp = 0.0;
      for (int i = 0; i < config.semantic_dim; ++i) dp += v[i] * u[i];
      dp /= static_cast<double>(config.semantic_dim);  // |u|^2 = sem
      for (int i = 0; i < config.semantic_dim; ++i) v[i] -= dp * u[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-6) continue;  // redraw a degenerate direction
    const double target = std::sqrt(static_cast<double>(config.semantic_dim));
    for (double& x : v) x *= target / norm;
    dirs.push_back(std::move(v));
  }

  const int known_kinds = config.leaves_per_parent - config.future_per_parent;
  for (int p = 0; p < config.parents; ++p) {
    const std::vector<double>& parent_dir = dirs[p];
    for (int k = 0; k < config.leaves_per_parent; ++k) {
      const std::vector<double>& leaf_dir =
          dirs[config.parents + p * config.leaves_per_parent + k];
      std::vector<double> proto(config.semantic_dim);
      std::vector<double> coarse(config.semantic_dim);
      for (int i = 0; i < config.semantic_dim; ++i) {
        coarse[i] = config.feature_scale * config.parent_scale * parent_dir[i];
        proto[i] = coarse[i] +
                   config.feature_scale * config.leaf_scale * leaf_dir[i];
      }
      std::ostringstream name;
      name << "family" << p << "-kind" << k;
      NodeId leaf = world.forest.id_of(name.str());
      world.prototypes[leaf] = std::move(proto);
      world.parent_part[leaf] = std::move(coarse);
      (k < known_kinds ? world.known_leaves : world.future_leaves)
          .push_back(leaf);
    }
  }
  return world;
}

std::vector<NodeId> Scene::annotated_leaves() const {
  std::vector<NodeId> out;
  for (const SceneObject& o : objects)
    if (!o.future) out.push_back(o.leaf);
  return out;
}

std::vector<Box> Scene::annotated_boxes() const {
  std::vector<Box> out;
  for (const SceneObject& o : objects)
    if (!o.future) out.push_back(o.box);
  return out;
}

std::vector<int> Scene::annotated_slots() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < objects.size(); ++i)
    if (!objects[i].future) out.push_back(object_slots[i]);
  return out;
}

Scene generate_scene(const SyntheticWorld& world, const ToyConfig& config,
                     std::uint64_t seed) {
  Rng rng(seed);
  const int q = config.queries;
  const int d = config.feature_dim();

  const int g = rng.uniform_int(config.min_objects, config.max_objects);
  if (g > q) throw std::invalid_argument("generate_scene: more objects than queries");

  // Distinct slots via a partial Fisher-Yates shuffle.
  std::vector<int> slots(q);
  std::iota(slots.begin(), slots.end(), 0);
  for (int i = 0; i < g; ++i)
    std::swap(slots[i], slots[rng.uniform_int(i, q - 1)]);
  slots.resize(g);

  std::vector<NodeId> all_leaves = world.known_leaves;
  all_leaves.insert(all_leaves.end(), world.future_leaves.begin(),
                    world.future_leaves.end());

  Scene scene;
  scene.object_slots = slots;
  std::vector<double> attenuation(g, 1.0);
  for (int i = 0; i < g; ++i) {
    SceneObject obj;
    obj.leaf = all_leaves[rng.uniform_int(0, static_cast<int>(all_leaves.size()) - 1)];
    obj.future = std::find(world.future_leaves.begin(), world.future_leaves.end(),
                           obj.leaf) != world.future_leaves.end();
    obj.box.cx = rng.uniform(0.2, 0.8);
    obj.box.cy = rng.uniform(0.2, 0.8);
    obj.box.w = rng.uniform(0.15, 0.4);
    obj.box.h = rng.uniform(0.15, 0.4);
    if (rng.uniform() < config.hard_object_prob)
      attenuation[i] = config.hard_object_scale;
    scene.objects.push_back(obj);
  }

  const double unit = config.feature_scale;
  scene.query_features = Matrix(q, d);
  for (int row = 0; row < q; ++row)
    for (int col = 0; col < d; ++col)
      scene.query_features(row, col) =
          unit * config.background_scale * rng.normal();
  for (int i = 0; i < g; ++i) {
    const SceneObject& obj = scene.objects[i];
    const std::vector<double>& proto = world.prototypes.at(obj.leaf);
    const std::vector<double>& coarse = world.parent_part.at(obj.leaf);
    double* row = scene.query_features.row(slots[i]);
    for (int col = 0; col < config.semantic_dim; ++col) {
      // Attenuation acts on the coarse component only.
      const double base =
          proto[col] + (attenuation[i] - 1.0) * coarse[col];
      row[col] = base + unit * config.noise_sigma * rng.normal();
    }
    const double enc[4] = {logit(obj.box.cx), logit(obj.box.cy),
                           logit(obj.box.w), logit(obj.box.h)};
    for (int k = 0; k < 4; ++k)
      row[config.semantic_dim + k] =
          unit * (enc[k] * config.box_feature_scale +
                  config.noise_sigma * rng.normal());
  }
  return scene;
}

DetectorParams DetectorParams::init(const TaxonomyForest& forest,
                                    const ToyConfig& config,
                                    std::uint64_t seed) {
  Rng rng(seed);
  const int n = forest.size();
  const int d = config.feature_dim();
  const double scale = config.init_scale / std::sqrt(static_cast<double>(d));

  DetectorParams p;
  p.class_weights = Matrix(n, d);
  for (std::size_t i = 0; i < p.class_weights.size(); ++i)
    p.class_weights.data()[i] = scale * rng.normal();
  p.class_bias.assign(n, 0.0);
  p.obj_weights.resize(d);
  for (double& v : p.obj_weights) v = scale * rng.normal();
  p.obj_bias = 0.0;
  p.box_weights = Matrix(4, d);
  for (std::size_t i = 0; i < p.box_weights.size(); ++i)
    p.box_weights.data()[i] = scale * rng.normal();
  p.box_bias.assign(4, 0.0);
  const double a0 =
      config.mode == ExperimentMode::alpha_fixed_0 ? 0.0 : config.alpha_init;
  p.alpha = StrengthParams::constant(n, a0);
  return p;
}

std::vector<std::pair<std::string, double*>> param_refs(DetectorParams& p) {
  std::vector<std::pair<std::string, double*>> refs;
  auto add_matrix = [&](const std::string& name, Matrix& m) {
    for (std::size_t i = 0; i < m.size(); ++i)
      refs.emplace_back(name + "[" + std::to_string(i) + "]", m.data() + i);
  };
  auto add_vector = [&](const std::string& name, std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i)
      refs.emplace_back(name + "[" + std::to_string(i) + "]", v.data() + i);
  };
  add_matrix("class_weights", p.class_weights);
  add_vector("class_bias", p.class_bias);
  add_vector("obj_weights", p.obj_weights);
  refs.emplace_back("obj_bias", &p.obj_bias);
  add_matrix("box_weights", p.box_weights);
  add_vector("box_bias", p.box_bias);
  add_vector("alpha", p.alpha.alpha);
  return refs;
}

ForwardResult forward(const DetectorParams& params, const Scene& scene) {
  const std::size_t q = scene.query_features.rows();
  const std::size_t d = scene.query_features.cols();
  const std::size_t n = params.class_weights.rows();

  ForwardResult out;
  out.class_logits = Matrix(q, n);
  out.obj_logits.resize(q);
  out.box_raw = Matrix(q, 4);
  out.boxes.resize(q);
  for (std::size_t i = 0; i < q; ++i) {
    const double* x = scene.query_features.row(i);
    for (std::size_t c = 0; c < n; ++c)
      out.class_logits(i, c) =
          kernels::dot(params.class_weights.row(c), x, d) + params.class_bias[c];
    out.obj_logits[i] = kernels::dot(params.obj_weights.data(), x, d) + params.obj_bias;
    for (int k = 0; k < 4; ++k)
      out.box_raw(i, k) =
          kernels::dot(params.box_weights.row(k), x, d) + params.box_bias[k];
    out.boxes[i] = Box{sigmoid(out.box_raw(i, 0)), sigmoid(out.box_raw(i, 1)),
                       sigmoid(out.box_raw(i, 2)), sigmoid(out.box_raw(i, 3))};
  }
  return out;
}

namespace {

// Everything a step computes before gradients: shared by the loss-only
// path (finite differences) and the gradient path.
struct StepEval {
  ForwardResult fwd;
  Matrix y;
  Matrix ytilde;
  std::vector<NodeId> gt_leaves;
  std::vector<Box> gt_boxes;
  MatchResult matches;
  ClassTargets targets;
  ClassificationLoss cls;
  ObjectnessTarget obj_target;
  std::optional<std::vector<double>> obj_grad;  // unscaled dL_obj/dz
  StepBreakdown breakdown;
};

StepEval evaluate_step(const DetectorParams& params, const Scene& scene,
                       const TaxonomyForest& forest, const ToyConfig& config) {
  StepEval ev;
  ev.fwd = forward(params, scene);
  ev.y = sigmoid_activations(ev.fwd.class_logits);
  ev.ytilde = hier_activation(ev.y, params.alpha, forest, config.coupling);

  ev.gt_leaves = scene.annotated_leaves();
  ev.gt_boxes = scene.annotated_boxes();
  if (!ev.gt_leaves.empty()) {
    MatchCoeffs coeffs{config.match_coeff_class, config.match_coeff_l1,
                       config.match_coeff_giou};
    Matrix cost = match_cost(ev.ytilde, ev.fwd.boxes, ev.gt_leaves, ev.gt_boxes,
                             forest, coeffs);
    ev.matches = hungarian(cost);
  }
  ev.breakdown.matched = static_cast<int>(ev.matches.pairs.size());

  const int q = static_cast<int>(scene.query_features.rows());
  ev.targets = build_class_targets(ev.matches, ev.gt_leaves, forest, q);
  // Leaf positives are rarer than parent positives (a parent aggregates
  // all its children), so they carry their own weight.
  std::vector<double> pos_weights(forest.size(), config.parent_pos_weight);
  for (NodeId c = forest.leaf_begin; c < forest.size(); ++c)
    pos_weights[c] = config.class_pos_weight;
  ev.cls = classification_loss(ev.ytilde, ev.targets, pos_weights);
  ev.breakdown.classification = ev.cls.loss;

  std::vector<int> relabeled;
  if (config.mode != ExperimentMode::no_relabel) {
    RelabelOutcome outcome =
        relabel(ev.ytilde, ev.matches, forest, config.relabel_aggregate);
    relabeled = outcome.relabeled;
  }
  ev.breakdown.relabeled = static_cast<int>(relabeled.size());
  ev.obj_target = objectness_target(ev.matches.matched_queries(), relabeled, q);
  ev.breakdown.target_sum =
      kernels::sum(ev.obj_target.q.data(), ev.obj_target.q.size());
  ev.breakdown.degenerate_target = ev.obj_target.degenerate();

  if (!ev.obj_target.degenerate()) {
    if (config.mode == ExperimentMode::softmax_obj) {
      auto kl = softmax_kl_loss(ev.fwd.obj_logits, ev.obj_target);
      ev.breakdown.objectness = kl->first;
      ev.obj_grad = kl->second;
    } else {
      ev.breakdown.objectness = *sparsemax_loss(ev.fwd.obj_logits, ev.obj_target);
      ev.obj_grad = *sparsemax_loss_grad(ev.fwd.obj_logits, ev.obj_target);
    }
  }

  if (!ev.matches.pairs.empty()) {
    const double inv_m = 1.0 / static_cast<double>(ev.matches.pairs.size());
    for (const auto& [g, slot] : ev.matches.pairs) {
      ev.breakdown.box_l1 += inv_m * box_l1(ev.fwd.boxes[slot], ev.gt_boxes[g]);
      ev.breakdown.box_giou +=
          inv_m * (1.0 - giou(ev.fwd.boxes[slot], ev.gt_boxes[g]));
    }
  }

  ev.breakdown.total = config.coeff_class * ev.breakdown.classification +
                       config.coeff_objectness * ev.breakdown.objectness +
                       config.coeff_l1 * ev.breakdown.box_l1 +
                       config.coeff_giou * ev.breakdown.box_giou;
  return ev;
}

}  // namespace

double step_loss(const DetectorParams& params, const Scene& scene,
                 const TaxonomyForest& forest, const ToyConfig& config) {
  return evaluate_step(params, scene, forest, config).breakdown.total;
}

StepGradients step_gradients(const DetectorParams& params, const Scene& scene,
                             const TaxonomyForest& forest,
                             const ToyConfig& config) {
  StepEval ev = evaluate_step(params, scene, forest, config);
  const std::size_t q = scene.query_features.rows();
  const std::size_t d = scene.query_features.cols();
  const std::size_t n = params.class_weights.rows();

  StepGradients sg;
  sg.breakdown = ev.breakdown;
  sg.grads.class_weights = Matrix(n, d);
  sg.grads.class_bias.assign(n, 0.0);
  sg.grads.obj_weights.assign(d, 0.0);
  sg.grads.obj_bias = 0.0;
  sg.grads.box_weights = Matrix(4, d);
  sg.grads.box_bias.assign(4, 0.0);
  sg.grads.alpha = StrengthParams::constant(static_cast<int>(n), 0.0);

  // Classification: BCE grad -> coupling backward -> sigmoid -> linear head.
  Matrix d_ytilde(q, n);
  for (std::size_t i = 0; i < d_ytilde.size(); ++i)
    d_ytilde.data()[i] = config.coeff_class * ev.cls.grad.data()[i];
  HierBackward hb = backprop_hier_activation(d_ytilde, ev.y, ev.ytilde,
                                             params.alpha, forest,
                                             config.coupling);
  for (std::size_t i = 0; i < q; ++i) {
    const double* x = scene.query_features.row(i);
    for (std::size_t c = 0; c < n; ++c) {
      const double yv = ev.y(i, c);
      const double g = hb.grad_y(i, c) * yv * (1.0 - yv);
      if (g == 0.0) continue;
      kernels::axpy(g, x, sg.grads.class_weights.row(c), d);
      sg.grads.class_bias[c] += g;
    }
  }
  if (config.mode != ExperimentMode::alpha_fixed_0)
    sg.grads.alpha.alpha = hb.grad_alpha;

  // Objectness head.
  if (ev.obj_grad) {
    for (std::size_t i = 0; i < q; ++i) {
      const double g = config.coeff_objectness * (*ev.obj_grad)[i];
      if (g == 0.0) continue;
      kernels::axpy(g, scene.query_features.row(i), sg.grads.obj_weights.data(), d);
      sg.grads.obj_bias += g;
    }
  }

  // Box heads, matched pairs only.
  if (!ev.matches.pairs.empty()) {
    const double inv_m = 1.0 / static_cast<double>(ev.matches.pairs.size());
    for (const auto& [g, slot] : ev.matches.pairs) {
      const Box& pred = ev.fwd.boxes[slot];
      const Box& gt = ev.gt_boxes[g];
      GiouGrad gg = giou_grad(pred, gt);
      const double pred_vals[4] = {pred.cx, pred.cy, pred.w, pred.h};
      const double gt_vals[4] = {gt.cx, gt.cy, gt.w, gt.h};
      const double* x = scene.query_features.row(slot);
      for (int k = 0; k < 4; ++k) {
        const double diff = pred_vals[k] - gt_vals[k];
        const double sign = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
        const double d_box = config.coeff_l1 * inv_m * sign -
                             config.coeff_giou * inv_m * gg.d_a[k];
        const double du = d_box * pred_vals[k] * (1.0 - pred_vals[k]);
        kernels::axpy(du, x, sg.grads.box_weights.row(k), d);
        sg.grads.box_bias[k] += du;
      }
    }
  }
  return sg;
}

StepBreakdown train_step(DetectorParams& params, const Scene& scene,
                         const TaxonomyForest& forest, const ToyConfig& config) {
  StepGradients sg = step_gradients(params, scene, forest, config);
  const StepBreakdown& b = sg.breakdown;
  if (!std::isfinite(b.total)) {
    std::ostringstream msg;
    msg << "non-finite loss: total=" << b.total
        << " classification=" << b.classification
        << " objectness=" << b.objectness << " box_l1=" << b.box_l1
        << " box_giou=" << b.box_giou;
    throw NumericalError(msg.str());
  }

  auto p_refs = param_refs(params);
  auto g_refs = param_refs(sg.grads);
  for (std::size_t i = 0; i < p_refs.size(); ++i) {
    if (config.mode == ExperimentMode::alpha_fixed_0 &&
        p_refs[i].first.rfind("alpha", 0) == 0)
      continue;
    *p_refs[i].second -= config.learning_rate * *g_refs[i].second;
  }
  if (config.mode != ExperimentMode::alpha_fixed_0)
    for (double& a : params.alpha.alpha)
      a = std::clamp(a, config.alpha_min, config.alpha_max);
  return b;
}

SeedResult run_seed(const ToyConfig& config, std::uint64_t seed) {
  config.validate();
  SyntheticWorld world = make_world(config, seed);
  DetectorParams params =
      DetectorParams::init(world.forest, config, Rng::mix(seed, kParamStream));

  SeedResult result;
  result.seed = seed;
  result.step_log.reserve(config.steps);
  const std::uint64_t train_base = Rng::mix(seed, kTrainStream);
  const int decay_step =
      static_cast<int>(config.lr_decay_fraction * config.steps);
  for (int t = 0; t < config.steps; ++t) {
    Scene scene = generate_scene(world, config, Rng::mix(train_base, t));
    ToyConfig step_config = config;
    if (t >= decay_step) step_config.learning_rate *= config.lr_decay_factor;
    result.step_log.push_back(
        train_step(params, scene, world.forest, step_config));
  }

  std::vector<Detection> dets;
  std::vector<GroundTruthObject> gts;
  const std::uint64_t eval_base = Rng::mix(seed, kEvalStream);
  for (int i = 0; i < config.eval_scenes; ++i) {
    Scene scene = generate_scene(world, config, Rng::mix(eval_base, i));
    ForwardResult fwd = forward(params, scene);
    Matrix y = sigmoid_activations(fwd.class_logits);
    Matrix ytilde = hier_activation(y, params.alpha, world.forest, config.coupling);
    std::vector<double> p_obj =
        config.mode == ExperimentMode::softmax_obj
            ? softmax(fwd.obj_logits)
            : sparsemax(fwd.obj_logits).probabilities;
    const std::string image = "scene-" + pad4(i);
    std::vector<Detection> decoded = decode_predictions(
        ytilde, p_obj, fwd.boxes, world.forest, config.top_k, image);
    dets.insert(dets.end(), decoded.begin(), decoded.end());
    for (const SceneObject& obj : scene.objects)
      gts.push_back({image, obj.leaf, obj.box,
                     obj.future ? GtStatus::future : GtStatus::known});
  }

  SplitConfig split;
  split.tasks = {world.known_leaves, world.future_leaves};
  split.current_task = 0;
  EvalOptions options;
  options.iou_threshold = config.iou_threshold;
  options.top_k = config.top_k;
  result.report = evaluate(dets, gts, world.forest, split, options);
  return result;
}

std::vector<SeedResult> run_experiment(const ToyConfig& config,
                                       const std::vector<std::uint64_t>& seeds) {
  std::vector<SeedResult> out;
  out.reserve(seeds.size());
  for (std::uint64_t seed : seeds) out.push_back(run_seed(config, seed));
  return out;
}

std::string experiment_to_json(const ToyConfig& config,
                               const std::vector<SeedResult>& results) {
  json j;
  j["mode"] = mode_name(config.mode);
  j["config"] = json::parse(config_to_json(config));
  json seeds = json::array();
  for (const SeedResult& r : results) {
    json entry;
    entry["seed"] = r.seed;
    entry["report"] = json::parse(report_to_json(r.report));
    long degenerate = 0;
    long relabeled = 0;
    for (const StepBreakdown& b : r.step_log) {
      if (b.degenerate_target) ++degenerate;
      relabeled += b.relabeled;
    }
    entry["degenerate_steps"] = degenerate;
    entry["relabeled_total"] = relabeled;
    seeds.push_back(entry);
  }
  j["results"] = seeds;
  return j.dump(2);
}

}  // namespace hierdet

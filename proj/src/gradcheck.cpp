#include "hierdet/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <sstream>

#include "hierdet/hierhead.hpp"
#include "hierdet/matching.hpp"
#include "hierdet/rng.hpp"
#include "hierdet/sparsemax.hpp"
#include "hierdet/toytrain.hpp"

namespace hierdet {

namespace {

// Relative disagreement with an absolute floor for near-zero gradients,
// where central differences are dominated by cancellation noise.
double rel_err(double analytic, double numeric) {
  const double diff = std::fabs(analytic - numeric);
  const double scale = std::max(std::fabs(analytic), std::fabs(numeric));
  if (diff <= 1e-9) return 0.0;
  return diff / std::max(scale, 1e-12);
}

double central_diff(const std::function<double()>& f, double& x, double h) {
  const double orig = x;
  x = orig + h;
  const double fp = f();
  x = orig - h;
  const double fm = f();
  x = orig;
  return (fp - fm) / (2.0 * h);
}

struct Check {
  GradCheckResult result;
  double tolerance;

  Check(std::string name, double tol) : tolerance(tol) {
    result.name = std::move(name);
  }
  void observe(double analytic, double numeric) {
    result.max_rel_err = std::max(result.max_rel_err, rel_err(analytic, numeric));
  }
  GradCheckResult finish(int instances) {
    result.instances = instances;
    result.passed = result.max_rel_err <= tolerance;
    return result;
  }
};

ObjectnessTarget random_target(Rng& rng, int q) {
  std::vector<int> positives;
  for (int i = 0; i < q; ++i)
    if (rng.uniform() < 0.4) positives.push_back(i);
  if (positives.empty()) positives.push_back(rng.uniform_int(0, q - 1));
  ObjectnessTarget target;
  target.positive_set = positives;
  target.q.assign(q, 0.0);
  for (int i : positives)
    target.q[i] = 1.0 / static_cast<double>(positives.size());
  return target;
}

GradCheckResult check_sparsemax_loss(const GradCheckOptions& opt) {
  Check check("sparsemax-loss", 1e-5);
  Rng rng(Rng::mix(opt.seed, 1));
  for (int inst = 0; inst < opt.instances; ++inst) {
    const int q = rng.uniform_int(2, 12);
    std::vector<double> z(q);
    for (double& v : z) v = rng.normal(0.0, 1.5);
    ObjectnessTarget target = random_target(rng, q);
    std::vector<double> grad = *sparsemax_loss_grad(z, target);
    if (opt.corrupt && inst == 0) grad[0] += 1e-3;
    for (int i = 0; i < q; ++i) {
      double numeric = central_diff(
          [&] { return *sparsemax_loss(z, target); }, z[i], opt.fd_step);
      check.observe(grad[i], numeric);
    }
  }
  return check.finish(opt.instances);
}

GradCheckResult check_softmax_kl(const GradCheckOptions& opt) {
  Check check("softmax-kl-loss", 1e-5);
  Rng rng(Rng::mix(opt.seed, 2));
  for (int inst = 0; inst < opt.instances; ++inst) {
    const int q = rng.uniform_int(2, 12);
    std::vector<double> z(q);
    for (double& v : z) v = rng.normal(0.0, 1.5);
    ObjectnessTarget target = random_target(rng, q);
    auto [loss, grad] = *softmax_kl_loss(z, target);
    (void)loss;
    for (int i = 0; i < q; ++i) {
      double numeric = central_diff(
          [&] { return softmax_kl_loss(z, target)->first; }, z[i], opt.fd_step);
      check.observe(grad[i], numeric);
    }
  }
  return check.finish(opt.instances);
}

TaxonomyForest deep_test_forest() {
  // Three levels so the two coupling modes actually differ.
  return parse_taxonomy(
      "top0 -> mid0\n"
      "top0 -> mid1\n"
      "mid0 -> leafA\n"
      "mid0 -> leafB\n"
      "mid1 -> leafC\n"
      "top1 -> leafD\n");
}

GradCheckResult check_hier_activation(const GradCheckOptions& opt,
                                      CouplingMode mode, const char* name) {
  Check check(name, 1e-5);
  TaxonomyForest forest = deep_test_forest();
  const int n = forest.size();
  Rng rng(Rng::mix(opt.seed, mode == CouplingMode::raw_parent ? 3 : 4));
  for (int inst = 0; inst < opt.instances; ++inst) {
    const int q = 2;
    Matrix logits(q, n);
    for (std::size_t i = 0; i < logits.size(); ++i)
      logits.data()[i] = rng.normal(0.0, 1.5);
    StrengthParams alpha = StrengthParams::constant(n, 0.0);
    for (double& a : alpha.alpha) a = rng.uniform(0.2, 1.5);

    Matrix y = sigmoid_activations(logits);
    Matrix out = hier_activation(y, alpha, forest, mode);

    // Upstream cotangent fixed at random values; compare the full
    // reverse-mode result against finite differences of sum(g * out).
    Matrix cotangent(q, n);
    for (std::size_t i = 0; i < cotangent.size(); ++i)
      cotangent.data()[i] = rng.normal();
    auto scalar_fn = [&] {
      Matrix y2 = sigmoid_activations(logits);
      Matrix o = hier_activation(y2, alpha, forest, mode);
      double acc = 0.0;
      for (std::size_t i = 0; i < o.size(); ++i)
        acc += cotangent.data()[i] * o.data()[i];
      return acc;
    };

    HierBackward hb = backprop_hier_activation(cotangent, y, out, alpha,
                                               forest, mode);
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const std::size_t row = i / n;
      const std::size_t col = i % n;
      const double yv = y(row, col);
      const double analytic = hb.grad_y(row, col) * yv * (1.0 - yv);
      double numeric = central_diff(scalar_fn, logits.data()[i], opt.fd_step);
      check.observe(analytic, numeric);
    }
    for (NodeId c = 0; c < n; ++c) {
      if (forest.is_root(c)) continue;
      double numeric = central_diff(scalar_fn, alpha.alpha[c], opt.fd_step);
      check.observe(hb.grad_alpha[c], numeric);
    }
    // Spot the local partials against their closed forms as well.
    HierPartials parts = hier_activation_grads(y, alpha, forest, mode);
    for (NodeId c = 0; c < n; ++c) {
      if (forest.is_root(c)) continue;
      const NodeId p = forest.parent[c];
      const double parent_act =
          mode == CouplingMode::raw_parent ? y(0, p) : out(0, p);
      const double expected =
          y(0, c) * std::pow(parent_act, alpha.alpha[c]) * std::log(parent_act);
      check.observe(parts.d_alpha(0, c), expected);
    }
  }
  return check.finish(opt.instances);
}

GradCheckResult check_classification_bce(const GradCheckOptions& opt) {
  Check check("classification-bce", 1e-5);
  TaxonomyForest forest = deep_test_forest();
  const int n = forest.size();
  Rng rng(Rng::mix(opt.seed, 5));
  for (int inst = 0; inst < opt.instances; ++inst) {
    const int q = 3;
    Matrix act(q, n);
    for (std::size_t i = 0; i < act.size(); ++i)
      act.data()[i] = rng.uniform(0.05, 0.95);
    ClassTargets targets{Matrix(q, n), Matrix(q, n)};
    for (std::size_t i = 0; i < targets.targets.size(); ++i) {
      targets.targets.data()[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
      targets.mask.data()[i] = rng.uniform() < 0.7 ? 1.0 : 0.0;
    }
    ClassificationLoss loss = classification_loss(act, targets);
    if (loss.all_masked) continue;
    for (std::size_t i = 0; i < act.size(); ++i) {
      double numeric = central_diff(
          [&] { return classification_loss(act, targets).loss; },
          act.data()[i], opt.fd_step);
      check.observe(loss.grad.data()[i], numeric);
    }
  }
  return check.finish(opt.instances);
}

GradCheckResult check_giou(const GradCheckOptions& opt) {
  Check check("giou", 1e-5);
  Rng rng(Rng::mix(opt.seed, 6));
  for (int inst = 0; inst < opt.instances; ++inst) {
    Box a{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.1, 0.4),
          rng.uniform(0.1, 0.4)};
    Box b{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.1, 0.4),
          rng.uniform(0.1, 0.4)};
    GiouGrad gg = giou_grad(a, b);
    double* fields[4] = {&a.cx, &a.cy, &a.w, &a.h};
    for (int k = 0; k < 4; ++k) {
      double numeric = central_diff([&] { return giou(a, b); }, *fields[k],
                                    opt.fd_step);
      check.observe(gg.d_a[k], numeric);
    }
  }
  return check.finish(opt.instances);
}

GradCheckResult check_train_step(const GradCheckOptions& opt) {
  Check check("train-step", 1e-4);
  // Tiny world so the full parameter sweep stays cheap: Q=6, N=6, d=10.
  ToyConfig config;
  config.semantic_dim = 6;
  config.queries = 6;
  config.parents = 2;
  config.leaves_per_parent = 2;
  config.future_per_parent = 1;
  config.min_objects = 1;
  config.max_objects = 3;
  config.noise_sigma = 0.3;

  Rng rng(Rng::mix(opt.seed, 7));
  int done = 0;
  for (int inst = 0; inst < opt.instances; ++inst) {
    const std::uint64_t world_seed = rng.next_u64();
    SyntheticWorld world = make_world(config, world_seed);
    DetectorParams params = DetectorParams::init(world.forest, config,
                                                 rng.next_u64());
    // Random offsets so the sweep is not tied to the init distribution.
    for (auto& [name, ptr] : param_refs(params)) {
      (void)name;
      *ptr += rng.normal(0.0, 0.2);
    }
    Scene scene = generate_scene(world, config, rng.next_u64());

    StepGradients sg = step_gradients(params, scene, world.forest, config);
    auto p_refs = param_refs(params);
    auto g_refs = param_refs(sg.grads);
    for (std::size_t i = 0; i < p_refs.size(); ++i) {
      double numeric = central_diff(
          [&] { return step_loss(params, scene, world.forest, config); },
          *p_refs[i].second, opt.fd_step);
      check.observe(*g_refs[i].second, numeric);
    }
    ++done;
  }
  return check.finish(done);
}

}  // namespace

std::vector<GradCheckResult> run_gradient_checks(const GradCheckOptions& options) {
  std::vector<GradCheckResult> results;
  results.push_back(check_sparsemax_loss(options));
  results.push_back(check_softmax_kl(options));
  results.push_back(check_hier_activation(options, CouplingMode::raw_parent,
                                          "hier-activation-raw"));
  results.push_back(check_hier_activation(options, CouplingMode::coupled_parent,
                                          "hier-activation-coupled"));
  results.push_back(check_classification_bce(options));
  results.push_back(check_giou(options));
  results.push_back(check_train_step(options));
  return results;
}

bool all_passed(const std::vector<GradCheckResult>& results) {
  for (const GradCheckResult& r : results)
    if (!r.passed) return false;
  return true;
}

std::string gradcheck_summary(const std::vector<GradCheckResult>& results) {
  std::ostringstream out;
  for (const GradCheckResult& r : results)
    out << (r.passed ? "pass" : "FAIL") << "  " << r.name << "  instances="
        << r.instances << "  max_rel_err=" << r.max_rel_err << "\n";
  return out.str();
}

}  // namespace hierdet

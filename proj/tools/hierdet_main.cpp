// Command-line front end: project / eval / toy-train / gradcheck /
// validate-taxonomy. Exit codes: 0 success, 1 usage error, 2 data or
// validation error, 3 numerical-check failure.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hierdet/eval.hpp"
#include "hierdet/gradcheck.hpp"
#include "hierdet/kernels.hpp"
#include "hierdet/sparsemax.hpp"
#include "hierdet/taxonomy.hpp"
#include "hierdet/toytrain.hpp"
#include "hierdet/version.hpp"

namespace {

using json = nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

int cmd_project(std::vector<double> logits, bool as_json) {
  if (logits.empty()) {
    // No positional logits: read a whitespace-separated vector from stdin.
    double v;
    while (std::cin >> v) logits.push_back(v);
  }
  if (logits.empty()) {
    std::cerr << "project: no logits given\n";
    return kExitUsage;
  }
  hierdet::SparseProjection proj = hierdet::sparsemax(logits);
  if (as_json) {
    json j;
    j["probabilities"] = proj.probabilities;
    j["support"] = proj.support;
    j["tau"] = proj.tau;
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "probabilities:";
    for (double p : proj.probabilities) std::cout << " " << p;
    std::cout << "\nsupport:";
    for (int i : proj.support) std::cout << " " << i;
    std::cout << "\ntau: " << proj.tau << "\n";
  }
  return kExitOk;
}

int cmd_validate_taxonomy(const std::string& path, bool as_json) {
  hierdet::TaxonomyForest forest = hierdet::load_taxonomy_file(path);
  std::vector<hierdet::Diagnostic> diags = hierdet::validate(forest);
  if (as_json) {
    json j;
    j["valid"] = diags.empty();
    j["nodes"] = forest.size();
    j["leaves"] = forest.num_leaves();
    j["roots"] = static_cast<int>(forest.roots().size());
    json d = json::array();
    for (const auto& diag : diags)
      d.push_back({{"code", diag.code}, {"message", diag.message}});
    j["diagnostics"] = d;
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "nodes: " << forest.size() << "  leaves: "
              << forest.num_leaves() << "  roots: " << forest.roots().size()
              << "\n";
    for (const auto& diag : diags)
      std::cerr << diag.code << ": " << diag.message << "\n";
    std::cout << (diags.empty() ? "ok" : "invalid") << "\n";
  }
  return diags.empty() ? kExitOk : kExitData;
}

int cmd_eval(const std::string& gt_path, const std::string& dets_path,
             const std::string& taxonomy_path, const std::string& split_path,
             double iou, int topk, bool as_json) {
  hierdet::TaxonomyForest forest = hierdet::load_taxonomy_file(taxonomy_path);
  auto gts = hierdet::load_ground_truth(gt_path, forest);
  auto dets = hierdet::load_detections(dets_path, forest);
  hierdet::SplitConfig split = hierdet::load_split(split_path, forest);
  hierdet::EvalOptions options;
  options.iou_threshold = iou;
  options.top_k = topk;
  hierdet::EvalReport report =
      hierdet::evaluate(dets, gts, forest, split, options);
  std::cout << hierdet::report_to_json(report) << "\n";
  if (!as_json) std::cerr << hierdet::report_to_table(report);
  return kExitOk;
}

int cmd_toy_train(const std::string& mode, int seeds,
                  const std::string& config_path, const std::string& out_path,
                  int steps_override) {
  hierdet::ToyConfig config;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw hierdet::DataError("cannot open config: " + config_path);
    std::ostringstream buf;
    buf << in.rdbuf();
    config = hierdet::config_from_json(buf.str());
  }
  config.mode = hierdet::parse_mode(mode);
  if (steps_override >= 0) config.steps = steps_override;
  config.validate();

  std::vector<std::uint64_t> seed_list;
  for (int s = 1; s <= seeds; ++s) seed_list.push_back(s);
  auto results = hierdet::run_experiment(config, seed_list);
  const std::string doc = hierdet::experiment_to_json(config, results);
  if (out_path.empty()) {
    std::cout << doc << "\n";
  } else {
    std::ofstream out(out_path);
    if (!out) throw hierdet::DataError("cannot write output: " + out_path);
    out << doc << "\n";
    std::cerr << "wrote " << out_path << "\n";
  }
  return kExitOk;
}

int cmd_gradcheck(int instances, std::uint64_t seed, bool corrupt,
                  bool as_json) {
  hierdet::GradCheckOptions options;
  options.instances = instances;
  options.seed = seed;
  options.corrupt = corrupt;
  auto results = hierdet::run_gradient_checks(options);
  if (as_json) {
    json j = json::array();
    for (const auto& r : results)
      j.push_back({{"name", r.name},
                   {"instances", r.instances},
                   {"max_rel_err", r.max_rel_err},
                   {"passed", r.passed}});
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << hierdet::gradcheck_summary(results);
  }
  return hierdet::all_passed(results) ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchy-aware open-world detection toolkit"};
  app.set_version_flag(
      "--version", std::string("hierdet ") + hierdet::kVersion + " (kernels: " +
                       hierdet::kernels::active_name() + ")");
  app.require_subcommand(1);
  bool as_json = false;
  app.add_flag("--json", as_json, "emit machine-readable JSON on stdout");

  auto* project = app.add_subcommand(
      "project", "project a logit vector onto the probability simplex");
  std::vector<double> logits;
  project->add_option("logits", logits,
                      "whitespace-separated logits (stdin when omitted)");

  auto* validate = app.add_subcommand("validate-taxonomy",
                                      "check a taxonomy file's invariants");
  std::string taxonomy_path;
  validate->add_option("file", taxonomy_path, "taxonomy edge-list file")
      ->required();

  auto* eval = app.add_subcommand("eval", "open-world detection metrics");
  std::string gt_path, dets_path, eval_taxonomy, split_path;
  double iou = 0.5;
  int topk = 100;
  eval->add_option("--gt", gt_path, "ground-truth JSONL")->required();
  eval->add_option("--dets", dets_path, "detections JSONL")->required();
  eval->add_option("--taxonomy", eval_taxonomy, "taxonomy file")->required();
  eval->add_option("--split", split_path, "task split config")->required();
  eval->add_option("--iou", iou, "IoU threshold");
  eval->add_option("--topk", topk, "per-image detection cap");

  auto* toy = app.add_subcommand("toy-train",
                                 "train the synthetic detector and evaluate");
  std::string mode = "full", config_path, out_path;
  int seeds = 5;
  int steps_override = -1;
  toy->add_option("--mode", mode, "full | softmax-obj | no-relabel | alpha-fixed-0");
  toy->add_option("--seeds", seeds, "number of seeds (1..N)");
  toy->add_option("--config", config_path, "flat JSON config file");
  toy->add_option("--out", out_path, "output JSON path (stdout when omitted)");
  toy->add_option("--steps", steps_override, "override training step count");

  auto* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference verification of every analytic gradient");
  int instances = 50;
  std::uint64_t gc_seed = 20240817;
  bool corrupt = false;
  gradcheck->add_option("--instances", instances, "random instances per check");
  gradcheck->add_option("--seed", gc_seed, "rng seed");
  gradcheck->add_flag("--corrupt", corrupt)->group("");  // test hook

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (project->parsed()) return cmd_project(logits, as_json);
    if (validate->parsed()) return cmd_validate_taxonomy(taxonomy_path, as_json);
    if (eval->parsed())
      return cmd_eval(gt_path, dets_path, eval_taxonomy, split_path, iou, topk,
                      as_json);
    if (toy->parsed())
      return cmd_toy_train(mode, seeds, config_path, out_path, steps_override);
    if (gradcheck->parsed())
      return cmd_gradcheck(instances, gc_seed, corrupt, as_json);
  } catch (const hierdet::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const hierdet::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const hierdet::TaxonomyError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

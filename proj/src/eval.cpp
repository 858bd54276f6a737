#include "hierdet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace hierdet {

namespace {

using json = nlohmann::json;

std::vector<int> sorted_by_score(const std::vector<Detection>& dets,
                                 const std::vector<int>& indices) {
  std::vector<int> order = indices;
  // Stable: score ties keep record order.
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return dets[a].score > dets[b].score;
  });
  return order;
}

std::map<std::string, std::vector<int>> group_by_image(
    const std::vector<GroundTruthObject>& gts) {
  std::map<std::string, std::vector<int>> out;
  for (int i = 0; i < static_cast<int>(gts.size()); ++i)
    out[gts[i].image_id].push_back(i);
  return out;
}

struct ClassApResult {
  double ap = 0.0;
  long tp = 0;
  std::vector<int> unmatched_dets;  // record indices of FP detections
};

// Greedy score-ordered matching against the class ground truths, then the
// area under the continuous precision envelope.
ClassApResult class_ap(const std::vector<Detection>& dets,
                       const std::vector<int>& class_dets,
                       const std::vector<GroundTruthObject>& gts,
                       const std::vector<int>& class_gts,
                       double iou_threshold) {
  ClassApResult result;
  const std::vector<int> order = sorted_by_score(dets, class_dets);
  std::vector<char> gt_taken(class_gts.size(), 0);

  std::vector<char> is_tp(order.size(), 0);
  for (std::size_t d = 0; d < order.size(); ++d) {
    const Detection& det = dets[order[d]];
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < class_gts.size(); ++g) {
      if (gt_taken[g]) continue;
      const GroundTruthObject& gt = gts[class_gts[g]];
      if (gt.image_id != det.image_id) continue;
      double overlap = iou(det.box, gt.box);
      if (overlap >= iou_threshold && overlap > best_iou) {
        best_iou = overlap;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      gt_taken[best] = 1;
      is_tp[d] = 1;
      ++result.tp;
    } else {
      result.unmatched_dets.push_back(order[d]);
    }
  }

  const double n_gt = static_cast<double>(class_gts.size());
  std::vector<double> precision(order.size()), recall(order.size());
  long tp = 0;
  for (std::size_t d = 0; d < order.size(); ++d) {
    if (is_tp[d]) ++tp;
    precision[d] = static_cast<double>(tp) / static_cast<double>(d + 1);
    recall[d] = static_cast<double>(tp) / n_gt;
  }
  // Precision envelope, integrated over recall increments.
  double env = 0.0;
  double ap = 0.0;
  double prev_recall = 1.0;
  for (std::size_t d = order.size(); d-- > 0;) {
    env = std::max(env, precision[d]);
    prev_recall = d > 0 ? recall[d - 1] : 0.0;
    ap += (recall[d] - prev_recall) * env;
  }
  result.ap = ap;
  return result;
}

struct FutureMatching {
  std::vector<int> future_gts;   // record indices
  std::vector<int> recalled_by;  // detection record index or -1, per future gt
  std::vector<char> aose_counted;
};

FutureMatching match_future(const std::vector<Detection>& dets,
                            const std::vector<GroundTruthObject>& gts,
                            double iou_threshold) {
  FutureMatching fm;
  std::map<std::string, std::vector<int>> future_by_image;
  for (int i = 0; i < static_cast<int>(gts.size()); ++i) {
    if (gts[i].status != GtStatus::future) continue;
    future_by_image[gts[i].image_id].push_back(static_cast<int>(fm.future_gts.size()));
    fm.future_gts.push_back(i);
  }
  fm.recalled_by.assign(fm.future_gts.size(), -1);
  fm.aose_counted.assign(fm.future_gts.size(), 0);
  if (fm.future_gts.empty()) return fm;

  // Unknown detections claim future ground truths greedily by score; each
  // detection covers at most one gt and vice versa.
  std::vector<int> unknown_dets;
  for (int i = 0; i < static_cast<int>(dets.size()); ++i)
    if (dets[i].kind == DetectionKind::unknown_nonleaf) unknown_dets.push_back(i);
  for (int d : sorted_by_score(dets, unknown_dets)) {
    auto it = future_by_image.find(dets[d].image_id);
    if (it == future_by_image.end()) continue;
    int best = -1;
    double best_iou = 0.0;
    for (int f : it->second) {
      if (fm.recalled_by[f] >= 0) continue;
      double overlap = iou(dets[d].box, gts[fm.future_gts[f]].box);
      if (overlap >= iou_threshold && overlap > best_iou) {
        best_iou = overlap;
        best = f;
      }
    }
    if (best >= 0) fm.recalled_by[best] = d;
  }

  // Remaining future gts are open-set errors when their best-overlapping
  // detection claims a leaf class.
  std::map<std::string, std::vector<int>> dets_by_image;
  for (int i = 0; i < static_cast<int>(dets.size()); ++i)
    dets_by_image[dets[i].image_id].push_back(i);
  for (std::size_t f = 0; f < fm.future_gts.size(); ++f) {
    if (fm.recalled_by[f] >= 0) continue;
    const GroundTruthObject& gt = gts[fm.future_gts[f]];
    auto it = dets_by_image.find(gt.image_id);
    if (it == dets_by_image.end()) continue;
    int best = -1;
    double best_iou = 0.0;
    for (int d : it->second) {
      double overlap = iou(dets[d].box, gt.box);
      if (overlap < iou_threshold) continue;
      bool better = overlap > best_iou ||
                    (overlap == best_iou && best >= 0 &&
                     dets[d].score > dets[best].score);
      if (best < 0 || better) {
        best_iou = overlap;
        best = d;
      }
    }
    if (best >= 0 && dets[best].kind == DetectionKind::known_leaf)
      fm.aose_counted[f] = 1;
  }
  return fm;
}

std::vector<int> apply_top_k(const std::vector<Detection>& dets, int top_k) {
  std::map<std::string, std::vector<int>> by_image;
  for (int i = 0; i < static_cast<int>(dets.size()); ++i)
    by_image[dets[i].image_id].push_back(i);
  std::vector<int> keep;
  for (auto& [image, indices] : by_image) {
    std::vector<int> order = sorted_by_score(dets, indices);
    if (static_cast<int>(order.size()) > top_k) order.resize(top_k);
    keep.insert(keep.end(), order.begin(), order.end());
  }
  std::sort(keep.begin(), keep.end());  // restore record order
  return keep;
}

Box parse_box(const json& j, const std::string& context) {
  if (!j.is_array() || j.size() != 4)
    throw DataError("malformed box in " + context);
  Box b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
        j[3].get<double>()};
  if (!(b.w >= 0.0) || !(b.h >= 0.0))
    throw DataError("negative box extent in " + context);
  return b;
}

}  // namespace

std::vector<NodeId> SplitConfig::known_leaves() const {
  std::vector<NodeId> out;
  for (int t = 0; t <= current_task && t < static_cast<int>(tasks.size()); ++t)
    out.insert(out.end(), tasks[t].begin(), tasks[t].end());
  return out;
}

std::vector<NodeId> SplitConfig::previous_leaves() const {
  std::vector<NodeId> out;
  for (int t = 0; t < current_task && t < static_cast<int>(tasks.size()); ++t)
    out.insert(out.end(), tasks[t].begin(), tasks[t].end());
  return out;
}

std::vector<NodeId> SplitConfig::current_leaves() const {
  if (current_task < 0 || current_task >= static_cast<int>(tasks.size()))
    return {};
  return tasks[current_task];
}

std::vector<Detection> decode_predictions(const Matrix& activations,
                                          const std::vector<double>& objectness,
                                          const std::vector<Box>& boxes,
                                          const TaxonomyForest& forest,
                                          int top_k,
                                          const std::string& image_id) {
  if (top_k < 1) throw std::invalid_argument("decode_predictions: top_k < 1");
  const std::size_t num_queries = activations.rows();
  if (objectness.size() != num_queries || boxes.size() != num_queries)
    throw std::invalid_argument("decode_predictions: shape mismatch");
  if (static_cast<int>(activations.cols()) != forest.size())
    throw std::invalid_argument("decode_predictions: column/node mismatch");

  std::vector<Detection> all(num_queries);
  for (std::size_t q = 0; q < num_queries; ++q) {
    const double* row = activations.row(q);
    NodeId best = 0;
    for (NodeId c = 1; c < forest.size(); ++c)
      if (row[c] > row[best]) best = c;
    Detection& det = all[q];
    det.image_id = image_id;
    det.node = best;
    det.box = boxes[q];
    det.score = objectness[q] * row[best];
    det.kind = forest.is_leaf(best) ? DetectionKind::known_leaf
                                    : DetectionKind::unknown_nonleaf;
  }

  std::vector<int> indices(num_queries);
  std::iota(indices.begin(), indices.end(), 0);
  std::vector<int> order = sorted_by_score(all, indices);
  if (static_cast<int>(order.size()) > top_k) order.resize(top_k);
  std::sort(order.begin(), order.end());  // keep query order among retained
  std::vector<Detection> out;
  out.reserve(order.size());
  for (int i : order) out.push_back(all[i]);
  return out;
}

std::optional<double> average_precision(const std::vector<Detection>& dets,
                                        const std::vector<GroundTruthObject>& gts,
                                        NodeId leaf, double iou_threshold) {
  std::vector<int> class_dets, class_gts;
  for (int i = 0; i < static_cast<int>(dets.size()); ++i)
    if (dets[i].node == leaf && dets[i].kind == DetectionKind::known_leaf)
      class_dets.push_back(i);
  for (int i = 0; i < static_cast<int>(gts.size()); ++i)
    if (gts[i].leaf == leaf && gts[i].status == GtStatus::known)
      class_gts.push_back(i);
  if (class_gts.empty()) return std::nullopt;
  return class_ap(dets, class_dets, gts, class_gts, iou_threshold).ap;
}

std::optional<double> unknown_recall(const std::vector<Detection>& dets,
                                     const std::vector<GroundTruthObject>& gts,
                                     double iou_threshold) {
  FutureMatching fm = match_future(dets, gts, iou_threshold);
  if (fm.future_gts.empty()) return std::nullopt;
  long recalled = std::count_if(fm.recalled_by.begin(), fm.recalled_by.end(),
                                [](int d) { return d >= 0; });
  return static_cast<double>(recalled) /
         static_cast<double>(fm.future_gts.size());
}

long aose(const std::vector<Detection>& dets,
          const std::vector<GroundTruthObject>& gts, double iou_threshold) {
  FutureMatching fm = match_future(dets, gts, iou_threshold);
  return std::count(fm.aose_counted.begin(), fm.aose_counted.end(), 1);
}

std::optional<double> hacc(const std::vector<UnknownMatch>& matches,
                           const TaxonomyForest& forest) {
  if (matches.empty()) return std::nullopt;
  long correct = 0;
  for (const UnknownMatch& m : matches) {
    NodeId parent = forest.parent[m.gt_leaf];
    if (parent >= 0 && m.predicted == parent) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(matches.size());
}

std::optional<double> wilderness_impact(const EvalCounts& counts) {
  const long denom = counts.tp_known + counts.fp_known;
  if (denom <= 0) return std::nullopt;
  return static_cast<double>(counts.fp_unknown) / static_cast<double>(denom);
}

EvalReport evaluate(const std::vector<Detection>& all_dets,
                    const std::vector<GroundTruthObject>& gts,
                    const TaxonomyForest& forest, const SplitConfig& split,
                    const EvalOptions& options) {
  EvalReport report;

  std::vector<Detection> dets;
  for (int i : apply_top_k(all_dets, options.top_k)) dets.push_back(all_dets[i]);

  const std::vector<NodeId> known = split.known_leaves();
  const std::set<NodeId> known_set(known.begin(), known.end());

  for (const GroundTruthObject& gt : gts) {
    const bool in_known = known_set.count(gt.leaf) > 0;
    if (gt.status == GtStatus::known && !in_known)
      report.diagnostics.push_back("gt status known but class not in split: " +
                                   forest.nodes[gt.leaf].name);
    if (gt.status == GtStatus::future && in_known)
      report.diagnostics.push_back("gt status future but class in split: " +
                                   forest.nodes[gt.leaf].name);
  }

  // Known-class AP plus the TP/FP partition of every leaf-kind detection.
  const auto gt_by_image = group_by_image(gts);
  std::set<NodeId> scored;
  std::vector<int> fp_candidates;
  for (NodeId leaf : known) {
    std::vector<int> class_dets, class_gts;
    for (int i = 0; i < static_cast<int>(dets.size()); ++i)
      if (dets[i].node == leaf && dets[i].kind == DetectionKind::known_leaf)
        class_dets.push_back(i);
    for (int i = 0; i < static_cast<int>(gts.size()); ++i)
      if (gts[i].leaf == leaf && gts[i].status == GtStatus::known)
        class_gts.push_back(i);
    if (class_gts.empty()) {
      if (!class_dets.empty()) {
        report.diagnostics.push_back("class with detections but no ground truth excluded from mAP: " +
                                     forest.nodes[leaf].name);
        fp_candidates.insert(fp_candidates.end(), class_dets.begin(),
                             class_dets.end());
      }
      continue;
    }
    ClassApResult r = class_ap(dets, class_dets, gts, class_gts,
                               options.iou_threshold);
    report.per_class_ap[forest.nodes[leaf].name] = r.ap;
    scored.insert(leaf);
    report.counts.tp_known += r.tp;
    fp_candidates.insert(fp_candidates.end(), r.unmatched_dets.begin(),
                         r.unmatched_dets.end());
  }
  // Leaf-kind detections for classes outside the known split are false
  // positives as well (the detector claimed a fine category it has no
  // evidence for).
  for (int i = 0; i < static_cast<int>(dets.size()); ++i)
    if (dets[i].kind == DetectionKind::known_leaf && !known_set.count(dets[i].node))
      fp_candidates.push_back(i);

  // A false positive that actually covers a future object is charged to
  // the unknowns (the wilderness), not to ordinary known-class error.
  for (int d : fp_candidates) {
    bool on_future = false;
    auto it = gt_by_image.find(dets[d].image_id);
    if (it != gt_by_image.end()) {
      for (int g : it->second) {
        if (gts[g].status != GtStatus::future) continue;
        if (iou(dets[d].box, gts[g].box) >= options.iou_threshold) {
          on_future = true;
          break;
        }
      }
    }
    if (on_future)
      ++report.counts.fp_unknown;
    else
      ++report.counts.fp_known;
  }

  auto partition_map = [&](const std::vector<NodeId>& leaves)
      -> std::optional<double> {
    double total = 0.0;
    int n = 0;
    for (NodeId leaf : leaves) {
      if (!scored.count(leaf)) continue;
      total += report.per_class_ap.at(forest.nodes[leaf].name);
      ++n;
    }
    if (n == 0) return std::nullopt;
    return total / n;
  };
  report.map_known = partition_map(known).value_or(0.0);
  if (split.current_task > 0) report.map_previous = partition_map(split.previous_leaves());
  report.map_current = partition_map(split.current_leaves());

  FutureMatching fm = match_future(dets, gts, options.iou_threshold);
  if (!fm.future_gts.empty()) {
    long recalled = std::count_if(fm.recalled_by.begin(), fm.recalled_by.end(),
                                  [](int d) { return d >= 0; });
    report.unknown_recall = static_cast<double>(recalled) /
                            static_cast<double>(fm.future_gts.size());
    report.aose = std::count(fm.aose_counted.begin(), fm.aose_counted.end(), 1);
    std::vector<UnknownMatch> pairs;
    for (std::size_t f = 0; f < fm.future_gts.size(); ++f)
      if (fm.recalled_by[f] >= 0)
        pairs.push_back({dets[fm.recalled_by[f]].node,
                         gts[fm.future_gts[f]].leaf});
    report.hacc = hacc(pairs, forest);
  }

  report.wi = wilderness_impact(report.counts);
  return report;
}

std::vector<GroundTruthObject> load_ground_truth(const std::string& path,
                                                 const TaxonomyForest& forest) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open ground-truth file: " + path);
  std::vector<GroundTruthObject> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("malformed ground-truth record at line " +
                      std::to_string(line_no) + ": " + e.what());
    }
    const std::string context = path + ":" + std::to_string(line_no);
    if (!j.contains("image_id") || !j.contains("class") || !j.contains("box") ||
        !j.contains("status"))
      throw DataError("missing field in ground-truth record at " + context);
    GroundTruthObject gt;
    gt.image_id = j.at("image_id").get<std::string>();
    const std::string name = j.at("class").get<std::string>();
    auto id = forest.find(name);
    if (!id) throw DataError("unknown class name in ground truth: " + name);
    if (!forest.is_leaf(*id))
      throw DataError("ground-truth class is not a leaf: " + name);
    gt.leaf = *id;
    gt.box = parse_box(j.at("box"), context);
    const std::string status = j.at("status").get<std::string>();
    if (status == "known")
      gt.status = GtStatus::known;
    else if (status == "future")
      gt.status = GtStatus::future;
    else
      throw DataError("bad status '" + status + "' at " + context);
    out.push_back(std::move(gt));
  }
  return out;
}

std::vector<Detection> load_detections(const std::string& path,
                                       const TaxonomyForest& forest) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open detections file: " + path);
  std::vector<Detection> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("malformed detection record at line " +
                      std::to_string(line_no) + ": " + e.what());
    }
    const std::string context = path + ":" + std::to_string(line_no);
    if (!j.contains("image_id") || !j.contains("node") || !j.contains("box") ||
        !j.contains("score"))
      throw DataError("missing field in detection record at " + context);
    Detection det;
    det.image_id = j.at("image_id").get<std::string>();
    const std::string name = j.at("node").get<std::string>();
    auto id = forest.find(name);
    if (!id) throw DataError("unknown node name in detections: " + name);
    det.node = *id;
    det.box = parse_box(j.at("box"), context);
    det.score = j.at("score").get<double>();
    if (!(det.score >= 0.0) || !std::isfinite(det.score))
      throw DataError("bad detection score at " + context);
    det.kind = forest.is_leaf(det.node) ? DetectionKind::known_leaf
                                        : DetectionKind::unknown_nonleaf;
    out.push_back(std::move(det));
  }
  return out;
}

SplitConfig load_split(const std::string& path, const TaxonomyForest& forest) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open split file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("malformed split config: " + std::string(e.what()));
  }
  if (!j.contains("tasks") || !j.at("tasks").is_array())
    throw DataError("split config must contain a 'tasks' array");
  SplitConfig split;
  for (const auto& task : j.at("tasks")) {
    std::vector<NodeId> leaves;
    for (const auto& name_json : task) {
      const std::string name = name_json.get<std::string>();
      auto id = forest.find(name);
      if (!id) throw DataError("unknown class name in split: " + name);
      if (!forest.is_leaf(*id))
        throw DataError("split class is not a leaf: " + name);
      leaves.push_back(*id);
    }
    split.tasks.push_back(std::move(leaves));
  }
  split.current_task = j.value("current_task", 0);
  if (split.current_task < 0 ||
      split.current_task >= static_cast<int>(split.tasks.size()))
    throw DataError("split current_task out of range");
  return split;
}

std::string report_to_json(const EvalReport& report) {
  json j;
  j["per_class_ap"] = report.per_class_ap;
  j["map_known"] = report.map_known;
  j["map_previous"] =
      report.map_previous ? json(*report.map_previous) : json(nullptr);
  j["map_current"] =
      report.map_current ? json(*report.map_current) : json(nullptr);
  j["unknown_recall"] =
      report.unknown_recall ? json(*report.unknown_recall) : json(nullptr);
  j["aose"] = report.aose;
  j["hacc"] = report.hacc ? json(*report.hacc) : json(nullptr);
  j["wi"] = report.wi ? json(*report.wi) : json(nullptr);
  j["counts"] = {{"tp_known", report.counts.tp_known},
                 {"fp_known", report.counts.fp_known},
                 {"fp_unknown", report.counts.fp_unknown}};
  j["diagnostics"] = report.diagnostics;
  return j.dump(2);
}

std::string report_to_table(const EvalReport& report) {
  std::ostringstream out;
  auto opt = [](const std::optional<double>& v) {
    if (!v) return std::string("n/a");
    std::ostringstream s;
    s << *v;
    return s.str();
  };
  out << "metric            value\n";
  out << "----------------  --------\n";
  out << "mAP (known)       " << report.map_known << "\n";
  out << "mAP (previous)    " << opt(report.map_previous) << "\n";
  out << "mAP (current)     " << opt(report.map_current) << "\n";
  out << "unknown recall    " << opt(report.unknown_recall) << "\n";
  out << "AOSE              " << report.aose << "\n";
  out << "HAcc              " << opt(report.hacc) << "\n";
  out << "WI                " << opt(report.wi) << "\n";
  out << "TP/FP/FPu         " << report.counts.tp_known << "/"
      << report.counts.fp_known << "/" << report.counts.fp_unknown << "\n";
  if (!report.per_class_ap.empty()) {
    out << "\nper-class AP\n";
    for (const auto& [name, ap] : report.per_class_ap)
      out << "  " << name << ": " << ap << "\n";
  }
  for (const auto& d : report.diagnostics) out << "note: " << d << "\n";
  return out.str();
}

}  // namespace hierdet

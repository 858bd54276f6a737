#include "hierdet/taxonomy.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace hierdet {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

struct RawDoc {
  // Name-keyed edge set and declared nodes, before id assignment.
  std::vector<std::string> names;  // insertion order
  std::map<std::string, std::string> parent_of;
  std::set<std::pair<std::string, std::string>> edge_set;
  std::vector<std::pair<std::string, std::string>> edges;

  void declare(const std::string& name) {
    if (std::find(names.begin(), names.end(), name) == names.end())
      names.push_back(name);
  }
};

}  // namespace

std::vector<NodeId> TaxonomyForest::roots() const {
  std::vector<NodeId> out;
  for (NodeId id = 0; id < size(); ++id)
    if (parent[id] < 0) out.push_back(id);
  return out;
}

NodeId TaxonomyForest::id_of(std::string_view name) const {
  auto it = name_to_id.find(std::string(name));
  if (it == name_to_id.end())
    throw TaxonomyError("unknown node name: " + std::string(name));
  return it->second;
}

std::optional<NodeId> TaxonomyForest::find(std::string_view name) const {
  auto it = name_to_id.find(std::string(name));
  if (it == name_to_id.end()) return std::nullopt;
  return it->second;
}

TaxonomyForest parse_taxonomy(std::string_view text) {
  RawDoc doc;
  std::istringstream stream{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(stream, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t arrow = t.find("->");
    if (arrow == std::string::npos) {
      // Bare name: declares an isolated node.
      if (std::find(doc.names.begin(), doc.names.end(), t) != doc.names.end())
        throw TaxonomyError("duplicate node name at line " +
                            std::to_string(line_no) + ": " + t);
      doc.declare(t);
      continue;
    }
    std::string parent = trim(t.substr(0, arrow));
    std::string child = trim(t.substr(arrow + 2));
    if (parent.empty() || child.empty())
      throw TaxonomyError("malformed edge at line " + std::to_string(line_no) +
                          ": " + t);
    if (parent == child)
      throw TaxonomyError("self edge at line " + std::to_string(line_no) +
                          ": " + t);
    if (doc.edge_set.count({parent, child}))
      throw TaxonomyError("duplicate edge at line " + std::to_string(line_no) +
                          ": " + t);
    auto existing = doc.parent_of.find(child);
    if (existing != doc.parent_of.end())
      throw TaxonomyError("node with two parents: " + child + " (" +
                          existing->second + ", " + parent + ")");
    doc.declare(parent);
    doc.declare(child);
    doc.parent_of[child] = parent;
    doc.edge_set.insert({parent, child});
    doc.edges.emplace_back(parent, child);
  }
  if (doc.names.empty()) throw TaxonomyError("empty taxonomy document");

  // Depths via parent-chain walk; a chain longer than the node count means
  // the edge relation has a cycle.
  const int n = static_cast<int>(doc.names.size());
  std::map<std::string, int> depth;
  for (const auto& name : doc.names) {
    int d = 0;
    std::string cur = name;
    while (true) {
      auto it = doc.parent_of.find(cur);
      if (it == doc.parent_of.end()) break;
      cur = it->second;
      if (++d > n) throw TaxonomyError("cycle detected involving: " + name);
    }
    depth[name] = d;
  }

  // Id assignment: non-leaves first, then the contiguous leaf block; each
  // block ordered by (depth, name).
  std::set<std::string> has_child;
  for (const auto& [p, c] : doc.edges) has_child.insert(p);

  std::vector<std::string> nonleaf, leaf;
  for (const auto& name : doc.names)
    (has_child.count(name) ? nonleaf : leaf).push_back(name);
  auto by_depth_name = [&](const std::string& a, const std::string& b) {
    if (depth[a] != depth[b]) return depth[a] < depth[b];
    return a < b;
  };
  std::sort(nonleaf.begin(), nonleaf.end(), by_depth_name);
  std::sort(leaf.begin(), leaf.end(), by_depth_name);

  TaxonomyForest forest;
  forest.leaf_begin = static_cast<NodeId>(nonleaf.size());
  auto add_node = [&](const std::string& name) {
    NodeId id = static_cast<NodeId>(forest.nodes.size());
    forest.nodes.push_back({id, name, depth[name]});
    forest.name_to_id[name] = id;
  };
  for (const auto& name : nonleaf) add_node(name);
  for (const auto& name : leaf) add_node(name);

  forest.parent.assign(forest.nodes.size(), -1);
  forest.children.assign(forest.nodes.size(), {});
  for (const auto& [p, c] : doc.edges) {
    NodeId pid = forest.name_to_id.at(p);
    NodeId cid = forest.name_to_id.at(c);
    forest.parent[cid] = pid;
    forest.children[pid].push_back(cid);
    forest.edges.emplace_back(pid, cid);
  }
  for (auto& kids : forest.children) std::sort(kids.begin(), kids.end());
  std::sort(forest.edges.begin(), forest.edges.end());
  return forest;
}

TaxonomyForest load_taxonomy_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TaxonomyError("cannot open taxonomy file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_taxonomy(buf.str());
}

std::string serialize_taxonomy(const TaxonomyForest& forest) {
  std::ostringstream out;
  for (const auto& [p, c] : forest.edges)
    out << forest.nodes[p].name << " -> " << forest.nodes[c].name << "\n";
  for (NodeId id = 0; id < forest.size(); ++id)
    if (forest.parent[id] < 0 && forest.children[id].empty())
      out << forest.nodes[id].name << "\n";
  return out.str();
}

std::vector<NodeId> ancestors(const TaxonomyForest& forest, NodeId node) {
  if (node < 0 || node >= forest.size())
    throw TaxonomyError("unknown node id: " + std::to_string(node));
  std::vector<NodeId> chain;
  NodeId cur = forest.parent[node];
  while (cur >= 0) {
    chain.push_back(cur);
    cur = forest.parent[cur];
  }
  return chain;
}

std::vector<double> multi_hot_target(const TaxonomyForest& forest,
                                     NodeId leaf) {
  if (leaf < 0 || leaf >= forest.size())
    throw TaxonomyError("unknown node id: " + std::to_string(leaf));
  if (!forest.is_leaf(leaf))
    throw TaxonomyError("node is not a leaf: " + forest.nodes[leaf].name);
  std::vector<double> target(forest.size(), 0.0);
  target[leaf] = 1.0;
  for (NodeId a : ancestors(forest, leaf)) target[a] = 1.0;
  return target;
}

std::vector<Diagnostic> validate(const TaxonomyForest& forest) {
  std::vector<Diagnostic> out;
  const int n = forest.size();

  if (static_cast<int>(forest.parent.size()) != n ||
      static_cast<int>(forest.children.size()) != n) {
    out.push_back({"shape", "parent/children arrays do not match node count"});
    return out;
  }

  std::set<std::string> seen;
  for (const auto& node : forest.nodes) {
    if (node.name.empty())
      out.push_back({"empty-name", "node " + std::to_string(node.id)});
    if (!seen.insert(node.name).second)
      out.push_back({"duplicate-name", node.name});
  }

  // At most one parent is structural in the parent array; cross-check edges.
  std::map<NodeId, int> parent_count;
  for (const auto& [p, c] : forest.edges) {
    if (p < 0 || p >= n || c < 0 || c >= n) {
      out.push_back({"bad-edge", "edge endpoint out of range"});
      continue;
    }
    ++parent_count[c];
  }
  for (const auto& [c, count] : parent_count)
    if (count > 1)
      out.push_back({"two-parents", forest.nodes[c].name});

  // Acyclicity: every parent chain must terminate within n hops.
  for (NodeId id = 0; id < n; ++id) {
    NodeId cur = id;
    int hops = 0;
    while (cur >= 0 && hops <= n) {
      cur = forest.parent[cur];
      ++hops;
    }
    if (hops > n) {
      out.push_back({"cycle", "chain from " + forest.nodes[id].name +
                                  " does not terminate"});
      break;
    }
  }
  if (std::any_of(out.begin(), out.end(),
                  [](const Diagnostic& d) { return d.code == "cycle"; }))
    return out;

  for (NodeId id = 0; id < n; ++id) {
    NodeId p = forest.parent[id];
    if (p >= 0 && forest.nodes[id].depth != forest.nodes[p].depth + 1)
      out.push_back({"depth", forest.nodes[id].name});
    if (p < 0 && forest.nodes[id].depth != 0)
      out.push_back({"depth", forest.nodes[id].name});
  }

  // Leaf block contiguity.
  for (NodeId id = 0; id < n; ++id) {
    bool leaf = forest.children[id].empty();
    if (leaf != (id >= forest.leaf_begin))
      out.push_back({"leaf-block", forest.nodes[id].name});
  }

  return out;
}

}  // namespace hierdet

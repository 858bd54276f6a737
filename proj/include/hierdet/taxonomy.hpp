#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace hierdet {

using NodeId = int;

struct NodeRecord {
  NodeId id = -1;
  std::string name;
  int depth = 0;  // roots have depth 0
};

class TaxonomyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Directed forest over class nodes. Immutable once built; ids are dense,
// assigned non-leaves first so the leaf set occupies the contiguous block
// [leaf_begin, size()). Within each block the order is depth-major and
// lexicographic by name, which makes id assignment reproducible.
struct TaxonomyForest {
  std::vector<NodeRecord> nodes;                  // indexed by id
  std::vector<NodeId> parent;                     // -1 for roots
  std::vector<std::vector<NodeId>> children;      // sorted by child id
  std::vector<std::pair<NodeId, NodeId>> edges;   // (parent, child)
  std::unordered_map<std::string, NodeId> name_to_id;
  NodeId leaf_begin = 0;

  int size() const { return static_cast<int>(nodes.size()); }
  int num_leaves() const { return size() - leaf_begin; }
  int num_nonleaf() const { return leaf_begin; }

  bool is_leaf(NodeId id) const { return id >= leaf_begin; }
  bool is_root(NodeId id) const { return parent[id] < 0; }

  std::vector<NodeId> roots() const;

  NodeId id_of(std::string_view name) const;  // throws TaxonomyError
  std::optional<NodeId> find(std::string_view name) const;
};

// Parses the edge-list format: one `Parent -> Child` per line, `#` comments,
// bare names declare isolated nodes. Throws TaxonomyError on duplicate
// names, a node with two parents, cycles, or an empty document.
TaxonomyForest parse_taxonomy(std::string_view text);

TaxonomyForest load_taxonomy_file(const std::string& path);

// Edge-list document that parses back to an identical forest.
std::string serialize_taxonomy(const TaxonomyForest& forest);

// Ancestors ordered parent-first up to the root; empty for roots.
std::vector<NodeId> ancestors(const TaxonomyForest& forest, NodeId node);

// 0/1 vector over all nodes with ones at `leaf` and each of its ancestors.
std::vector<double> multi_hot_target(const TaxonomyForest& forest,
                                     NodeId leaf);

struct Diagnostic {
  std::string code;     // e.g. "cycle", "two-parents"
  std::string message;
};

// Non-throwing invariant check; returns one diagnostic per violation.
// An empty result means the forest is valid.
std::vector<Diagnostic> validate(const TaxonomyForest& forest);

}  // namespace hierdet

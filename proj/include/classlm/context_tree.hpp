#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "classlm/common.hpp"
#include "classlm/events.hpp"

namespace classlm {

/// Hierarchy over the observed contexts of an event table. Level i holds one node per
/// distinct suffix (v_i, ..., v_1); level 0 is the root and level L the individual contexts.
class ContextTree {
public:
  struct Node {
    ContextTuple key;                ///< (v_i, ..., v_1)
    Count aggregate = 0;             ///< sum of N(c) over the contexts below
    std::vector<std::size_t> children;  ///< indices into the next level
    std::vector<ContextId> contexts; ///< leaves below, ascending id
  };

  ContextTree() = default;

  std::size_t depth() const noexcept { return levels_.empty() ? 0 : levels_.size() - 1; }

  std::span<const Node> nodes_at_level(std::size_t level) const {
    if (level >= levels_.size())
      throw std::out_of_range("tree level " + std::to_string(level) + " outside [0, " + std::to_string(depth()) + "]");
    return levels_[level];
  }

  const Node &root() const { return levels_.at(0).at(0); }

  /// Node index at `level` whose key equals `suffix` (length == level).
  std::optional<std::size_t> find(std::size_t level, std::span<const FeatureId> suffix) const {
    if (level >= index_.size()) return std::nullopt;
    auto it = index_[level].find(ContextTuple(suffix.begin(), suffix.end()));
    if (it == index_[level].end()) return std::nullopt;
    return it->second;
  }

  void dump(std::ostream &os) const {
    dump_node(os, 0, 0);
  }

  friend ContextTree build_suffix_tree(const EventTable &table);

private:
  void dump_node(std::ostream &os, std::size_t level, std::size_t idx) const {
    const auto &n = levels_[level][idx];
    os << std::string(2 * level, ' ') << '(';
    for (std::size_t i = 0; i < n.key.size(); ++i) os << (i ? " " : "") << n.key[i];
    os << ") " << n.aggregate << '\n';
    for (auto c : n.children) dump_node(os, level + 1, c);
  }

  std::vector<std::vector<Node>> levels_;
  std::vector<std::map<ContextTuple, std::size_t>> index_;
};

/// Groups contexts sharing their nearest i values, for every i in [0, L].
inline ContextTree build_suffix_tree(const EventTable &table) {
  if (table.empty()) throw Error("cannot build a context tree from an empty event table");
  const std::size_t L = table.order();
  ContextTree tree;
  tree.levels_.resize(L + 1);
  tree.index_.resize(L + 1);

  for (std::size_t level = 0; level <= L; ++level) {
    std::map<ContextTuple, std::vector<ContextId>> groups;
    for (ContextId c = 0; c < table.num_contexts(); ++c) {
      auto tuple = table.context(c);
      groups[ContextTuple(tuple.end() - static_cast<std::ptrdiff_t>(level), tuple.end())].push_back(c);
    }
    auto &nodes = tree.levels_[level];
    nodes.reserve(groups.size());
    for (auto &[key, contexts] : groups) {
      ContextTree::Node n;
      n.key = key;
      for (auto c : contexts) n.aggregate += table.context_count(c);
      n.contexts = std::move(contexts);
      tree.index_[level].emplace(n.key, nodes.size());
      nodes.push_back(std::move(n));
    }
  }
  // Children are found through their own key minus its farthest value; visiting in key order
  // leaves every child list sorted.
  for (std::size_t level = 1; level <= L; ++level) {
    for (std::size_t i = 0; i < tree.levels_[level].size(); ++i) {
      const auto &key = tree.levels_[level][i].key;
      ContextTuple parent(key.begin() + 1, key.end());
      tree.levels_[level - 1][tree.index_[level - 1].at(parent)].children.push_back(i);
    }
  }
  return tree;
}

} // namespace classlm

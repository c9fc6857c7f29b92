#include "kvconsist/structures.hpp"

#include <algorithm>

namespace kvconsist {

std::string_view to_string(TreeViolation v) {
  switch (v) {
    case TreeViolation::kEmpty: return "empty";
    case TreeViolation::kBadIndex: return "bad-index";
    case TreeViolation::kDuplicateId: return "duplicate-id";
    case TreeViolation::kMultipleRoots: return "multiple-roots";
    case TreeViolation::kMultipleParents: return "multiple-parents";
    case TreeViolation::kCycle: return "cycle";
    case TreeViolation::kUnreachable: return "unreachable";
    case TreeViolation::kCoverage: return "coverage";
  }
  return "?";
}

StructureError::StructureError(TreeViolation violation, const std::string& detail)
    : Error(std::string(to_string(violation)) + ": " + detail, "structure"), violation_(violation) {}

DepTree build_profile_tree(const Profile& profile) {
  if (profile.empty()) throw StructureError(TreeViolation::kEmpty, "profile has no pairs");
  DepTree tree;
  tree.root = 0;
  tree.nodes.push_back({0, std::string(kKvToken), {}});
  for (const auto& [key, value] : profile.pairs()) {
    const int key_id = static_cast<int>(tree.nodes.size());
    tree.nodes[0].children.push_back(key_id);
    tree.nodes.push_back({key_id, key, {}});
    for (auto& tok : split_tokens(value)) {
      const int id = static_cast<int>(tree.nodes.size());
      tree.nodes[static_cast<std::size_t>(key_id)].children.push_back(id);
      tree.nodes.push_back({id, std::move(tok), {}});
    }
  }
  return tree;
}

DepTree response_tree(const Tokens& tokens, const std::optional<std::vector<ParseArc>>& parse) {
  if (tokens.empty()) throw StructureError(TreeViolation::kEmpty, "response has no tokens");
  const int n = static_cast<int>(tokens.size());
  DepTree tree;
  tree.nodes.reserve(tokens.size());
  for (int i = 0; i < n; ++i) tree.nodes.push_back({i, tokens[static_cast<std::size_t>(i)], {}});

  if (!parse) {
    tree.root = 0;
    for (int i = 1; i < n; ++i) tree.nodes[static_cast<std::size_t>(i - 1)].children.push_back(i);
    return tree;
  }

  if (static_cast<int>(parse->size()) != n)
    throw StructureError(TreeViolation::kCoverage, "parse has " + std::to_string(parse->size()) +
                                                       " arcs for " + std::to_string(n) + " tokens");
  std::vector<int> head(static_cast<std::size_t>(n), -1);
  for (const auto& arc : *parse) {
    if (arc.token < 1 || arc.token > n)
      throw StructureError(TreeViolation::kBadIndex, "token index " + std::to_string(arc.token) + " out of range");
    if (arc.head < 0 || arc.head > n)
      throw StructureError(TreeViolation::kBadIndex, "head index " + std::to_string(arc.head) + " out of range");
    auto& h = head[static_cast<std::size_t>(arc.token - 1)];
    if (h != -1)
      throw StructureError(TreeViolation::kMultipleParents, "token " + std::to_string(arc.token) + " listed twice");
    h = arc.head;
  }
  int root = -1;
  for (int i = 0; i < n; ++i) {
    const int h = head[static_cast<std::size_t>(i)];
    if (h == 0) {
      if (root != -1) throw StructureError(TreeViolation::kMultipleRoots, "tokens " + std::to_string(root + 1) +
                                                                              " and " + std::to_string(i + 1));
      root = i;
    }
  }
  if (root == -1) throw StructureError(TreeViolation::kCycle, "no token is headed by the root");
  for (int i = 0; i < n; ++i) {
    const int h = head[static_cast<std::size_t>(i)];
    if (h != 0) tree.nodes[static_cast<std::size_t>(h - 1)].children.push_back(i);
  }
  tree.root = root;
  validate_tree(tree);
  return tree;
}

std::vector<int> dfs_order(const DepTree& tree) {
  std::vector<int> order;
  order.reserve(tree.size());
  // (node, next child index) frames; iterative to survive deep chains.
  std::vector<std::pair<int, std::size_t>> stack{{tree.root, 0}};
  while (!stack.empty()) {
    auto& [id, next] = stack.back();
    const auto& children = tree.node(id).children;
    if (next < children.size()) {
      const int child = children[next++];
      stack.emplace_back(child, 0);
    } else {
      order.push_back(id);
      stack.pop_back();
    }
  }
  return order;
}

void validate_tree(const DepTree& tree) {
  const int n = static_cast<int>(tree.size());
  if (n == 0) throw StructureError(TreeViolation::kEmpty, "tree has no nodes");
  if (tree.root < 0 || tree.root >= n)
    throw StructureError(TreeViolation::kBadIndex, "root id " + std::to_string(tree.root) + " out of range");

  std::vector<int> parent(static_cast<std::size_t>(n), -1);
  for (int i = 0; i < n; ++i) {
    const auto& node = tree.nodes[static_cast<std::size_t>(i)];
    if (node.id != i)
      throw StructureError(TreeViolation::kDuplicateId, "node at slot " + std::to_string(i) + " carries id " +
                                                            std::to_string(node.id));
    for (int c : node.children) {
      if (c < 0 || c >= n) throw StructureError(TreeViolation::kBadIndex, "child id " + std::to_string(c) + " out of range");
      if (c == i) throw StructureError(TreeViolation::kCycle, "node " + std::to_string(i) + " is its own child");
      auto& p = parent[static_cast<std::size_t>(c)];
      if (p != -1) throw StructureError(TreeViolation::kMultipleParents, "node " + std::to_string(c) + " has two parents");
      p = i;
    }
  }
  if (parent[static_cast<std::size_t>(tree.root)] != -1)
    throw StructureError(TreeViolation::kCycle, "root " + std::to_string(tree.root) + " has a parent");
  for (int i = 0; i < n; ++i)
    if (i != tree.root && parent[static_cast<std::size_t>(i)] == -1)
      throw StructureError(TreeViolation::kUnreachable, "node " + std::to_string(i) + " has no parent and is not the root");

  // Every non-root node has exactly one parent here, so anything the root
  // cannot reach sits on a parent cycle.
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  std::vector<int> stack{tree.root};
  int reached = 0;
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    if (seen[static_cast<std::size_t>(id)]) throw StructureError(TreeViolation::kCycle, "node " + std::to_string(id) + " revisited");
    seen[static_cast<std::size_t>(id)] = 1;
    ++reached;
    for (int c : tree.nodes[static_cast<std::size_t>(id)].children) stack.push_back(c);
  }
  if (reached != n) {
    const auto it = std::find(seen.begin(), seen.end(), 0);
    throw StructureError(TreeViolation::kCycle,
                         "node " + std::to_string(it - seen.begin()) + " lies on a cycle detached from the root");
  }
}

}  // namespace kvconsist

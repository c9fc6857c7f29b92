#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kvconsist/core.hpp"

namespace kvconsist {

inline constexpr std::string_view kKvToken = "[KV]";

enum class TreeViolation {
  kEmpty,
  kBadIndex,
  kDuplicateId,
  kMultipleRoots,
  kMultipleParents,
  kCycle,
  kUnreachable,
  kCoverage,
};

std::string_view to_string(TreeViolation v);

class StructureError : public Error {
 public:
  StructureError(TreeViolation violation, const std::string& detail);
  TreeViolation violation() const noexcept { return violation_; }

 private:
  TreeViolation violation_;
};

struct DepNode {
  int id = 0;
  std::string token;
  std::vector<int> children;

  friend bool operator==(const DepNode&, const DepNode&) = default;
};

/// Rooted dependency tree. Node ids index `nodes` directly (0..n-1).
struct DepTree {
  int root = 0;
  std::vector<DepNode> nodes;

  std::size_t size() const { return nodes.size(); }
  const DepNode& node(int id) const { return nodes.at(static_cast<std::size_t>(id)); }

  friend bool operator==(const DepTree&, const DepTree&) = default;
};

/// [KV] root, one child per key in profile order, and each whitespace token
/// of a value as a direct child of its key.
DepTree build_profile_tree(const Profile& profile);

/// Mirrors `parse` when given; otherwise a right-branching chain rooted at
/// the first token. Response token i (1-based) becomes node i-1.
DepTree response_tree(const Tokens& tokens, const std::optional<std::vector<ParseArc>>& parse);

/// Post-order: descendants before ancestors, children in stored order, root last.
std::vector<int> dfs_order(const DepTree& tree);

void validate_tree(const DepTree& tree);

}  // namespace kvconsist

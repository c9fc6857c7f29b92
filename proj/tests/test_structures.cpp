#include <algorithm>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "kvconsist/structures.hpp"

namespace kvconsist {
namespace {

std::vector<std::string> tokens_in_order(const DepTree& t, const std::vector<int>& order) {
  std::vector<std::string> out;
  for (int id : order) out.push_back(t.node(id).token);
  return out;
}

TreeViolation violation_of(const DepTree& t) {
  try {
    validate_tree(t);
  } catch (const StructureError& e) {
    return e.violation();
  }
  ADD_FAILURE() << "tree validated unexpectedly";
  return TreeViolation::kEmpty;
}

TEST(ProfileTree, FigureExample) {
  const Profile p({{"gender", "female"}, {"location", "Beijing"}, {"constellation", "Leo"}});
  const DepTree t = build_profile_tree(p);
  ASSERT_EQ(t.size(), 7u);
  EXPECT_EQ(t.node(t.root).token, kKvToken);
  ASSERT_EQ(t.node(t.root).children.size(), 3u);
  EXPECT_EQ(t.node(t.node(t.root).children[1]).token, "location");
  EXPECT_EQ(tokens_in_order(t, dfs_order(t)),
            (std::vector<std::string>{"female", "gender", "Beijing", "location", "Leo", "constellation", "[KV]"}));
  EXPECT_NO_THROW(validate_tree(t));
}

TEST(ProfileTree, SinglePairAndMultiTokenValue) {
  const DepTree a = build_profile_tree(Profile({{"gender", "male"}}));
  EXPECT_EQ(tokens_in_order(a, dfs_order(a)), (std::vector<std::string>{"male", "gender", "[KV]"}));

  const DepTree b = build_profile_tree(Profile({{"location", "Henan Anyang"}}));
  ASSERT_EQ(b.size(), 4u);
  const int key = b.node(b.root).children.at(0);
  ASSERT_EQ(b.node(key).children.size(), 2u);
  EXPECT_EQ(b.node(b.node(key).children[0]).token, "Henan");
  EXPECT_EQ(b.node(b.node(key).children[1]).token, "Anyang");
}

TEST(ProfileTree, NodeCountProperty) {
  std::mt19937_64 rng(11);
  const std::vector<std::string> keys{"gender", "location", "constellation"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<AttributePair> pairs;
    std::size_t expected = 1;
    for (const auto& k : keys) {
      if (rng() % 3 == 0 && !pairs.empty()) continue;
      const int n = 1 + static_cast<int>(rng() % 4);
      std::string v;
      for (int i = 0; i < n; ++i) v += (i ? " w" : "w") + std::to_string(i);
      pairs.push_back({k, v});
      expected += 1 + static_cast<std::size_t>(n);
    }
    const Profile p(pairs);
    const DepTree t = build_profile_tree(p);
    EXPECT_EQ(t.size(), expected);
    EXPECT_EQ(build_profile_tree(p), t);
  }
}

TEST(ResponseTree, FallbackChain) {
  const DepTree one = response_tree({"hi"}, std::nullopt);
  EXPECT_EQ(one.size(), 1u);
  const DepTree t = response_tree({"a", "b", "c", "d"}, std::nullopt);
  EXPECT_EQ(t.root, 0);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(t.node(i).children, std::vector<int>{i + 1});
  EXPECT_EQ(tokens_in_order(t, dfs_order(t)), (std::vector<std::string>{"d", "c", "b", "a"}));
}

TEST(ResponseTree, MirrorsParse) {
  const DepTree t = response_tree({"t1", "t2", "t3"}, std::vector<ParseArc>{{1, 2}, {2, 0}, {3, 2}});
  EXPECT_EQ(t.node(t.root).token, "t2");
  EXPECT_EQ(t.node(t.root).children, (std::vector<int>{0, 2}));
  EXPECT_EQ(tokens_in_order(t, dfs_order(t)), (std::vector<std::string>{"t1", "t3", "t2"}));
}

TEST(ResponseTree, RejectsBadParses) {
  const Tokens toks{"a", "b", "c"};
  auto violation = [&](std::vector<ParseArc> arcs) {
    try {
      response_tree(toks, arcs);
    } catch (const StructureError& e) {
      return e.violation();
    }
    ADD_FAILURE() << "parse accepted";
    return TreeViolation::kEmpty;
  };
  EXPECT_EQ(violation({{1, 0}, {2, 0}, {3, 1}}), TreeViolation::kMultipleRoots);
  EXPECT_EQ(violation({{1, 2}, {2, 3}, {3, 1}}), TreeViolation::kCycle);
  EXPECT_EQ(violation({{1, 0}, {2, 3}, {3, 2}}), TreeViolation::kCycle);
  EXPECT_EQ(violation({{1, 0}, {2, 7}, {3, 1}}), TreeViolation::kBadIndex);
  EXPECT_EQ(violation({{1, 0}, {2, 1}}), TreeViolation::kCoverage);
  EXPECT_EQ(violation({{1, 0}, {1, 1}, {3, 1}}), TreeViolation::kMultipleParents);
  EXPECT_EQ(violation({{1, 0}, {2, 2}, {3, 1}}), TreeViolation::kCycle);
}

TEST(ValidateTree, Violations) {
  DepTree ok;
  ok.nodes = {{0, "r", {1, 2}}, {1, "a", {}}, {2, "b", {}}};
  EXPECT_NO_THROW(validate_tree(ok));

  DepTree self = ok;
  self.nodes[1].children = {1};
  EXPECT_EQ(violation_of(self), TreeViolation::kCycle);

  DepTree orphan = ok;
  orphan.nodes.push_back({3, "lost", {}});
  EXPECT_EQ(violation_of(orphan), TreeViolation::kUnreachable);

  DepTree two_parents = ok;
  two_parents.nodes[1].children = {2};
  EXPECT_EQ(violation_of(two_parents), TreeViolation::kMultipleParents);

  EXPECT_EQ(violation_of(DepTree{}), TreeViolation::kEmpty);
}

TEST(DfsOrder, RandomTreesArePostOrderPermutations) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 50);
    // Random labelled tree via random parents over a shuffled id order.
    std::vector<int> ids(static_cast<std::size_t>(n));
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    DepTree t;
    t.root = ids[0];
    for (int i = 0; i < n; ++i) t.nodes.push_back({i, "x", {}});
    std::vector<int> parent(static_cast<std::size_t>(n), -1);
    for (int k = 1; k < n; ++k) {
      const int p = ids[rng() % static_cast<std::size_t>(k)];
      parent[static_cast<std::size_t>(ids[k])] = p;
      t.nodes[static_cast<std::size_t>(p)].children.push_back(ids[k]);
    }
    ASSERT_NO_THROW(validate_tree(t));
    const auto order = dfs_order(t);
    ASSERT_EQ(order.size(), static_cast<std::size_t>(n));
    std::vector<int> where(static_cast<std::size_t>(n), -1);
    for (std::size_t i = 0; i < order.size(); ++i) {
      ASSERT_EQ(where[static_cast<std::size_t>(order[i])], -1);
      where[static_cast<std::size_t>(order[i])] = static_cast<int>(i);
    }
    EXPECT_EQ(order.back(), t.root);
    for (int v = 0; v < n; ++v)
      for (int a = parent[static_cast<std::size_t>(v)]; a >= 0; a = parent[static_cast<std::size_t>(a)])
        EXPECT_LT(where[static_cast<std::size_t>(v)], where[static_cast<std::size_t>(a)]);
  }
}

}  // namespace
}  // namespace kvconsist

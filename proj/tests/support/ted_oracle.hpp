#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <queue>
#include <string>
#include <vector>

#include "layoutcomp/metrics.hpp"

// Brute-force edit distance over small ordered labeled forests: Dijkstra over edit
// scripts whose intermediate forests stay within a node budget.
namespace layoutcomp::testing {

// Three labels chosen so that every change-cost combination appears:
// 0 -> 1 changes the type, 0 -> 2 changes the geometry, 1 -> 2 changes both.
constexpr int kLabels = 3;
inline const LayoutNode kLabelNode[kLabels] = {
    {0, true, Bounds{0, 0, 72, 128}, kNoParent, 0},
    {1, true, Bounds{0, 0, 72, 128}, kNoParent, 0},
    {0, true, Bounds{0, 0, 72, 127}, kNoParent, 0},
};

struct FNode {
  int label;
  std::vector<FNode> kids;
};
using Forest = std::vector<FNode>;

inline int count(const Forest& f) {
  int n = 0;
  for (const auto& t : f) n += 1 + count(t.kids);
  return n;
}

inline std::string encode(const Forest& f) {
  std::string s;
  for (const auto& t : f) s += std::to_string(t.label) + "(" + encode(t.kids) + ")";
  return s;
}

// Every forest reachable by applying `op` to exactly one sibling list of `f` (recursively).
template <typename Op>
inline void each_list(const Forest& f, const Op& op, std::vector<Forest>& out) {
  for (auto& g : op(f)) out.push_back(std::move(g));
  for (size_t i = 0; i < f.size(); ++i) {
    std::vector<Forest> sub;
    each_list(f[i].kids, op, sub);
    for (auto& s : sub) {
      Forest g = f;
      g[i].kids = std::move(s);
      out.push_back(std::move(g));
    }
  }
}

struct Move {
  Forest to;
  std::int64_t cost;
};

inline std::vector<Move> moves(const Forest& f, const CostTable& c, int max_nodes) {
  const auto us = [](double s) { return std::llround(s * 1e6); };
  auto change = [&](int a, int b) {
    const auto& x = kLabelNode[a];
    const auto& y = kLabelNode[b];
    return (x.type_id != y.type_id ? us(c.change_type) : 0) + (x.bounds == y.bounds ? 0 : us(c.change_geometry));
  };
  std::vector<Move> out;
  // Relabel one node.
  for (int to = 0; to < kLabels; ++to) {
    std::vector<Forest> r;
    each_list(f, [&](const Forest& list) {
      std::vector<Forest> res;
      for (size_t i = 0; i < list.size(); ++i) {
        if (list[i].label == to) continue;
        Forest g = list;
        g[i].label = to;
        res.push_back(std::move(g));
      }
      return res;
    }, r);
    for (auto& g : r) out.push_back(Move{std::move(g), -1});
  }
  // Relabel cost from the single differing label in the encodings.
  for (auto& m : out) {
    const std::string a = encode(f), b = encode(m.to);
    for (size_t i = 0; i < a.size(); ++i) {
      if (a[i] != b[i]) {
        m.cost = change(a[i] - '0', b[i] - '0');
        break;
      }
    }
  }
  // Delete one node: its children take its place.
  {
    std::vector<Forest> r;
    each_list(f, [&](const Forest& list) {
      std::vector<Forest> res;
      for (size_t i = 0; i < list.size(); ++i) {
        Forest g(list.begin(), list.begin() + static_cast<long>(i));
        g.insert(g.end(), list[i].kids.begin(), list[i].kids.end());
        g.insert(g.end(), list.begin() + static_cast<long>(i) + 1, list.end());
        res.push_back(std::move(g));
      }
      return res;
    }, r);
    for (auto& g : r) out.push_back(Move{std::move(g), us(c.del)});
  }
  // Insert one node adopting a consecutive run of siblings.
  if (count(f) < max_nodes) {
    std::vector<Forest> r;
    each_list(f, [&](const Forest& list) {
      std::vector<Forest> res;
      for (size_t i = 0; i <= list.size(); ++i) {
        for (size_t j = i; j <= list.size(); ++j) {
          for (int l = 0; l < kLabels; ++l) {
            Forest g(list.begin(), list.begin() + static_cast<long>(i));
            g.push_back(FNode{l, Forest(list.begin() + static_cast<long>(i), list.begin() + static_cast<long>(j))});
            g.insert(g.end(), list.begin() + static_cast<long>(j), list.end());
            res.push_back(std::move(g));
          }
        }
      }
      return res;
    }, r);
    for (auto& g : r) out.push_back(Move{std::move(g), us(c.insert)});
  }
  return out;
}

inline std::map<std::string, std::int64_t> brute_force_from(const Forest& src, const CostTable& c, int max_nodes) {
  std::map<std::string, std::int64_t> dist;
  std::map<std::string, Forest> forms;
  using Item = std::pair<std::int64_t, std::string>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  dist[encode(src)] = 0;
  forms[encode(src)] = src;
  pq.push({0, encode(src)});
  while (!pq.empty()) {
    auto [d, key] = pq.top();
    pq.pop();
    if (d != dist[key]) continue;
    for (auto& m : moves(forms[key], c, max_nodes)) {
      const std::string k = encode(m.to);
      auto it = dist.find(k);
      if (it == dist.end() || d + m.cost < it->second) {
        dist[k] = d + m.cost;
        forms[k] = std::move(m.to);
        pq.push({d + m.cost, k});
      }
    }
  }
  return dist;
}

// All ordered trees with exactly n nodes and labels in [0, kLabels).
inline std::vector<FNode> trees_of_size(int n);
inline std::vector<Forest> forests_of_size(int n) {
  if (n == 0) return {Forest{}};
  std::vector<Forest> out;
  for (int first = 1; first <= n; ++first) {
    for (const auto& t : trees_of_size(first)) {
      for (const auto& rest : forests_of_size(n - first)) {
        Forest f{t};
        f.insert(f.end(), rest.begin(), rest.end());
        out.push_back(std::move(f));
      }
    }
  }
  return out;
}
inline std::vector<FNode> trees_of_size(int n) {
  std::vector<FNode> out;
  for (const auto& kids : forests_of_size(n - 1)) {
    for (int l = 0; l < kLabels; ++l) out.push_back(FNode{l, kids});
  }
  return out;
}

inline void append(LayoutTree& t, const FNode& n, int parent) {
  const auto& proto = kLabelNode[n.label];
  const int idx = t.add_node(proto.type_id, n.kids.empty(), proto.bounds, parent);
  for (const auto& k : n.kids) append(t, k, idx);
}

inline LayoutTree to_layout(const FNode& root) {
  LayoutTree t;
  append(t, root, kNoParent);
  return t;
}

}  // namespace layoutcomp::testing

#include "layoutcomp/synthetic.hpp"

#include <algorithm>
#include <array>
#include <random>
#include <stdexcept>

namespace layoutcomp {

namespace {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed * 0x9E3779B97F4A7C15ULL + 0x2545F4914F6CDD1DULL) {}
  int below(int n) { return n <= 1 ? 0 : static_cast<int>(engine_() % static_cast<std::uint64_t>(n)); }
  bool chance(int percent) { return below(100) < percent; }

 private:
  std::mt19937_64 engine_;
};

// Indices into the builtin manifest.
constexpr std::array<int, 9> kContainers{4, 7, 10, 13, 17, 18, 20, 24, 6};

struct Builder {
  const SyntheticParams& params;
  Rng rng;
  LayoutTree tree;
  std::vector<int> containers;
  std::vector<int> leaves;

  int pick(const std::vector<int>& pool) { return pool[static_cast<size_t>(rng.below(static_cast<int>(pool.size())))]; }

  int child_type(int parent_type, int sibling, bool container) {
    const auto& pool = container ? containers : leaves;
    if (rng.chance(60)) {
      const auto h = static_cast<size_t>(parent_type * 7 + (sibling % 2) * 3 + (container ? 1 : 0));
      return pool[h % pool.size()];
    }
    return pick(pool);
  }

  void grow(int idx, int level) {
    const Bounds pb = tree.node(idx).bounds;
    Bounds region = pb;
    if (pb.x2 - pb.x >= 4 && pb.y2 - pb.y >= 4) region = Bounds{pb.x + 1, pb.y + 1, pb.x2 - 1, pb.y2 - 1};
    const bool vertical = (region.y2 - region.y) >= (region.x2 - region.x) ? !rng.chance(15) : rng.chance(15);
    const int length = vertical ? region.y2 - region.y : region.x2 - region.x;
    int n = 1 + rng.below(params.max_children);
    n = std::min({n, length, kMaxChildren, kMaxNodes - tree.size()});
    if (n <= 0) return;
    // Random positive strip sizes summing to `length`.
    std::vector<int> weights(static_cast<size_t>(n));
    int wsum = 0;
    for (auto& w : weights) wsum += (w = 1 + rng.below(4));
    std::vector<int> sizes(static_cast<size_t>(n), 1);
    int left = length - n;
    for (int i = 0; i < n; ++i) {
      const int extra = (i == n - 1) ? left : (length - n) * weights[static_cast<size_t>(i)] / wsum;
      const int e = std::min(extra, left);
      sizes[static_cast<size_t>(i)] += e;
      left -= e;
    }
    int cursor = vertical ? region.y : region.x;
    for (int i = 0; i < n && tree.size() < kMaxNodes; ++i) {
      Bounds b = region;
      if (vertical) {
        b.y = cursor;
        b.y2 = cursor + sizes[static_cast<size_t>(i)];
      } else {
        b.x = cursor;
        b.x2 = cursor + sizes[static_cast<size_t>(i)];
      }
      cursor += sizes[static_cast<size_t>(i)];
      const bool roomy = (b.x2 - b.x) >= 6 && (b.y2 - b.y) >= 6;
      const bool container = level + 1 < params.max_depth - 1 && roomy && rng.chance(45);
      if (!container && rng.chance(30)) {
        // Leaves often hug the start of their strip on the cross axis.
        if (vertical && b.x2 - b.x >= 4) b.x2 = b.x + std::max(1, (b.x2 - b.x) / 2);
        if (!vertical && b.y2 - b.y >= 4) b.y2 = b.y + std::max(1, (b.y2 - b.y) / 2);
      }
      const int type = child_type(tree.node(idx).type_id, i, container);
      const int c = tree.add_node(type, !container, b, idx);
      if (container) grow(c, level + 1);
    }
  }
};

}  // namespace

LayoutTree generate_synthetic(std::uint64_t seed, const SyntheticParams& params) {
  if (params.max_depth < 1 || params.max_children < 1 || params.max_children > kMaxChildren || params.type_count < 2) {
    throw std::invalid_argument("synthetic params out of range");
  }
  Builder b{params, Rng(seed), {}, {}, {}};
  for (int t = 0; t < params.type_count; ++t) {
    const bool is_container = std::find(kContainers.begin(), kContainers.end(), t) != kContainers.end();
    (is_container ? b.containers : b.leaves).push_back(t);
  }
  if (b.containers.empty()) b.containers.push_back(params.type_count - 1);
  if (b.leaves.empty()) b.leaves.push_back(0);
  const bool root_container = params.max_depth > 1;
  const int root_type = b.pick(b.containers);
  b.tree.add_node(root_type, !root_container, Bounds{0, 0, kGridWidth, kGridHeight}, kNoParent);
  if (root_container) b.grow(0, 0);
  b.tree.set_source_id("synthetic-" + std::to_string(seed));
  return std::move(b.tree);
}

std::vector<LayoutTree> generate_synthetic_corpus(std::uint64_t first_seed, int count, const SyntheticParams& params) {
  std::vector<LayoutTree> out;
  out.reserve(static_cast<size_t>(std::max(0, count)));
  for (int i = 0; i < count; ++i) out.push_back(generate_synthetic(first_seed + static_cast<std::uint64_t>(i), params));
  return out;
}

}  // namespace layoutcomp

#include "layoutcomp/layout.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <sstream>

namespace layoutcomp {

LayoutTree::LayoutTree(std::vector<LayoutNode> nodes, std::string source_id)
    : nodes_(std::move(nodes)), source_id_(std::move(source_id)) {
  rebuild();
}

void LayoutTree::rebuild() {
  children_.assign(nodes_.size(), {});
  for (size_t i = 0; i < nodes_.size(); ++i) {
    auto& n = nodes_[i];
    const int p = n.parent;
    if (p >= 0 && static_cast<size_t>(p) < i) {
      children_[static_cast<size_t>(p)].push_back(static_cast<int>(i));
      n.depth = nodes_[static_cast<size_t>(p)].depth + 1;
    } else {
      n.depth = 0;
    }
  }
}

int LayoutTree::max_depth() const {
  int d = 0;
  for (const auto& n : nodes_) d = std::max(d, n.depth);
  return d;
}

int LayoutTree::add_node(int type_id, bool terminal, Bounds bounds, int parent) {
  LayoutNode n;
  n.type_id = type_id;
  n.terminal = terminal;
  n.bounds = bounds;
  n.parent = parent;
  if (parent == kNoParent) {
    if (!nodes_.empty()) throw std::invalid_argument("tree already has a root");
    n.depth = 0;
  } else {
    if (parent < 0 || parent >= size()) throw std::out_of_range("parent index out of range");
    n.depth = nodes_[static_cast<size_t>(parent)].depth + 1;
  }
  nodes_.push_back(n);
  children_.emplace_back();
  const int idx = size() - 1;
  if (parent != kNoParent) children_[static_cast<size_t>(parent)].push_back(idx);
  return idx;
}

std::string_view to_string(ValidationErrorKind kind) {
  switch (kind) {
    case ValidationErrorKind::kEmpty: return "Empty";
    case ValidationErrorKind::kContainmentViolation: return "ContainmentViolation";
    case ValidationErrorKind::kSizeLimit: return "SizeLimit";
    case ValidationErrorKind::kFanoutLimit: return "FanoutLimit";
    case ValidationErrorKind::kOrderViolation: return "OrderViolation";
    case ValidationErrorKind::kTerminalWithChildren: return "TerminalWithChildren";
    case ValidationErrorKind::kBadDepth: return "BadDepth";
    case ValidationErrorKind::kBadRoot: return "BadRoot";
  }
  return "Unknown";
}

namespace {

bool on_screen(const Bounds& b) {
  return 0 <= b.x && b.x < b.x2 && b.x2 <= kGridWidth && 0 <= b.y && b.y < b.y2 && b.y2 <= kGridHeight;
}

std::string describe(const Bounds& b) {
  std::ostringstream os;
  os << "(" << b.x << "," << b.y << "," << b.x2 << "," << b.y2 << ")";
  return os.str();
}

ValidationError error(ValidationErrorKind kind, const std::string& msg) { return {kind, msg}; }

}  // namespace

std::optional<ValidationError> check_tree(const LayoutTree& tree) {
  const auto& nodes = tree.nodes();
  if (nodes.empty()) return error(ValidationErrorKind::kEmpty, "tree has no nodes");
  if (nodes[0].parent != kNoParent) return error(ValidationErrorKind::kBadRoot, "node 0 must be the root");
  if (tree.size() > kMaxNodes) {
    return error(ValidationErrorKind::kSizeLimit,
                 "tree has " + std::to_string(tree.size()) + " nodes (limit " + std::to_string(kMaxNodes) + ")");
  }
  std::vector<int> fanout(nodes.size(), 0);
  for (size_t i = 0; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    const std::string where = "node " + std::to_string(i);
    if (i > 0) {
      if (n.parent == kNoParent) return error(ValidationErrorKind::kBadRoot, where + " has no parent");
      if (n.parent < 0 || static_cast<size_t>(n.parent) >= i) {
        return error(ValidationErrorKind::kOrderViolation, where + " is stored before its parent " + std::to_string(n.parent));
      }
    }
    if (!on_screen(n.bounds)) {
      return error(ValidationErrorKind::kContainmentViolation, where + " bounds " + describe(n.bounds) + " are out of screen");
    }
    if (i > 0) {
      const auto& p = nodes[static_cast<size_t>(n.parent)];
      if (!p.bounds.contains(n.bounds)) {
        return error(ValidationErrorKind::kContainmentViolation,
                     where + " bounds " + describe(n.bounds) + " are outside its parent " + describe(p.bounds));
      }
      if (p.terminal) {
        return error(ValidationErrorKind::kTerminalWithChildren, "node " + std::to_string(n.parent) + " is terminal but has children");
      }
      if (++fanout[static_cast<size_t>(n.parent)] > kMaxChildren) {
        return error(ValidationErrorKind::kFanoutLimit,
                     "node " + std::to_string(n.parent) + " has more than " + std::to_string(kMaxChildren) + " children");
      }
      if (n.depth != p.depth + 1) return error(ValidationErrorKind::kBadDepth, where + " has inconsistent depth");
    } else if (n.depth != 0) {
      return error(ValidationErrorKind::kBadDepth, "root depth must be 0");
    }
  }
  return std::nullopt;
}

const LayoutTree& validate_tree(const LayoutTree& tree) {
  if (auto err = check_tree(tree)) throw *err;
  return tree;
}

Bounds widen_degenerate(Bounds b) {
  if (b.x2 <= b.x) {
    if (b.x < kGridWidth) {
      b.x2 = b.x + 1;
    } else {
      b.x = kGridWidth - 1;
      b.x2 = kGridWidth;
    }
  }
  if (b.y2 <= b.y) {
    if (b.y < kGridHeight) {
      b.y2 = b.y + 1;
    } else {
      b.y = kGridHeight - 1;
      b.y2 = kGridHeight;
    }
  }
  return b;
}

namespace {

// round(v * grid / screen), half away from zero, in exact integer arithmetic.
int scale_coordinate(long long v, long long screen, int grid) {
  return static_cast<int>((2 * v * grid + screen) / (2 * screen));
}

}  // namespace

Bounds discretize_bounds(std::array<long long, 4> px, long long screen_width, long long screen_height) {
  if (screen_width <= 0 || screen_height <= 0) throw InvalidBounds("screen dimensions must be positive");
  const auto [x, y, x2, y2] = px;
  if (x < 0 || x > x2 || x2 > screen_width || y < 0 || y > y2 || y2 > screen_height) {
    std::ostringstream os;
    os << "bounds [" << x << ", " << y << ", " << x2 << ", " << y2 << "] outside " << screen_width << "x" << screen_height
       << " screen";
    throw InvalidBounds(os.str());
  }
  Bounds b{scale_coordinate(x, screen_width, kGridWidth), scale_coordinate(y, screen_height, kGridHeight),
           scale_coordinate(x2, screen_width, kGridWidth), scale_coordinate(y2, screen_height, kGridHeight)};
  return widen_degenerate(b);
}

std::string_view to_string(TraversalOrder order) { return order == TraversalOrder::kBfs ? "bfs" : "dfs"; }

TraversalOrder parse_order(std::string_view text) {
  if (text == "bfs" || text == "BFS") return TraversalOrder::kBfs;
  if (text == "dfs" || text == "DFS") return TraversalOrder::kDfs;
  throw std::invalid_argument("unknown traversal order '" + std::string(text) + "'");
}

std::vector<int> traverse(const LayoutTree& tree, TraversalOrder order) {
  std::vector<int> out;
  if (tree.empty()) return out;
  out.reserve(static_cast<size_t>(tree.size()));
  if (order == TraversalOrder::kBfs) {
    std::deque<int> queue{0};
    while (!queue.empty()) {
      const int i = queue.front();
      queue.pop_front();
      out.push_back(i);
      for (int c : tree.children(i)) queue.push_back(c);
    }
  } else {
    std::vector<int> stack{0};
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      out.push_back(i);
      const auto& ch = tree.children(i);
      for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(*it);
    }
  }
  return out;
}

LayoutTree induced_subtree(const LayoutTree& tree, const std::vector<int>& indices) {
  std::vector<int> remap(static_cast<size_t>(tree.size()), -1);
  std::vector<LayoutNode> nodes;
  nodes.reserve(indices.size());
  for (int old : indices) {
    LayoutNode n = tree.node(old);
    if (n.parent != kNoParent) {
      const int p = remap.at(static_cast<size_t>(n.parent));
      if (p < 0) throw std::invalid_argument("induced_subtree: indices are not parent-closed");
      n.parent = p;
    }
    remap[static_cast<size_t>(old)] = static_cast<int>(nodes.size());
    nodes.push_back(n);
  }
  return LayoutTree(std::move(nodes), tree.source_id());
}

LayoutTree canonicalize(const LayoutTree& tree, std::vector<int>* permutation) {
  if (tree.empty()) return tree;
  // Sort each sibling list in reading order, then re-store in preorder.
  std::vector<std::vector<int>> kids(static_cast<size_t>(tree.size()));
  for (int i = 0; i < tree.size(); ++i) {
    auto ch = tree.children(i);
    std::stable_sort(ch.begin(), ch.end(), [&](int a, int b) {
      const auto& ba = tree.node(a).bounds;
      const auto& bb = tree.node(b).bounds;
      return std::tie(ba.y, ba.x) < std::tie(bb.y, bb.x);
    });
    kids[static_cast<size_t>(i)] = std::move(ch);
  }
  std::vector<int> order;
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const int i = stack.back();
    stack.pop_back();
    order.push_back(i);
    const auto& ch = kids[static_cast<size_t>(i)];
    for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(*it);
  }
  if (permutation) {
    permutation->assign(static_cast<size_t>(tree.size()), -1);
    for (size_t n = 0; n < order.size(); ++n) (*permutation)[static_cast<size_t>(order[n])] = static_cast<int>(n);
  }
  return induced_subtree(tree, order);
}

bool is_parent_closed(const LayoutTree& tree, const std::vector<int>& indices) {
  std::vector<bool> in(static_cast<size_t>(tree.size()), false);
  for (int i : indices) {
    if (i < 0 || i >= tree.size()) return false;
    in[static_cast<size_t>(i)] = true;
  }
  if (indices.empty() || !in[0]) return false;
  for (int i : indices) {
    const int p = tree.node(i).parent;
    if (p != kNoParent && !in[static_cast<size_t>(p)]) return false;
  }
  return true;
}

int prefix_size(int tree_size, double fraction) {
  const int k = static_cast<int>(std::floor(fraction * tree_size + 0.5));
  return std::clamp(k, 1, std::max(1, tree_size));
}

PartialTree extract_partial(const LayoutTree& tree, double fraction, TraversalOrder order) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("fraction must be in (0, 1]");
  auto seq = traverse(tree, order);
  const int k = prefix_size(tree.size(), fraction);
  seq.resize(static_cast<size_t>(k));
  return PartialTree{induced_subtree(tree, seq), k, order};
}

// ---- bracket linearization ------------------------------------------------

Token Token::of(const LayoutNode& n) {
  Token t;
  t.kind = Kind::kNode;
  t.node.type_id = n.type_id;
  t.node.terminal = n.terminal;
  t.node.bounds = n.bounds;
  return t;
}

bool Token::operator==(const Token& other) const {
  if (kind != other.kind) return false;
  if (kind != Kind::kNode) return true;
  return node.type_id == other.node.type_id && node.terminal == other.node.terminal && node.bounds == other.node.bounds;
}

namespace {

void emit(const LayoutTree& tree, int i, TokenSeq& out) {
  out.push_back(Token::of(tree.node(i)));
  const auto& ch = tree.children(i);
  if (ch.size() == 1) {
    emit(tree, ch[0], out);
  } else if (ch.size() > 1) {
    out.push_back(Token::open());
    for (int c : ch) emit(tree, c, out);
    out.push_back(Token::close());
  }
}

}  // namespace

TokenSeq linearize(const LayoutTree& tree) {
  TokenSeq out;
  if (!tree.empty()) emit(tree, 0, out);
  return out;
}

TokenSeq linearize_prefix(const LayoutTree& partial, std::vector<int>* node_token_positions) {
  TokenSeq out;
  if (partial.empty()) return out;
  // The rightmost path holds every node whose subtree may still grow.
  std::vector<bool> open_path(static_cast<size_t>(partial.size()), false);
  for (int i = 0; i != kNoParent;) {
    open_path[static_cast<size_t>(i)] = true;
    const auto& ch = partial.children(i);
    i = ch.empty() ? kNoParent : ch.back();
  }
  if (node_token_positions) node_token_positions->assign(static_cast<size_t>(partial.size()), -1);

  struct Walker {
    const LayoutTree& t;
    const std::vector<bool>& open_path;
    std::vector<int>* pos;
    TokenSeq& out;
    void run(int i) {
      if (pos) (*pos)[static_cast<size_t>(i)] = static_cast<int>(out.size());
      out.push_back(Token::of(t.node(i)));
      const auto& ch = t.children(i);
      if (ch.size() == 1) {
        run(ch[0]);
      } else if (ch.size() > 1) {
        out.push_back(Token::open());
        for (int c : ch) run(c);
        if (!open_path[static_cast<size_t>(i)]) out.push_back(Token::close());
      }
    }
  };
  Walker{partial, open_path, node_token_positions, out}.run(0);
  return out;
}

LayoutTree delinearize(const TokenSeq& seq) {
  // Frames: a non-terminal awaiting its single child or an Open, or an open group.
  struct Frame {
    int node;
    bool group;
  };
  LayoutTree tree;
  std::vector<Frame> stack;

  for (const Token& tok : seq) {
    if (tok.kind == Token::Kind::kEos) break;
    if (tok.kind == Token::Kind::kOpen) {
      if (!stack.empty() && !stack.back().group) stack.back().group = true;
      continue;
    }
    if (tok.kind == Token::Kind::kClose) {
      if (!stack.empty() && !stack.back().group) stack.pop_back();  // childless non-terminal
      if (!stack.empty() && stack.back().group) stack.pop_back();
      continue;
    }
    const LayoutNode& n = tok.node;
    int parent = kNoParent;
    if (tree.empty()) {
      parent = kNoParent;
    } else if (!stack.empty()) {
      parent = stack.back().node;
      if (!stack.back().group) stack.pop_back();
    } else {
      // Root structure already complete; attach leftovers to the root when possible.
      if (tree.node(0).terminal || static_cast<int>(tree.children(0).size()) >= kMaxChildren) continue;
      parent = 0;
    }
    const int idx = tree.add_node(n.type_id, n.terminal, n.bounds, parent);
    if (!n.terminal) stack.push_back(Frame{idx, false});
  }
  if (tree.empty()) throw EmptySequence("token sequence contains no node");
  return tree;
}

}  // namespace layoutcomp

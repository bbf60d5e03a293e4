#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace layoutcomp {

inline constexpr int kGridWidth = 72;
inline constexpr int kGridHeight = 128;
inline constexpr int kMaxNodes = 100;
inline constexpr int kMaxChildren = 30;
inline constexpr int kNoParent = -1;

/// Axis-aligned box in grid units: (x, y) top-left, (x2, y2) bottom-right, exclusive.
struct Bounds {
  int x = 0;
  int y = 0;
  int x2 = 0;
  int y2 = 0;

  bool contains(const Bounds& other) const {
    return x <= other.x && y <= other.y && other.x2 <= x2 && other.y2 <= y2;
  }
  bool operator==(const Bounds&) const = default;
};

struct LayoutNode {
  int type_id = 0;
  bool terminal = true;
  Bounds bounds;
  int parent = kNoParent;
  int depth = 0;

  bool operator==(const LayoutNode&) const = default;
};

/// Rooted ordered tree stored with parents before children. Node 0 is the root.
/// Sibling order is the storage order of the children.
class LayoutTree {
 public:
  LayoutTree() = default;
  LayoutTree(std::vector<LayoutNode> nodes, std::string source_id = {});

  const std::vector<LayoutNode>& nodes() const { return nodes_; }
  const LayoutNode& node(int i) const { return nodes_.at(static_cast<size_t>(i)); }
  int size() const { return static_cast<int>(nodes_.size()); }
  bool empty() const { return nodes_.empty(); }
  const std::string& source_id() const { return source_id_; }
  void set_source_id(std::string id) { source_id_ = std::move(id); }

  const std::vector<int>& children(int i) const { return children_.at(static_cast<size_t>(i)); }
  int max_depth() const;

  /// Appends a node under `parent` (which must already exist) and returns its index.
  int add_node(int type_id, bool terminal, Bounds bounds, int parent);

  bool operator==(const LayoutTree& other) const { return nodes_ == other.nodes_; }

 private:
  void rebuild();

  std::vector<LayoutNode> nodes_;
  std::vector<std::vector<int>> children_;
  std::string source_id_;
};

enum class ValidationErrorKind {
  kEmpty,
  kContainmentViolation,
  kSizeLimit,
  kFanoutLimit,
  kOrderViolation,
  kTerminalWithChildren,
  kBadDepth,
  kBadRoot,
};

std::string_view to_string(ValidationErrorKind kind);

class ValidationError : public std::runtime_error {
 public:
  ValidationError(ValidationErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ValidationErrorKind kind() const { return kind_; }

 private:
  ValidationErrorKind kind_;
};

/// Returns the first violated invariant, if any.
std::optional<ValidationError> check_tree(const LayoutTree& tree);

/// Returns the tree unchanged when it is valid, throws ValidationError otherwise.
const LayoutTree& validate_tree(const LayoutTree& tree);

class InvalidBounds : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Pixel-space box to grid units. Degenerate results are widened by one cell.
Bounds discretize_bounds(std::array<long long, 4> pixels, long long screen_width, long long screen_height);

/// Widens zero-area boxes by one cell inside the grid.
Bounds widen_degenerate(Bounds b);

enum class TraversalOrder { kBfs, kDfs };

std::string_view to_string(TraversalOrder order);
TraversalOrder parse_order(std::string_view text);

std::vector<int> traverse(const LayoutTree& tree, TraversalOrder order);

/// Re-stores the tree in DFS preorder with children sorted in reading order (y, then x),
/// ties kept in their current order. `permutation`, when given, receives old index -> new index.
LayoutTree canonicalize(const LayoutTree& tree, std::vector<int>* permutation = nullptr);

/// Subtree induced by `indices` (must be parent-closed, root first); nodes are stored in
/// the given order and parents are remapped.
LayoutTree induced_subtree(const LayoutTree& tree, const std::vector<int>& indices);

struct PartialTree {
  LayoutTree tree;     // nodes stored in entry order
  int k = 0;           // number of given nodes
  TraversalOrder order = TraversalOrder::kDfs;
};

bool is_parent_closed(const LayoutTree& tree, const std::vector<int>& indices);

/// First k = max(1, round(fraction * |tree|)) nodes of the traversal.
PartialTree extract_partial(const LayoutTree& tree, double fraction, TraversalOrder order);
int prefix_size(int tree_size, double fraction);

// ---- bracket linearization ------------------------------------------------

struct Token {
  enum class Kind : std::uint8_t { kNode, kOpen, kClose, kEos };
  Kind kind = Kind::kNode;
  LayoutNode node;  // meaningful for kNode; parent/depth are not part of the token

  static Token open() { return Token{Kind::kOpen, {}}; }
  static Token close() { return Token{Kind::kClose, {}}; }
  static Token eos() { return Token{Kind::kEos, {}}; }
  static Token of(const LayoutNode& n);

  bool operator==(const Token& other) const;
};

using TokenSeq = std::vector<Token>;

TokenSeq linearize(const LayoutTree& tree);

/// Token prefix for a preorder partial tree: groups on the rightmost path are left open,
/// and a rightmost-path parent with a single given child is emitted bare.
/// Also returns, through `node_token_positions`, the token index of every stored node.
TokenSeq linearize_prefix(const LayoutTree& partial, std::vector<int>* node_token_positions = nullptr);

class EmptySequence : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Rebuilds a tree from tokens. Malformed input is repaired: unmatched Close is ignored,
/// unclosed groups end at the sequence end, a stray Open after a terminal is ignored, and
/// nodes left over after the root's structure is complete become children of the root.
/// Decoding stops at the first EOS.
LayoutTree delinearize(const TokenSeq& seq);

}  // namespace layoutcomp

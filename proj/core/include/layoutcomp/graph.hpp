#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <unordered_map>
#include <vector>

#include "layoutcomp/tensor.hpp"

namespace layoutcomp::ad {

template <typename T>
class Graph;

/// Handle to a value recorded on a Graph.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  const Tensor<T>& value() const;
  int rows() const { return value().rows(); }
  int cols() const { return value().cols(); }
  bool valid() const { return graph != nullptr && id >= 0; }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a topological
/// order; backward() walks it once in reverse. With recording disabled the graph only
/// evaluates values (inference).
template <typename T>
class Graph {
 public:
  using Backward = std::function<void(Graph&)>;

  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var<T> constant(Tensor<T> value);
  Var<T> param(Parameter<T>& p);

  const Tensor<T>& value(int id) const {
    const auto& n = nodes_[static_cast<size_t>(id)];
    return n.param ? n.param->value : n.value;
  }
  const std::vector<T>& grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }
  bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }
  size_t size() const { return nodes_.size(); }

  /// Seeds d(out)/d(out) = 1 for a single-element output and accumulates gradients into
  /// every reachable Parameter.
  void backward(Var<T> out);

  // Used by op implementations.
  Var<T> record(Tensor<T> value, std::vector<int> inputs, Backward backward);
  std::vector<T>& grad_buffer(int id);
  int backward_visits() const { return backward_visits_; }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<T> grad;
    Backward backward;
    Parameter<T>* param = nullptr;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, int> param_ids_;
  bool record_;
  int backward_visits_ = 0;
};

struct AttentionSpec {
  int batch = 1;
  int query_len = 1;  // rows per batch entry in the query tensor
  int key_len = 1;    // rows per batch entry in the key/value tensors
  int heads = 1;
  bool causal = false;               // query i sees keys j <= i (requires query_len == key_len)
  std::vector<std::uint8_t> key_valid;  // batch * key_len flags; empty = all valid
};

inline constexpr double kMaskedLogit = -1e9;

// ---- operations -------------------------------------------------------------

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);  // elementwise
template <typename T> Var<T> scale(Var<T> a, T s);
template <typename T> Var<T> sum(Var<T> a);            // -> [1]
template <typename T> Var<T> relu(Var<T> a);
/// x [N,K] * w [K,M] (+ bias [M]).
template <typename T> Var<T> linear(Var<T> x, Var<T> w, Var<T> bias = {});
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));
/// Rows of `table` selected by ids; id -1 yields a zero row.
template <typename T> Var<T> embedding(Var<T> table, const std::vector<int>& ids);
template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
/// Rows of x selected by index; -1 yields a zero row.
template <typename T> Var<T> gather_rows(Var<T> x, const std::vector<int>& index);
template <typename T> Var<T> softmax_rows(Var<T> x);
/// Scaled dot-product multi-head attention over already projected q/k/v.
/// `weights_out`, when given, receives [batch, heads, query_len, key_len] probabilities.
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const AttentionSpec& spec, std::vector<T>* weights_out = nullptr);
/// Per batch entry, scores[(b,i), j] = h[(b,i)] . h[(b,j)] for a [batch*len, H] input.
template <typename T> Var<T> pair_scores(Var<T> h, int batch, int len);
/// Sum over rows of -log softmax(logits)[target]; rows with target < 0 are skipped.
/// `additive_mask` (same shape as logits, may be empty) is added to the logits first.
template <typename T>
Var<T> cross_entropy(Var<T> logits, const std::vector<int>& targets, const std::vector<T>* additive_mask = nullptr);
/// Inverted dropout; identity when rate == 0 or the graph is not recording.
template <typename T> Var<T> dropout(Var<T> x, double rate, std::mt19937_64& rng);

/// Plain (non-differentiable) row softmax with max subtraction; throws NonFiniteError.
template <typename T> std::vector<T> softmax(std::span<const T> logits);
template <typename T> std::vector<T> log_softmax(std::span<const T> logits);

}  // namespace layoutcomp::ad

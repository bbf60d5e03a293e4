#pragma once

#include <map>
#include <random>
#include <stdexcept>
#include <vector>

#include "layoutcomp/model.hpp"

namespace layoutcomp {

class EmptyBatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// What one input position must predict; -1 fields are not scored.
struct StepTarget {
  int c = -1;
  int t = -1;
  int x = -1;
  int y = -1;
  int x2 = -1;
  int y2 = -1;
  int parent = -1;  // pointer decoder: sequence position of the parent
  bool scored = false;

  bool is_node() const { return t >= 0; }
  static StepTarget node(const LayoutNode& n, bool scored);
  static StepTarget special(int c, bool scored);
};

/// Flat sequence for the vanilla and pointer decoders.
struct EncodedSequence {
  std::vector<InputToken> inputs;
  std::vector<StepTarget> targets;
  std::vector<std::uint8_t> parent_candidate;  // pointer decoder: position may be a parent
};

/// Vanilla: bracket linearization plus EOS, teacher-forced; the first k preorder nodes are given.
EncodedSequence encode_vanilla(const LayoutTree& tree, int k, const ModelConfig& cfg);
/// Pointer: nodes in `order` plus EOS; the first k are given.
EncodedSequence encode_pointer(const LayoutTree& tree, int k, TraversalOrder order, const ModelConfig& cfg);

/// One sibling list [P, c1..cn] of the recursive decoder.
struct EncodedList {
  int parent = 0;               // node index of P
  std::vector<int> ancestry;    // root..P, the states P's children attend to
  std::vector<int> children;    // node indices c1..cn
  std::vector<InputToken> inputs;
  std::vector<StepTarget> targets;  // position s predicts c_{s+1}; the last predicts EOS
};

/// Sibling lists of every non-terminal node, ordered by depth of P then traversal order.
/// The first k nodes of `order` are given; predictions of other nodes and every list end are scored.
std::vector<EncodedList> encode_recursive(const LayoutTree& tree, int k, TraversalOrder order, const ModelConfig& cfg);

struct TrainExample {
  const LayoutTree* tree = nullptr;
  int k = 1;
  TraversalOrder order = TraversalOrder::kDfs;
};

struct HitCount {
  long long hits = 0;
  long long total = 0;

  double percent() const { return total ? 100.0 * static_cast<double>(hits) / static_cast<double>(total) : 0.0; }
  HitCount& operator+=(const HitCount& o) {
    hits += o.hits;
    total += o.total;
    return *this;
  }
};

/// Teacher-forced argmax accuracies over scored positions.
struct TeacherAccuracy {
  HitCount c, t, x, y, x2, y2, parent;
  // A position counts when its c prediction is right and, for node targets, so are t and
  // (pointer decoder) the parent.
  HitCount structure_type;

  TeacherAccuracy& operator+=(const TeacherAccuracy& o);
};

template <typename T>
struct LossResult {
  ad::Var<T> loss;  // mean over scored positions of summed per-head cross-entropies
  double value = 0;
  long long scored = 0;
  TeacherAccuracy accuracy;
};

template <typename T>
LossResult<T> teacher_forced_loss(ad::Graph<T>& g, DecoderModel<T>& model, const std::vector<TrainExample>& batch,
                                  std::mt19937_64* rng = nullptr);

/// Final hidden states of every sibling list (keyed by parent node), computed for the whole
/// forest in batched passes.
template <typename T>
std::vector<std::map<int, ad::Tensor<T>>> recursive_list_states(DecoderModel<T>& model,
                                                                const std::vector<TrainExample>& forest);

extern template LossResult<float> teacher_forced_loss(ad::Graph<float>&, DecoderModel<float>&,
                                                      const std::vector<TrainExample>&, std::mt19937_64*);
extern template LossResult<double> teacher_forced_loss(ad::Graph<double>&, DecoderModel<double>&,
                                                       const std::vector<TrainExample>&, std::mt19937_64*);

}  // namespace layoutcomp

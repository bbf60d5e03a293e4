#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "layoutcomp/layout.hpp"
#include "layoutcomp/model.hpp"

namespace layoutcomp {

class PrefixViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Strategy { kGreedy, kBeam };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view text);

struct DecodeConfig {
  Strategy strategy = Strategy::kGreedy;
  int beam_width = 1;
  int max_new_nodes = -1;  // -1: up to the 100-node limit
  double temperature = 1.0;
  int num_candidates = 1;

  void validate() const;
};

/// Log-probabilities of every head for one decoding step.
struct StepDistribution {
  std::vector<double> c, t, x, y, x2, y2;
  std::vector<double> parent;  // pointer decoder: over positions so far, -inf where excluded
};

/// A concrete step: a special token (t < 0) or a node with bounds and, for the pointer
/// decoder, a parent position.
struct StepChoice {
  int c = -1;
  int t = -1;
  Bounds bounds;
  int parent = -1;
  double log_prob = 0;

  bool is_node() const { return t >= 0; }
};

/// Greedy choice: per-head argmax, lowest index on ties.
StepChoice step_select(const StepDistribution& dist, const ModelConfig& cfg);

/// Up to `width` best choices by joint log-probability: the top `width` c values, each node
/// type combined with the top `width` joint assignments of the remaining heads.
/// `allow_nodes` = false restricts to special tokens.
std::vector<StepChoice> step_expand(const StepDistribution& dist, const ModelConfig& cfg, int width,
                                    bool allow_nodes = true);

struct Completion {
  LayoutTree tree;  // given nodes first, unchanged, then predicted nodes
  double log_prob = 0;
  int new_node_count = 0;
  bool budget_exhausted = false;
  int repairs = 0;

  bool predicted(int node) const { return node >= tree.size() - new_node_count; }
};

struct RepairResult {
  LayoutTree tree;
  int repairs = 0;
};

/// Clips every node from index `first_free` on into its parent's bounds (the screen for the
/// root), widening zero-area results inside the parent.
RepairResult repair(const LayoutTree& tree, int first_free = 0);

/// Ranked completions, best first, of at most `num_candidates` entries.
std::vector<Completion> complete(const PartialTree& partial, DecoderModel<float>& model, const DecodeConfig& cfg);

/// The single next element a greedy decoder adds to `partial` in the partial's traversal
/// order, or nothing when it predicts the end.
std::optional<LayoutNode> predict_next(const PartialTree& partial, DecoderModel<float>& model);

// Single-step model evaluation used by the decoders.
StepDistribution flat_step(DecoderModel<float>& model, const std::vector<InputToken>& inputs,
                           const std::vector<std::uint8_t>& parent_ok, double temperature = 1.0);
std::vector<float> recursive_root_state(DecoderModel<float>& model, const LayoutNode& root);
struct ListStep {
  StepDistribution dist;                   // prediction after the last list element
  std::vector<std::vector<float>> states;  // final states of every list position
};
ListStep recursive_step(DecoderModel<float>& model, const std::vector<InputToken>& list,
                        const std::vector<std::vector<float>>& ancestry, double temperature = 1.0);

}  // namespace layoutcomp

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "layoutcomp/decode.hpp"
#include "layoutcomp/layout.hpp"

namespace layoutcomp {

/// Seconds per edit operation, from keystroke-level operator times.
struct CostTable {
  double insert = 4.4;
  double change_type = 2.2;
  double change_geometry = 3.3;
  double del = 0.1;

  /// Throws std::invalid_argument unless all costs are >= 0 and deletion is the cheapest.
  void validate() const;
  std::string to_json() const;
  static CostTable from_json(const std::string& text);
  static CostTable load(const std::string& path);
};

/// Optimal ordered tree edit distance turning `pred` into `gold` (Zhang-Shasha). Labels are
/// (type, bounds); a change costs change_type if the type differs plus change_geometry if the
/// bounds differ. Costs are summed as integer microseconds so results are exact.
std::int64_t tree_edit_distance_us(const LayoutTree& pred, const LayoutTree& gold, const CostTable& costs);
double tree_edit_distance(const LayoutTree& pred, const LayoutTree& gold, const CostTable& costs);

struct PairCounts {
  long long matched = 0;
  long long predicted = 0;
  long long gold = 0;

  PairCounts& operator+=(const PairCounts& o);
  double precision() const;  // percent
  double recall() const;     // percent
  double f1() const;         // percent
};

/// Parent-child pairs matched as multisets. Strict keys are (parent type, parent bounds,
/// child type, child bounds); relaxed keys keep only the two types.
PairCounts pair_counts(const LayoutTree& pred, const LayoutTree& gold, bool relaxed);

struct PairScores {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};
PairScores pair_retrieval(const LayoutTree& pred, const LayoutTree& gold, bool relaxed);

/// Next-element hit: type, terminal flag and (unless relaxed) exact bounds agree.
bool next_element_hit(const LayoutNode& predicted, const LayoutNode& truth, bool relaxed);

/// Mean over trees of the number of distinct full trees sharing the tree's partial prefix.
double mean_completions(const std::vector<LayoutTree>& corpus, TraversalOrder order, double fraction);

/// Anything that can complete partial layouts. `gold` is the held-out tree the partial was cut
/// from; only the oracle looks at it.
class Completer {
 public:
  virtual ~Completer() = default;
  virtual std::string name() const = 0;
  virtual Completion complete(const PartialTree& partial, const LayoutTree& gold) = 0;
  virtual std::optional<LayoutNode> next(const PartialTree& partial, const LayoutTree& gold) = 0;
};

class NeuralCompleter : public Completer {
 public:
  NeuralCompleter(DecoderModel<float>& model, DecodeConfig cfg = {}) : model_(model), cfg_(cfg) {}
  std::string name() const override;
  Completion complete(const PartialTree& partial, const LayoutTree& gold) override;
  std::optional<LayoutNode> next(const PartialTree& partial, const LayoutTree& gold) override;

 private:
  DecoderModel<float>& model_;
  DecodeConfig cfg_;
};

/// Emits the true continuation: the gold tree's remaining nodes in the partial's traversal order.
class OracleCompleter : public Completer {
 public:
  std::string name() const override { return "oracle"; }
  Completion complete(const PartialTree& partial, const LayoutTree& gold) override;
  std::optional<LayoutNode> next(const PartialTree& partial, const LayoutTree& gold) override;
};

/// Percentage of trees whose next element after the prefix is predicted exactly. Trees whose
/// prefix is the whole tree have no next element and are left out.
double next_element_accuracy(Completer& completer, const std::vector<LayoutTree>& corpus, TraversalOrder order,
                             double fraction, bool relaxed);

struct MetricReport {
  double f1 = 0;
  double precision = 0;
  double recall = 0;
  double next_accuracy = 0;  // percent
  double edit_distance = 0;  // mean seconds per tree
  bool relaxed = false;
  int trees = 0;
  int next_cases = 0;  // trees with an element after the prefix
};

struct CellResult {
  MetricReport strict;
  MetricReport relaxed;
};

/// Completes every tree of `test` from its prefix and scores the completions against it.
/// Relaxed edit distance ignores geometry changes.
CellResult evaluate_cell(Completer& completer, const std::vector<LayoutTree>& test, TraversalOrder order,
                         double fraction, const CostTable& costs);

}  // namespace layoutcomp

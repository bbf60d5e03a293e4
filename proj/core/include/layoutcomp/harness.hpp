#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "layoutcomp/checkpoint.hpp"
#include "layoutcomp/decode.hpp"
#include "layoutcomp/metrics.hpp"
#include "layoutcomp/model.hpp"
#include "layoutcomp/optim.hpp"
#include "layoutcomp/teacher.hpp"

namespace layoutcomp {

class TooSmall : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Diverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MissingCheckpoint : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SplitRatios {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;

  void validate() const;
  static SplitRatios parse(const std::string& text);  // "0.8,0.1,0.1"
};

struct Splits {
  std::vector<LayoutTree> train, valid, test;
};

/// Seeded shuffle, then consecutive slices. Valid and test sizes are rounded from the
/// ratios; train takes the rest.
Splits split_corpus(const std::vector<LayoutTree>& corpus, const SplitRatios& ratios, std::uint64_t seed);

struct TrainConfig {
  int max_steps = 2000;
  int batch_size = 16;
  double lr = 1e-3;
  int warmup = 100;
  int eval_every = 100;
  int patience = 5;  // evaluations without improvement; 0 disables early stopping
  double min_delta = 1e-3;
  std::vector<double> fractions{0.1, 0.5, 0.8};
  // Traversal orders the model is trained on. Prefixes carry no order marker, so one model
  // per order keeps the targets unambiguous.
  std::vector<TraversalOrder> orders{TraversalOrder::kDfs};
  std::uint64_t seed = 1;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

struct CurvePoint {
  int step = 0;
  double train_loss = 0;  // mean of the minibatch losses since the previous evaluation
  double valid_loss = 0;
  double best_valid = 0;  // best-so-far envelope
};

/// Teacher-forced loss and accuracy over a fixed evaluation set: every tree at every
/// configured fraction, in DFS (and BFS, except for the vanilla decoder).
struct EvalResult {
  double loss = 0;
  TeacherAccuracy accuracy;
};
EvalResult evaluate_teacher_forced(DecoderModel<float>& model, const std::vector<LayoutTree>& trees,
                                   const std::vector<double>& fractions, const std::vector<TraversalOrder>& orders);

class Trainer {
 public:
  Trainer(const ModelConfig& model_cfg, const TrainConfig& cfg, const std::vector<LayoutTree>& train,
          const std::vector<LayoutTree>& valid);

  /// Restores parameters, optimizer state and bookkeeping from a checkpoint written by save_last().
  static Trainer resume(const std::string& checkpoint, const TrainConfig& cfg, const std::vector<LayoutTree>& train,
                        const std::vector<LayoutTree>& valid);

  /// One optimizer step on a minibatch drawn from a generator seeded by (seed, step).
  /// Returns the minibatch loss; throws Diverged on a non-finite loss or update.
  double step();
  /// Validation pass; updates the best-so-far state. Returns true when it improved.
  bool evaluate();

  /// Runs until max_steps or early stopping, evaluating every eval_every steps. With an
  /// output directory, best.ckpt tracks the best validation loss and last.ckpt the latest
  /// state including the optimizer.
  void run(const std::optional<std::filesystem::path>& out_dir = std::nullopt,
           const std::function<void(const CurvePoint&)>& on_eval = {});

  void save_last(const std::string& path) const;

  DecoderModel<float>& model() { return *model_; }
  const ad::AdamState<float>& adam() const { return adam_; }
  int steps_done() const { return step_; }
  bool stopped_early() const { return stopped_early_; }
  double best_valid() const { return best_valid_; }
  int best_step() const { return best_step_; }
  const std::vector<CurvePoint>& curve() const { return curve_; }

  /// The minibatch used at `step` (exposed for tests).
  std::vector<TrainExample> sample_batch(int step) const;

 private:
  std::string meta_json() const;

  TrainConfig cfg_;
  const std::vector<LayoutTree>* train_;
  const std::vector<LayoutTree>* valid_;
  std::unique_ptr<DecoderModel<float>> model_;
  ad::AdamState<float> adam_;
  int step_ = 0;
  double best_valid_ = 0;
  int best_step_ = -1;
  int stale_evals_ = 0;
  bool stopped_early_ = false;
  double running_loss_ = 0;
  int running_count_ = 0;
  std::vector<CurvePoint> curve_;
  std::optional<std::filesystem::path> out_dir_;
};

// ---- experiment matrix -------------------------------------------------------

struct ExperimentConfig {
  std::vector<Variant> variants{Variant::kVanilla, Variant::kPointer, Variant::kRecursive};
  std::vector<TraversalOrder> orders{TraversalOrder::kBfs, TraversalOrder::kDfs};
  std::vector<double> fractions{0.1, 0.5, 0.8};
  SplitRatios ratios;
  std::uint64_t seed = 1;
  std::string corpus;        // corpus bundle (JSON lines)
  std::string manifest;      // type manifest; empty = built-in
  std::string model_config;  // ModelConfig JSON; empty = defaults
  std::string train_config;  // TrainConfig JSON; empty = defaults
  std::string costs;         // CostTable JSON; empty = defaults
  DecodeConfig decode;
  std::string output_dir = "out";

  void validate() const;
  static ExperimentConfig from_json(const std::string& text, const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path);
  /// output_dir/<variant>-<order>/best.ckpt; each order has its own trained model.
  std::filesystem::path checkpoint_path(Variant v, TraversalOrder o) const;
};

struct MatrixCell {
  Variant variant = Variant::kPointer;
  TraversalOrder order = TraversalOrder::kDfs;
  double fraction = 0;
  CellResult result;
};

struct MatrixReport {
  std::vector<double> fractions;
  std::vector<MatrixCell> cells;

  const MatrixCell* find(Variant v, TraversalOrder o, double fraction) const;
  /// One line per cell: variant, order, fraction, then strict and relaxed metrics.
  std::string tsv() const;
  /// One block per order: rows are models, columns F1/Next/Edit per fraction.
  std::string table(bool relaxed) const;
  /// Published relaxed next-element accuracies at 80% for comparison.
  std::string footer() const;
};

using CompleterFor = std::function<Completer&(Variant, TraversalOrder)>;

/// Whether the variant can be trained and evaluated on prefixes in this order.
bool order_supported(Variant v, TraversalOrder o);

/// Evaluates every (variant, order, fraction) cell with the completer for that variant and
/// order. The vanilla decoder only produces DFS prefixes and is skipped for BFS.
MatrixReport evaluate_matrix(const std::vector<Variant>& variants, const CompleterFor& completer_for,
                             const std::vector<LayoutTree>& test, const std::vector<TraversalOrder>& orders,
                             const std::vector<double>& fractions, const CostTable& costs);

/// Writes report.tsv and report.txt (strict and relaxed tables plus the footer).
void write_report(const MatrixReport& report, const std::filesystem::path& dir);

/// Loads the corpus, splits it, loads each (variant, order) best checkpoint from the output
/// directory (MissingCheckpoint when absent), evaluates the test split and writes the report.
MatrixReport run_matrix(const ExperimentConfig& cfg);

}  // namespace layoutcomp

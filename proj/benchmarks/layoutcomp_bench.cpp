#include <benchmark/benchmark.h>

#include "layoutcomp/decode.hpp"
#include "layoutcomp/metrics.hpp"
#include "layoutcomp/synthetic.hpp"
#include "layoutcomp/teacher.hpp"

using namespace layoutcomp;

namespace {

// Synthetic trees of roughly increasing size, one per depth setting.
LayoutTree tree_of_depth(int depth, std::uint64_t seed) {
  SyntheticParams p;
  p.max_depth = depth;
  p.max_children = 5;
  return generate_synthetic(seed, p);
}

void BM_TreeEditDistance(benchmark::State& state) {
  const auto a = tree_of_depth(static_cast<int>(state.range(0)), 3);
  const auto b = tree_of_depth(static_cast<int>(state.range(0)), 4);
  const CostTable costs;
  for (auto _ : state) benchmark::DoNotOptimize(tree_edit_distance_us(a, b, costs));
  state.counters["nodes"] = static_cast<double>(a.size() + b.size());
}
BENCHMARK(BM_TreeEditDistance)->DenseRange(2, 5);

void BM_PairRetrieval(benchmark::State& state) {
  const auto a = tree_of_depth(4, 3);
  const auto b = tree_of_depth(4, 4);
  for (auto _ : state) benchmark::DoNotOptimize(pair_retrieval(a, b, false));
}
BENCHMARK(BM_PairRetrieval);

Variant variant_arg(const benchmark::State& state) { return static_cast<Variant>(state.range(0)); }

void BM_TrainStep(benchmark::State& state) {
  ModelConfig cfg;
  cfg.variant = variant_arg(state);
  DecoderModel<float> model(cfg);
  const auto corpus = generate_synthetic_corpus(0, 16);
  std::vector<TrainExample> batch;
  for (const auto& t : corpus) batch.push_back(TrainExample{&t, prefix_size(t.size(), 0.5), TraversalOrder::kDfs});
  for (auto _ : state) {
    model.params().zero_grad();
    ad::Graph<float> g;
    auto res = teacher_forced_loss(g, model, batch);
    g.backward(res.loss);
    benchmark::DoNotOptimize(res.value);
  }
  state.SetLabel(std::string(to_string(cfg.variant)));
}
BENCHMARK(BM_TrainStep)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

void BM_Complete(benchmark::State& state) {
  ModelConfig cfg;
  cfg.variant = variant_arg(state);
  DecoderModel<float> model(cfg);
  const auto tree = generate_synthetic(7);
  const auto partial = extract_partial(tree, 0.5, TraversalOrder::kDfs);
  DecodeConfig dc;
  dc.max_new_nodes = 10;
  if (state.range(1) > 1) {
    dc.strategy = Strategy::kBeam;
    dc.beam_width = static_cast<int>(state.range(1));
  }
  for (auto _ : state) benchmark::DoNotOptimize(complete(partial, model, dc));
  state.SetLabel(std::string(to_string(cfg.variant)) + (dc.strategy == Strategy::kBeam ? " beam" : " greedy"));
}
BENCHMARK(BM_Complete)->ArgsProduct({{0, 1, 2}, {1, 4}})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

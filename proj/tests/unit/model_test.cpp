#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <type_traits>

#include "layoutcomp/decode.hpp"
#include "layoutcomp/gradcheck.hpp"
#include "layoutcomp/synthetic.hpp"
#include "layoutcomp/teacher.hpp"
#include "support/fixtures.hpp"

using namespace layoutcomp;
using namespace layoutcomp::testing;
using ad::Graph;
using ad::Tensor;

namespace {

constexpr size_t kCoordsPerParam = 48;

const Variant kVariants[] = {Variant::kVanilla, Variant::kPointer, Variant::kRecursive};

}  // namespace

TEST(ModelConfig, JsonRoundTripAndValidation) {
  auto c = desk(Variant::kRecursive, 9);
  c.dropout = 0.1;
  auto back = ModelConfig::from_json(c.to_json());
  EXPECT_EQ(back.variant, Variant::kRecursive);
  EXPECT_EQ(back.seed, 9u);
  EXPECT_DOUBLE_EQ(back.dropout, 0.1);
  EXPECT_EQ(back.c_vocab(), 26);
  EXPECT_THROW(ModelConfig::from_json(R"({"embed": 30})"), std::invalid_argument);
  EXPECT_THROW(ModelConfig::from_json(R"({"heads": 5})"), std::invalid_argument);
  EXPECT_THROW(ModelConfig::from_json(R"({"variant": "lstm"})"), std::invalid_argument);
  EXPECT_THROW(ModelConfig::from_json("{"), std::invalid_argument);
}

TEST(Heads, WidthsPerVariant) {
  for (Variant v : kVariants) {
    DecoderModel<float> m(desk(v));
    Graph<float> g(false);
    auto h = m.heads(g, g.constant(Tensor<float>({1, 64}, 0.5f)));
    EXPECT_EQ(h.c.cols(), v == Variant::kVanilla ? 28 : 26);
    EXPECT_EQ(h.t.cols(), 2);
    EXPECT_EQ(h.x.cols(), 73);
    EXPECT_EQ(h.y.cols(), 129);
    EXPECT_EQ(h.x2.cols(), 73);
    EXPECT_EQ(h.y2.cols(), 129);
  }
}

TEST(Embedding, FunctionOfPropertiesOnly) {
  DecoderModel<double> m(desk(Variant::kPointer));
  LayoutNode a{3, true, Bounds{1, 2, 30, 40}, 0, 1};
  LayoutNode b{3, true, Bounds{1, 2, 30, 40}, 5, 3};
  Graph<double> g(false);
  auto e = m.embed(g, {InputToken::of(a), InputToken::of(b)}).value();
  ASSERT_EQ(e.cols(), 64);
  for (int c = 0; c < 64; ++c) EXPECT_EQ(e.at(0, c), e.at(1, c));
}

TEST(Embedding, CoordinateBlocksInOrder) {
  DecoderModel<double> m(desk(Variant::kVanilla));
  auto& ps = m.params();
  for (const char* name : {"embed.c", "embed.t"}) std::fill(ps.get(name).value.data.begin(), ps.get(name).value.data.end(), 0.0);
  LayoutNode n{5, false, Bounds{7, 11, 13, 17}, 0, 0};
  Graph<double> g(false);
  auto e = m.embed(g, {InputToken::of(n)}).value();
  const char* tables[] = {"embed.x", "embed.y", "embed.x2", "embed.y2"};
  const int ids[] = {7, 11, 13, 17};
  for (int blk = 0; blk < 4; ++blk) {
    const auto& t = ps.get(tables[blk]).value;
    for (int c = 0; c < 16; ++c) EXPECT_EQ(e.at(0, blk * 16 + c), t.at(ids[blk], c));
  }
}

TEST(Embedding, ZeroTablesGiveZeroVector) {
  DecoderModel<double> m(desk(Variant::kRecursive));
  for (size_t i = 0; i < m.params().size(); ++i) {
    auto& p = m.params()[i];
    if (p.name.rfind("embed.", 0) == 0) std::fill(p.value.data.begin(), p.value.data.end(), 0.0);
  }
  Graph<double> g(false);
  auto e = m.embed(g, {InputToken::of(three_node(false).node(1)), InputToken::special(25)}).value();
  for (double v : e.data) EXPECT_EQ(v, 0.0);
}

TEST(Embedding, SpecialTokensUseTypeRowAndNotApplicableTerminal) {
  DecoderModel<double> m(desk(Variant::kVanilla));
  Graph<double> g(false);
  auto e = m.embed(g, {InputToken::special(m.config().open_id())}).value();
  const auto& c = m.params().get("embed.c").value;
  const auto& t = m.params().get("embed.t").value;
  for (int k = 0; k < 64; ++k) EXPECT_DOUBLE_EQ(e.at(0, k), c.at(25, k) + t.at(2, k));
}

TEST(Embedding, VocabOverflow) {
  DecoderModel<float> m(desk(Variant::kPointer));
  Graph<float> g(false);
  InputToken bad = InputToken::special(26);
  EXPECT_THROW(m.embed(g, {bad}), ad::VocabOverflow);
  InputToken far{0, 1, 0, 0, 80, 10};
  EXPECT_THROW(m.embed(g, {far}), ad::VocabOverflow);
}

TEST(DecodeStack, SingleStepAttendsToItself) {
  DecoderModel<float> m(desk(Variant::kPointer));
  Graph<float> g(false);
  std::vector<std::vector<float>> att;
  auto h = m.decode_stack(g, m.embed(g, {InputToken::of(three_node(true).node(0))}), 1, 1, {}, nullptr, nullptr,
                          nullptr, &att);
  EXPECT_EQ(h.rows(), 1);
  EXPECT_EQ(h.cols(), 64);
  ASSERT_EQ(att.size(), 2u);
  for (const auto& layer : att) {
    for (float w : layer) EXPECT_EQ(w, 1.0f);
  }
}

TEST(DecodeStack, AppendingLeavesEarlierStatesBitwise) {
  auto tree = generate_synthetic(5);
  for (Variant v : {Variant::kVanilla, Variant::kPointer}) {
    DecoderModel<float> m(desk(v));
    std::vector<InputToken> seq;
    for (const auto& n : tree.nodes()) seq.push_back(InputToken::of(n));
    std::vector<float> prev;
    for (size_t len = 1; len <= seq.size(); ++len) {
      Graph<float> g(false);
      std::vector<InputToken> part(seq.begin(), seq.begin() + static_cast<long>(len));
      std::vector<std::vector<float>> att;
      auto h = m.decode_stack(g, m.embed(g, part), 1, static_cast<int>(len), {}, nullptr, nullptr, nullptr, &att);
      for (size_t i = 0; i < prev.size(); ++i) ASSERT_EQ(prev[i], h.value().data[i]) << "len " << len;
      prev = h.value().data;
      for (const auto& layer : att) {
        for (size_t head = 0; head < 4; ++head) {
          for (size_t i = 0; i < len; ++i) {
            double total = 0;
            for (size_t j = 0; j < len; ++j) total += layer[(head * len + i) * len + j];
            EXPECT_NEAR(total, 1.0, 1e-6);
          }
        }
      }
    }
  }
}

TEST(TeacherForced, UniformLogitsVanilla) {
  DecoderModel<double> m(desk(Variant::kVanilla));
  for (size_t i = 0; i < m.params().size(); ++i) {
    auto& p = m.params()[i];
    if (p.name.rfind("head.", 0) == 0) std::fill(p.value.data.begin(), p.value.data.end(), 0.0);
  }
  auto tree = three_node(false);  // root ( a b ) -> 6 tokens with EOS
  Graph<double> g(false);
  auto res = teacher_forced_loss(g, m, {TrainExample{&tree, 1, TraversalOrder::kDfs}});
  const double node = std::log(28.0) + std::log(2.0) + 2 * std::log(73.0) + 2 * std::log(129.0);
  const double special = std::log(28.0);
  // Targets after the root: Open, a, b, Close, EOS.
  EXPECT_EQ(res.scored, 5);
  EXPECT_NEAR(res.value, (2 * node + 3 * special) / 5.0, 1e-9);
}

TEST(TeacherForced, ConfidentHeadsGiveNearZeroLoss) {
  DecoderModel<double> m(desk(Variant::kVanilla));
  for (size_t i = 0; i < m.params().size(); ++i) {
    auto& p = m.params()[i];
    if (p.name.rfind("head.", 0) == 0) std::fill(p.value.data.begin(), p.value.data.end(), 0.0);
  }
  m.params().get("head.c.b").value.data[static_cast<size_t>(m.config().eos_id())] = 50.0;
  LayoutTree root;
  root.add_node(4, true, Bounds{0, 0, 72, 128}, kNoParent);
  Graph<double> g(false);
  auto res = teacher_forced_loss(g, m, {TrainExample{&root, 1, TraversalOrder::kDfs}});
  EXPECT_EQ(res.scored, 1);
  EXPECT_LT(res.value, 1e-8);
  EXPECT_EQ(res.accuracy.structure_type.hits, 1);
}

TEST(TeacherForced, EmptyBatchThrows) {
  DecoderModel<float> m(desk(Variant::kPointer));
  Graph<float> g;
  EXPECT_THROW(teacher_forced_loss(g, m, {}), EmptyBatch);
}

TEST(TeacherForced, PrefixPositionsAreNotScored) {
  auto tree = generate_synthetic(11);
  ASSERT_GE(tree.size(), 5);
  const auto cfg = desk(Variant::kPointer);
  auto e = encode_pointer(tree, 4, TraversalOrder::kBfs, cfg);
  int scored = 0;
  for (const auto& t : e.targets) scored += t.scored;
  EXPECT_EQ(scored, tree.size() - 4 + 1);
  EXPECT_FALSE(e.targets[2].scored);
  EXPECT_TRUE(e.targets[3].scored);
}

TEST(TeacherForced, PaddingDoesNotChangeContent) {
  auto small = three_node(true);
  auto big = generate_synthetic(17);
  ASSERT_GT(big.size(), small.size() + 3);
  for (Variant v : kVariants) {
    DecoderModel<double> m(desk(v, 4));
    auto loss_of = [&](std::vector<TrainExample> b) {
      Graph<double> g(false);
      auto r = teacher_forced_loss(g, m, b);
      return std::make_pair(r.value * static_cast<double>(r.scored), r.scored);
    };
    auto [a, na] = loss_of({{&small, 1, TraversalOrder::kDfs}});
    auto [b, nb] = loss_of({{&big, 1, TraversalOrder::kDfs}});
    auto [ab, nab] = loss_of({{&small, 1, TraversalOrder::kDfs}, {&big, 1, TraversalOrder::kDfs}});
    EXPECT_EQ(nab, na + nb);
    EXPECT_NEAR(ab, a + b, 1e-9 * std::abs(ab)) << to_string(v);
  }
}

TEST(GradCheck, DecoderLossesDouble) {
  // Central differences are taken in long double so the f64 rounding of a loss near 20 does
  // not swamp coordinates with small gradients.
  for (Variant v : kVariants) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto tree = three_node(seed % 2 == 0);
      DecoderModel<double> narrow(tiny(v, seed + 1));
      DecoderModel<long double> wide(tiny(v, seed + 1));
      const std::vector<TrainExample> batch{{&tree, 1, seed % 3 == 0 ? TraversalOrder::kBfs : TraversalOrder::kDfs}};
      auto res = ad::grad_check_mixed(narrow.params(), wide.params(), [&](auto& g) {
        using G = std::remove_reference_t<decltype(g)>;
        if constexpr (std::is_same_v<G, Graph<double>>) {
          return teacher_forced_loss(g, narrow, batch).loss;
        } else {
          return teacher_forced_loss(g, wide, batch).loss;
        }
      }, 1e-6L, kCoordsPerParam);
      EXPECT_LT(res.max_rel_error, 1e-5) << to_string(v) << " seed " << seed << " " << res.worst_param << "["
                                         << res.worst_index << "] a=" << res.worst_analytic
                                         << " n=" << res.worst_numeric;
    }
  }
}

TEST(GradCheck, DecoderLossesFloat) {
  // Per tensor: a few f32 coordinates are small residuals of much larger terms, so their
  // individual relative error reflects f32 forward rounding rather than the backward code.
  for (Variant v : kVariants) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto tree = three_node(seed % 2 == 0);
      DecoderModel<float> narrow(tiny(v, seed + 1));
      DecoderModel<double> wide(tiny(v, seed + 1));
      const std::vector<TrainExample> batch{{&tree, 1, TraversalOrder::kDfs}};
      auto res = ad::grad_check_f32(narrow.params(), wide.params(), [&](auto& g) {
        using G = std::remove_reference_t<decltype(g)>;
        if constexpr (std::is_same_v<G, Graph<float>>) {
          return teacher_forced_loss(g, narrow, batch).loss;
        } else {
          return teacher_forced_loss(g, wide, batch).loss;
        }
      }, 1e-6, kCoordsPerParam);
      EXPECT_LT(res.max_tensor_rel_error, 1e-3) << to_string(v) << " seed " << seed << " " << res.worst_tensor;
      RecordProperty(std::string(to_string(v)) + "_seed" + std::to_string(seed),
                     std::to_string(res.max_tensor_rel_error) + " coord " + std::to_string(res.max_rel_error));
    }
  }
}

TEST(Causality, FlatLogitsIgnoreLaterContent) {
  auto tree = generate_synthetic(23);
  for (Variant v : {Variant::kVanilla, Variant::kPointer}) {
    DecoderModel<float> m(desk(v));
    const auto base = v == Variant::kVanilla ? encode_vanilla(tree, 1, m.config())
                                             : encode_pointer(tree, 1, TraversalOrder::kDfs, m.config());
    const int n = static_cast<int>(base.inputs.size());
    auto logits = [&](const std::vector<InputToken>& in) {
      Graph<float> g(false);
      auto h = m.decode_stack(g, m.embed(g, in), 1, n, {}, nullptr);
      auto hd = m.heads(g, h);
      std::vector<std::vector<float>> out;
      for (auto var : {hd.c, hd.t, hd.x, hd.y, hd.x2, hd.y2}) out.push_back(var.value().data);
      out.push_back(h.value().data);
      return out;
    };
    const auto ref = logits(base.inputs);
    std::mt19937_64 rng(1);
    for (int i = 0; i + 1 < n; ++i) {
      auto in = base.inputs;
      for (int j = i + 1; j < n; ++j) {
        in[static_cast<size_t>(j)] = InputToken{static_cast<int>(rng() % 25), static_cast<int>(rng() % 2),
                                                static_cast<int>(rng() % 73), static_cast<int>(rng() % 129),
                                                static_cast<int>(rng() % 73), static_cast<int>(rng() % 129)};
      }
      const auto got = logits(in);
      for (size_t head = 0; head < ref.size(); ++head) {
        const size_t width = ref[head].size() / static_cast<size_t>(n);
        for (size_t k = 0; k < width * static_cast<size_t>(i + 1); ++k) ASSERT_EQ(ref[head][k], got[head][k]);
      }
    }
  }
}

TEST(Pointer, ParentDistributionShape) {
  DecoderModel<float> m(desk(Variant::kPointer));
  auto tree = three_node(true);
  auto one = flat_step(m, {InputToken::of(tree.node(0))}, {1});
  ASSERT_EQ(one.parent.size(), 1u);
  EXPECT_DOUBLE_EQ(one.parent[0], 0.0);

  std::vector<InputToken> same(4, InputToken::of(tree.node(1)));
  auto u = flat_step(m, same, {1, 1, 1, 1});
  ASSERT_EQ(u.parent.size(), 4u);
  for (double lp : u.parent) EXPECT_NEAR(std::exp(lp), 0.25, 1e-5);

  auto masked = flat_step(m, {InputToken::of(tree.node(0)), InputToken::of(tree.node(1)), InputToken::of(tree.node(2))},
                          {1, 0, 1});
  EXPECT_EQ(masked.parent[1], -std::numeric_limits<double>::infinity());
  EXPECT_NEAR(std::exp(masked.parent[0]) + std::exp(masked.parent[2]), 1.0, 1e-9);
}

TEST(StepDistribution, HeadsNormalize) {
  for (Variant v : {Variant::kVanilla, Variant::kPointer}) {
    DecoderModel<float> m(desk(v));
    auto tree = generate_synthetic(3);
    std::vector<InputToken> in;
    std::vector<std::uint8_t> ok;
    for (const auto& n : tree.nodes()) {
      in.push_back(InputToken::of(n));
      ok.push_back(!n.terminal);
    }
    auto d = flat_step(m, in, ok);
    for (const auto* head : {&d.c, &d.t, &d.x, &d.y, &d.x2, &d.y2}) {
      double total = 0;
      for (double lp : *head) {
        ASSERT_TRUE(std::isfinite(lp));
        total += std::exp(lp);
      }
      EXPECT_NEAR(total, 1.0, 1e-5);
    }
  }
}

TEST(Recursive, AncestryGrowsWithDepth) {
  auto tree = generate_synthetic(41);
  auto lists = encode_recursive(tree, 1, TraversalOrder::kBfs, desk(Variant::kRecursive));
  ASSERT_FALSE(lists.empty());
  EXPECT_EQ(lists.front().parent, 0);
  EXPECT_EQ(lists.front().ancestry.size(), 1u);
  for (const auto& l : lists) {
    for (int c : l.children) EXPECT_EQ(static_cast<int>(l.ancestry.size()), tree.node(c).depth);
    EXPECT_EQ(l.targets.size(), l.children.size() + 1);
  }
}

TEST(Recursive, ListsIgnoreSiblingSubtrees) {
  // Find a tree where the root has two non-terminal children.
  for (std::uint64_t seed = 0;; ++seed) {
    auto tree = generate_synthetic(seed);
    std::vector<int> containers;
    for (int c : tree.children(0)) {
      if (!tree.node(c).terminal) containers.push_back(c);
    }
    if (containers.size() < 2) continue;
    const int p = containers[0], q = containers[1];
    // Rewrite every node below q.
    std::vector<LayoutNode> nodes = tree.nodes();
    for (size_t i = 0; i < nodes.size(); ++i) {
      int a = nodes[i].parent;
      bool below = false;
      for (; a != kNoParent; a = nodes[static_cast<size_t>(a)].parent) below = below || a == q;
      if (below) nodes[i].type_id = (nodes[i].type_id + 5) % 25;
    }
    LayoutTree changed(nodes);
    DecoderModel<float> m(desk(Variant::kRecursive));
    auto s1 = recursive_list_states(m, {{&tree, 1, TraversalOrder::kBfs}});
    auto s2 = recursive_list_states(m, {{&changed, 1, TraversalOrder::kBfs}});
    EXPECT_EQ(s1[0].at(p).data, s2[0].at(p).data);
    EXPECT_EQ(s1[0].at(0).data, s2[0].at(0).data);
    EXPECT_NE(s1[0].at(q).data, s2[0].at(q).data);
    break;
  }
}

TEST(Recursive, ForestBatchingMatchesPerTree) {
  DecoderModel<float> m(desk(Variant::kRecursive));
  std::mt19937_64 rng(99);
  for (int forest = 0; forest < 50; ++forest) {
    const int size = 2 + static_cast<int>(rng() % 4);
    std::vector<LayoutTree> trees;
    for (int i = 0; i < size; ++i) trees.push_back(generate_synthetic(rng() % 100000));
    std::vector<TrainExample> batch;
    for (const auto& t : trees) batch.push_back({&t, 1, TraversalOrder::kBfs});
    auto together = recursive_list_states(m, batch);
    for (size_t i = 0; i < trees.size(); ++i) {
      auto alone = recursive_list_states(m, {batch[i]});
      ASSERT_EQ(alone[0].size(), together[i].size());
      for (const auto& [parent, states] : alone[0]) {
        const auto& other = together[i].at(parent).data;
        for (size_t k = 0; k < states.data.size(); ++k) EXPECT_NEAR(states.data[k], other[k], 1e-5);
      }
    }
  }
}

TEST(Recursive, InferenceMatchesTrainingStates) {
  auto tree = generate_synthetic(8);
  DecoderModel<float> m(desk(Variant::kRecursive));
  auto lists = recursive_list_states(m, {{&tree, 1, TraversalOrder::kBfs}});
  std::vector<std::vector<float>> states(static_cast<size_t>(tree.size()));
  states[0] = recursive_root_state(m, tree.node(0));
  for (int p : traverse(tree, TraversalOrder::kBfs)) {
    if (tree.node(p).terminal) continue;
    std::vector<InputToken> list{InputToken::of(tree.node(p))};
    for (int c : tree.children(p)) list.push_back(InputToken::of(tree.node(c)));
    std::vector<std::vector<float>> anc;
    for (int a = p; a != kNoParent; a = tree.node(a).parent) anc.insert(anc.begin(), states[static_cast<size_t>(a)]);
    auto step = recursive_step(m, list, anc);
    const auto& ref = lists[0].at(p);
    for (size_t s = 0; s < step.states.size(); ++s) {
      for (size_t c = 0; c < step.states[s].size(); ++c) ASSERT_EQ(step.states[s][c], ref.at(static_cast<int>(s), static_cast<int>(c)));
    }
    const auto& kids = tree.children(p);
    for (size_t s = 0; s < kids.size(); ++s) states[static_cast<size_t>(kids[s])] = step.states[s + 1];
  }
}

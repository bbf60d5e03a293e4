#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <type_traits>

#include "layoutcomp/gradcheck.hpp"
#include "layoutcomp/graph.hpp"
#include "layoutcomp/optim.hpp"
#include "support/grad_cases.hpp"

using namespace layoutcomp::ad;
using namespace layoutcomp::testing;

namespace {

template <typename T>
void check_primitives(double tolerance, T eps) {
  for (const auto& c : primitive_cases<T>()) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      std::mt19937_64 rng(seed);
      ParamSet<T> ps;
      c.make(ps, rng);
      auto res = grad_check<T>(ps.pointers(), [&](Graph<T>& g) { return scalar_loss(c, g, ps, seed); }, eps);
      EXPECT_LT(res.max_rel_error, tolerance) << c.name << " seed " << seed << " worst " << res.worst_param << "["
                                              << res.worst_index << "]";
    }
  }
}

}  // namespace

TEST(Softmax, Examples) {
  auto u = softmax<double>(std::vector<double>{0, 0, 0});
  for (double v : u) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);
  auto p = softmax<double>(std::vector<double>{0, std::log(2.0)});
  EXPECT_NEAR(p[0], 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(p[1], 2.0 / 3.0, 1e-12);
}

TEST(Softmax, ShiftInvarianceAndNormalization) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0, 3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(8), w(8);
    const double c = n(rng) * 100;
    for (size_t i = 0; i < v.size(); ++i) {
      v[i] = n(rng);
      w[i] = v[i] + c;
    }
    auto a = softmax<double>(v);
    auto b = softmax<double>(w);
    double total = 0;
    for (size_t i = 0; i < a.size(); ++i) {
      EXPECT_NEAR(a[i], b[i], 1e-9);
      EXPECT_GE(a[i], 0.0);
      total += a[i];
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Softmax, RowsMatchPlainSoftmax) {
  Graph<float> g(false);
  auto x = g.constant(Tensor<float>({2, 3}, std::vector<float>{0, 0, 0, 0, std::log(2.0f), 1000}));
  auto y = softmax_rows(x).value();
  EXPECT_NEAR(y.at(0, 1), 1.0f / 3.0f, 1e-6);
  EXPECT_NEAR(y.at(1, 2), 1.0f, 1e-6);
}

TEST(Softmax, NonFiniteInputThrows) {
  std::vector<double> v{0, std::nan("")};
  EXPECT_THROW(softmax<double>(v), NonFiniteError);
  Graph<double> g(false);
  EXPECT_THROW(g.constant(Tensor<double>({1, 2}, std::vector<double>{1, INFINITY})), NonFiniteError);
}

TEST(GradCheck, LinearFunctionIsExact) {
  ParamSet<double> ps;
  auto& x = ps.add("x", Tensor<double>({3}, std::vector<double>{0.5, -1, 2}));
  (void)x;
  auto res = grad_check<double>(ps.pointers(), [&](Graph<double>& g) {
    return sum(scale(g.param(ps.get("x")), 3.0));
  }, 1e-4);
  EXPECT_LT(res.max_rel_error, 1e-10);
}

TEST(GradCheck, SumOfSquares) {
  ParamSet<double> ps;
  ps.add("x", Tensor<double>({2}, std::vector<double>{1, 2}));
  auto res = grad_check<double>(ps.pointers(), [&](Graph<double>& g) {
    auto x = g.param(ps.get("x"));
    return sum(mul(x, x));
  }, 1e-5);
  EXPECT_NEAR(ps.get("x").grad.data[0], 2.0, 1e-12);
  EXPECT_NEAR(ps.get("x").grad.data[1], 4.0, 1e-12);
  EXPECT_LT(res.max_rel_error, 1e-9);
}

TEST(GradCheck, PrimitivesDouble) { check_primitives<double>(1e-5, 1e-5); }

TEST(GradCheck, PrimitivesFloat) {
  const auto wide = primitive_cases<double>();
  const auto narrow = primitive_cases<float>();
  for (size_t c = 0; c < narrow.size(); ++c) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      std::mt19937_64 rng(seed);
      ParamSet<float> ps;
      narrow[c].make(ps, rng);
      auto wps = widen(ps);
      auto loss = [&](auto& g) {
        using G = std::remove_reference_t<decltype(g)>;
        if constexpr (std::is_same_v<G, Graph<float>>) {
          return scalar_loss(narrow[c], g, ps, seed);
        } else {
          return scalar_loss(wide[c], g, wps, seed);
        }
      };
      auto res = grad_check_f32(ps, wps, loss);
      EXPECT_LT(res.max_rel_error, 1e-3) << narrow[c].name << " seed " << seed << " worst " << res.worst_param;
    }
  }
}

TEST(GradCheck, CrossEntropyWithMaskAndIgnoredRows) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    ParamSet<double> ps;
    ps.add("logits", random_tensor<double>({4, 5}, rng));
    std::vector<double> mask(20, 0.0);
    mask[3] = kMaskedLogit;
    mask[7] = kMaskedLogit;
    const std::vector<int> targets{1, -1, 4, 0};
    auto res = grad_check<double>(ps.pointers(), [&](Graph<double>& g) {
      return cross_entropy(g.param(ps.get("logits")), targets, &mask);
    }, 1e-5);
    EXPECT_LT(res.max_rel_error, 1e-5);
  }
}

TEST(GradCheck, CrossEntropyFloat) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    ParamSet<float> ps;
    ps.add("logits", random_tensor<float>({4, 5}, rng));
    const std::vector<int> targets{1, -1, 4, 0};
    auto wps = widen(ps);
    auto res = grad_check_f32(ps, wps, [&](auto& g) {
      using G = std::remove_reference_t<decltype(g)>;
      if constexpr (std::is_same_v<G, Graph<float>>) {
        return cross_entropy(g.param(ps.get("logits")), targets);
      } else {
        return cross_entropy(g.param(wps.get("logits")), targets);
      }
    });
    EXPECT_LT(res.max_rel_error, 1e-3);
  }
}

TEST(CrossEntropy, UniformLogitsGiveLogVocab) {
  Graph<double> g(false);
  auto l = g.constant(Tensor<double>({3, 7}, 0.0));
  auto loss = cross_entropy(l, std::vector<int>{0, 3, 6});
  EXPECT_NEAR(loss.value().data[0], 3 * std::log(7.0), 1e-12);
}

TEST(CrossEntropy, ConfidentTargetIsNearZero) {
  Tensor<double> t({1, 4}, 0.0);
  t.at(0, 2) = 50;
  Graph<double> g(false);
  auto loss = cross_entropy(g.constant(t), std::vector<int>{2});
  EXPECT_LT(loss.value().data[0], 1e-8);
}

TEST(Embedding, VocabOverflowThrows) {
  Graph<double> g(false);
  auto t = g.constant(Tensor<double>({3, 2}, 1.0));
  EXPECT_THROW(embedding(t, std::vector<int>{3}), VocabOverflow);
  EXPECT_THROW(embedding(t, std::vector<int>{-2}), VocabOverflow);
}

TEST(Attention, CausalPerturbationLeavesEarlierOutputsUnchanged) {
  std::mt19937_64 rng(3);
  const int len = 5, width = 8;
  auto q = random_tensor<float>({len, width}, rng);
  auto k = random_tensor<float>({len, width}, rng);
  auto v = random_tensor<float>({len, width}, rng);
  AttentionSpec s;
  s.query_len = s.key_len = len;
  s.heads = 2;
  s.causal = true;
  auto run = [&](const Tensor<float>& qq, const Tensor<float>& kk, const Tensor<float>& vv) {
    Graph<float> g(false);
    return attention(g.constant(qq), g.constant(kk), g.constant(vv), s).value();
  };
  const auto base = run(q, k, v);
  for (int j = 1; j < len; ++j) {
    auto q2 = q, k2 = k, v2 = v;
    for (int c = 0; c < width; ++c) {
      q2.at(j, c) += 1.5f;
      k2.at(j, c) -= 2.0f;
      v2.at(j, c) *= -3.0f;
    }
    const auto out = run(q2, k2, v2);
    for (int i = 0; i < j; ++i) {
      for (int c = 0; c < width; ++c) EXPECT_EQ(base.at(i, c), out.at(i, c)) << "row " << i << " perturbed " << j;
    }
  }
}

TEST(Attention, WeightsNormalizeAndSelfOnlyForFirstStep) {
  std::mt19937_64 rng(4);
  AttentionSpec s;
  s.query_len = s.key_len = 4;
  s.heads = 2;
  s.causal = true;
  Graph<double> g(false);
  std::vector<double> w;
  attention(g.constant(random_tensor<double>({4, 6}, rng)), g.constant(random_tensor<double>({4, 6}, rng)),
            g.constant(random_tensor<double>({4, 6}, rng)), s, &w);
  ASSERT_EQ(w.size(), 2u * 4 * 4);
  for (int h = 0; h < 2; ++h) {
    EXPECT_DOUBLE_EQ(w[static_cast<size_t>(h) * 16], 1.0);
    for (int i = 0; i < 4; ++i) {
      double total = 0;
      for (int j = 0; j < 4; ++j) total += w[static_cast<size_t>(h) * 16 + i * 4 + j];
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Attention, PaddedKeysDoNotChangeOutputs) {
  std::mt19937_64 rng(5);
  auto q = random_tensor<float>({2, 4}, rng);
  auto k = random_tensor<float>({2, 4}, rng);
  auto v = random_tensor<float>({2, 4}, rng);
  AttentionSpec s;
  s.query_len = s.key_len = 2;
  s.heads = 2;
  s.causal = true;
  Graph<float> g(false);
  auto base = attention(g.constant(q), g.constant(k), g.constant(v), s).value();

  Tensor<float> qp({4, 4}), kp({4, 4}), vp({4, 4});
  std::copy(q.data.begin(), q.data.end(), qp.data.begin());
  std::copy(k.data.begin(), k.data.end(), kp.data.begin());
  std::copy(v.data.begin(), v.data.end(), vp.data.begin());
  for (size_t i = 8; i < 16; ++i) kp.data[i] = vp.data[i] = 99.0f;
  AttentionSpec sp = s;
  sp.query_len = sp.key_len = 4;
  sp.key_valid = {1, 1, 0, 0};
  auto padded = attention(g.constant(qp), g.constant(kp), g.constant(vp), sp).value();
  for (size_t i = 0; i < base.data.size(); ++i) EXPECT_EQ(base.data[i], padded.data[i]);
}

TEST(LayerNorm, NormalizedStatistics) {
  std::mt19937_64 rng(11);
  Graph<double> g(false);
  auto x = g.constant(random_tensor<double>({10, 16}, rng, 5.0));
  auto y = layer_norm(x, g.constant(Tensor<double>({16}, 1.0)), g.constant(Tensor<double>({16}, 0.0)), 0.0).value();
  for (int r = 0; r < 10; ++r) {
    double mean = 0, var = 0;
    for (int c = 0; c < 16; ++c) mean += y.at(r, c);
    mean /= 16;
    for (int c = 0; c < 16; ++c) var += (y.at(r, c) - mean) * (y.at(r, c) - mean);
    var /= 16;
    EXPECT_LT(std::abs(mean), 1e-6);
    EXPECT_NEAR(var, 1.0, 1e-5);
  }
}

TEST(Backward, SumOfLossesEqualsSumOfBackwards) {
  std::mt19937_64 rng(12);
  ParamSet<double> ps;
  ps.add("w", random_tensor<double>({4, 3}, rng));
  const auto x = random_tensor<double>({5, 4}, rng);
  auto loss_a = [&](Graph<double>& g) { return cross_entropy(linear(g.constant(x), g.param(ps.get("w"))), {0, 1, 2, 0, 1}); };
  auto loss_b = [&](Graph<double>& g) { return sum(relu(linear(g.constant(x), g.param(ps.get("w"))))); };
  auto grad_of = [&](auto f) {
    ps.zero_grad();
    Graph<double> g;
    g.backward(f(g));
    return ps.get("w").grad.data;
  };
  const auto ga = grad_of(loss_a);
  const auto gb = grad_of(loss_b);
  const auto gab = grad_of([&](Graph<double>& g) { return add(loss_a(g), loss_b(g)); });
  for (size_t i = 0; i < ga.size(); ++i) EXPECT_NEAR(gab[i], ga[i] + gb[i], 1e-12);
}

TEST(Backward, VisitsEachNodeOnce) {
  ParamSet<double> ps;
  ps.add("x", Tensor<double>({2}, std::vector<double>{1, 2}));
  Graph<double> g;
  auto x = g.param(ps.get("x"));
  auto y = add(x, x);
  auto z = sum(mul(y, y));
  g.backward(z);
  EXPECT_EQ(g.backward_visits(), 4);
  EXPECT_DOUBLE_EQ(ps.get("x").grad.data[0], 8.0);
  EXPECT_DOUBLE_EQ(ps.get("x").grad.data[1], 16.0);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  ParamSet<float> ps;
  auto& p = ps.add("w", Tensor<float>({3}, std::vector<float>{1, -2, 3}));
  AdamState<float> st;
  st.init(ps.pointers());
  adam_step(ps.pointers(), st, 0.01);
  EXPECT_EQ(p.value.data, (std::vector<float>{1, -2, 3}));
  for (float m : st.m[0]) EXPECT_EQ(m, 0.0f);
  for (float v : st.v[0]) EXPECT_EQ(v, 0.0f);
}

TEST(Adam, FirstStepMovesBySignTimesLr) {
  ParamSet<double> ps;
  auto& p = ps.add("w", Tensor<double>({3}, std::vector<double>{1, -2, 3}));
  p.grad.data = {0.5, -1e-3, 40};
  AdamState<double> st;
  adam_step(ps.pointers(), st, 0.01);
  EXPECT_NEAR(p.value.data[0], 1 - 0.01, 1e-7);
  EXPECT_NEAR(p.value.data[1], -2 + 0.01, 1e-7);
  EXPECT_NEAR(p.value.data[2], 3 - 0.01, 1e-7);
}

TEST(Adam, DeterministicAcrossRuns) {
  auto run = [] {
    std::mt19937_64 rng(9);
    ParamSet<float> ps;
    auto& p = ps.add("w", random_tensor<float>({4, 4}, rng));
    AdamState<float> st;
    for (int step = 0; step < 20; ++step) {
      for (auto& gv : p.grad.data) gv = static_cast<float>(std::normal_distribution<double>(0, 1)(rng));
      adam_step(ps.pointers(), st, 0.05);
    }
    return p.value.data;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, ShapeMismatchThrows) {
  ParamSet<float> ps;
  ps.add("w", Tensor<float>({3}, 1.0f));
  AdamState<float> st;
  st.init(ps.pointers());
  st.m[0].resize(2);
  EXPECT_THROW(adam_step(ps.pointers(), st, 0.1), ShapeMismatch);
}

TEST(LrSchedule, WarmupThenInverseSqrt) {
  LrSchedule s{1e-3, 200};
  EXPECT_NEAR(s.at(100), 5e-4, 1e-15);
  EXPECT_NEAR(s.at(200), 1e-3, 1e-15);
  EXPECT_NEAR(s.at(800), 5e-4, 1e-15);
}

#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "layoutcomp/graph.hpp"

// Every differentiable primitive as a small randomized case for gradient checks.
namespace layoutcomp::testing {

using namespace layoutcomp::ad;

template <typename T>
Tensor<T> random_tensor(std::vector<int> shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : t.data) v = static_cast<T>(n(rng));
  return t;
}

// Projects an op output onto fixed random weights so every coordinate has a generic gradient.
template <typename T>
Var<T> probe(Graph<T>& g, Var<T> y, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> mag(0.5, 1.5);
  Tensor<T> w(y.value().shape);
  for (auto& v : w.data) v = static_cast<T>((rng() & 1 ? 1.0 : -1.0) * mag(rng));
  return sum(mul(y, g.constant(std::move(w))));
}

template <typename T>
struct PrimitiveCase {
  const char* name;
  std::function<void(ParamSet<T>&, std::mt19937_64&)> make;
  std::function<Var<T>(Graph<T>&, ParamSet<T>&)> forward;
};

template <typename T>
std::vector<PrimitiveCase<T>> primitive_cases() {
  std::vector<PrimitiveCase<T>> cases;
  auto two = [](ParamSet<T>& ps, std::mt19937_64& rng) {
    ps.add("a", random_tensor<T>({3, 4}, rng));
    ps.add("b", random_tensor<T>({3, 4}, rng));
  };
  cases.push_back({"add", two, [](Graph<T>& g, ParamSet<T>& ps) {
                     return add(g.param(ps.get("a")), g.param(ps.get("b")));
                   }});
  cases.push_back({"mul", two, [](Graph<T>& g, ParamSet<T>& ps) {
                     return mul(g.param(ps.get("a")), g.param(ps.get("b")));
                   }});
  cases.push_back({"scale", two, [](Graph<T>& g, ParamSet<T>& ps) { return scale(g.param(ps.get("a")), T(-1.7)); }});
  cases.push_back({"relu",
                   [](ParamSet<T>& ps, std::mt19937_64& rng) {
                     auto t = random_tensor<T>({4, 5}, rng);
                     // keep values away from the kink so central differences are valid
                     for (auto& v : t.data) v = v >= 0 ? v + T(0.1) : v - T(0.1);
                     ps.add("a", std::move(t));
                   },
                   [](Graph<T>& g, ParamSet<T>& ps) { return relu(g.param(ps.get("a"))); }});
  cases.push_back({"linear",
                   [](ParamSet<T>& ps, std::mt19937_64& rng) {
                     ps.add("x", random_tensor<T>({3, 4}, rng));
                     ps.add("w", random_tensor<T>({4, 5}, rng));
                     ps.add("b", random_tensor<T>({5}, rng));
                   },
                   [](Graph<T>& g, ParamSet<T>& ps) {
                     return linear(g.param(ps.get("x")), g.param(ps.get("w")), g.param(ps.get("b")));
                   }});
  cases.push_back({"layer_norm",
                   [](ParamSet<T>& ps, std::mt19937_64& rng) {
                     ps.add("x", random_tensor<T>({3, 6}, rng));
                     ps.add("gamma", random_tensor<T>({6}, rng));
                     ps.add("beta", random_tensor<T>({6}, rng));
                   },
                   [](Graph<T>& g, ParamSet<T>& ps) {
                     return layer_norm(g.param(ps.get("x")), g.param(ps.get("gamma")), g.param(ps.get("beta")));
                   }});
  cases.push_back({"embedding",
                   [](ParamSet<T>& ps, std::mt19937_64& rng) { ps.add("table", random_tensor<T>({5, 4}, rng)); },
                   [](Graph<T>& g, ParamSet<T>& ps) {
                     return embedding(g.param(ps.get("table")), std::vector<int>{2, 0, 2, -1, 4});
                   }});
  cases.push_back({"concat_cols", two, [](Graph<T>& g, ParamSet<T>& ps) {
                     return concat_cols<T>({g.param(ps.get("a")), g.param(ps.get("b"))});
                   }});
  cases.push_back({"concat_rows", two, [](Graph<T>& g, ParamSet<T>& ps) {
                     return concat_rows<T>({g.param(ps.get("a")), g.param(ps.get("b"))});
                   }});
  cases.push_back({"gather_rows", two, [](Graph<T>& g, ParamSet<T>& ps) {
                     return gather_rows(g.param(ps.get("a")), std::vector<int>{2, -1, 0, 2});
                   }});
  cases.push_back({"softmax_rows", two, [](Graph<T>& g, ParamSet<T>& ps) { return softmax_rows(g.param(ps.get("a"))); }});
  auto qkv = [](ParamSet<T>& ps, std::mt19937_64& rng) {
    ps.add("q", random_tensor<T>({6, 4}, rng));
    ps.add("k", random_tensor<T>({6, 4}, rng));
    ps.add("v", random_tensor<T>({6, 4}, rng));
  };
  cases.push_back({"attention_causal", qkv, [](Graph<T>& g, ParamSet<T>& ps) {
                     AttentionSpec s;
                     s.batch = 2;
                     s.query_len = 3;
                     s.key_len = 3;
                     s.heads = 2;
                     s.causal = true;
                     s.key_valid = {1, 1, 1, 1, 1, 0};
                     return attention(g.param(ps.get("q")), g.param(ps.get("k")), g.param(ps.get("v")), s);
                   }});
  cases.push_back({"attention_cross",
                   [](ParamSet<T>& ps, std::mt19937_64& rng) {
                     ps.add("q", random_tensor<T>({4, 4}, rng));
                     ps.add("k", random_tensor<T>({6, 4}, rng));
                     ps.add("v", random_tensor<T>({6, 4}, rng));
                   },
                   [](Graph<T>& g, ParamSet<T>& ps) {
                     AttentionSpec s;
                     s.batch = 2;
                     s.query_len = 2;
                     s.key_len = 3;
                     s.heads = 1;
                     s.key_valid = {1, 0, 1, 1, 1, 1};
                     return attention(g.param(ps.get("q")), g.param(ps.get("k")), g.param(ps.get("v")), s);
                   }});
  cases.push_back({"pair_scores",
                   [](ParamSet<T>& ps, std::mt19937_64& rng) { ps.add("h", random_tensor<T>({6, 3}, rng)); },
                   [](Graph<T>& g, ParamSet<T>& ps) { return pair_scores(g.param(ps.get("h")), 2, 3); }});
  return cases;
}

template <typename T>
Var<T> scalar_loss(const PrimitiveCase<T>& c, Graph<T>& g, ParamSet<T>& ps, std::uint64_t seed) {
  return probe(g, c.forward(g, ps), seed);
}

}  // namespace layoutcomp::testing

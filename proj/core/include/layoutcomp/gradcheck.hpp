#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "layoutcomp/graph.hpp"

namespace layoutcomp::ad {

struct GradCheckResult {
  double max_rel_error = 0;
  size_t coordinates = 0;
  std::string worst_param;
  size_t worst_index = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
  // ||a - n|| / (||a|| + ||n||) over the checked coordinates of one parameter, maximized
  // over parameters.
  double max_tensor_rel_error = 0;
  std::string worst_tensor;

  void add_tensor(const std::string& name, double diff_sq, double a_sq, double n_sq) {
    const double denom = std::sqrt(a_sq) + std::sqrt(n_sq);
    const double rel = denom > 0 ? std::sqrt(diff_sq) / denom : 0.0;
    if (rel > max_tensor_rel_error) {
      max_tensor_rel_error = rel;
      worst_tensor = name;
    }
  }
};

/// Compares reverse-mode gradients of the scalar `loss` against central differences,
/// coordinate by coordinate, over every parameter in `params`. The relative error of a
/// coordinate is |a - n| / max(1e-8, |a| + |n|). `max_per_param` > 0 checks only that many
/// evenly spaced coordinates of each parameter.
template <typename T>
GradCheckResult grad_check(const std::vector<Parameter<T>*>& params, const std::function<Var<T>(Graph<T>&)>& loss,
                           T eps, size_t max_per_param = 0);

/// Copy of `params` in f64, same names and order.
ParamSet<double> widen(const ParamSet<float>& params);

/// Checks reverse-mode gradients computed in precision N against central differences taken in
/// a wider precision W. `wide` must hold the same parameters as `narrow` (values are overwritten
/// from it), and `loss` must build the same function for Graph<N> over `narrow` and Graph<W>
/// over `wide`.
template <typename N, typename W, typename LossFn>
GradCheckResult grad_check_mixed(ParamSet<N>& narrow, ParamSet<W>& wide, LossFn&& loss, W eps,
                                 size_t max_per_param = 0) {
  if (narrow.size() != wide.size()) throw ShapeMismatch("grad_check_mixed: parameter sets differ");
  for (size_t i = 0; i < narrow.size(); ++i) {
    if (narrow[i].value.numel() != wide[i].value.numel()) throw ShapeMismatch("grad_check_mixed: parameter sets differ");
    for (size_t j = 0; j < narrow[i].value.numel(); ++j) wide[i].value.data[j] = narrow[i].value.data[j];
  }
  narrow.zero_grad();
  {
    Graph<N> g(true);
    auto out = loss(g);
    g.backward(out);
  }
  auto eval = [&] {
    Graph<W> g(false);
    return loss(g).value().data.at(0);
  };
  GradCheckResult res;
  for (size_t i = 0; i < wide.size(); ++i) {
    auto& w = wide[i];
    const auto& analytic = narrow[i].grad.data;
    const size_t n = w.value.numel();
    const size_t stride = (max_per_param == 0 || n <= max_per_param) ? 1 : n / max_per_param;
    double diff_sq = 0, a_sq = 0, n_sq = 0;
    for (size_t j = 0; j < n; j += stride) {
      const W orig = w.value.data[j];
      w.value.data[j] = orig + eps;
      const W up = eval();
      w.value.data[j] = orig - eps;
      const W down = eval();
      w.value.data[j] = orig;
      const auto numeric = static_cast<double>((up - down) / (2 * eps));
      const auto a = static_cast<double>(analytic[j]);
      if (!std::isfinite(numeric) || !std::isfinite(a)) throw NonFiniteError("grad_check: non-finite gradient");
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      diff_sq += (a - numeric) * (a - numeric);
      a_sq += a * a;
      n_sq += numeric * numeric;
      ++res.coordinates;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = w.name;
        res.worst_index = j;
        res.worst_analytic = a;
        res.worst_numeric = numeric;
      }
    }
    res.add_tensor(w.name, diff_sq, a_sq, n_sq);
  }
  return res;
}

template <typename LossFn>
GradCheckResult grad_check_f32(ParamSet<float>& narrow, ParamSet<double>& wide, LossFn&& loss, double eps = 1e-6,
                               size_t max_per_param = 0) {
  return grad_check_mixed(narrow, wide, std::forward<LossFn>(loss), eps, max_per_param);
}

}  // namespace layoutcomp::ad

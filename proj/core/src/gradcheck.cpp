#include "layoutcomp/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace layoutcomp::ad {

namespace {

template <typename T>
double evaluate(const std::function<Var<T>(Graph<T>&)>& loss) {
  Graph<T> g(false);
  auto out = loss(g);
  if (out.value().numel() != 1) throw ShapeMismatch("grad_check: loss must be a scalar");
  return static_cast<double>(out.value().data[0]);
}

}  // namespace

template <typename T>
GradCheckResult grad_check(const std::vector<Parameter<T>*>& params, const std::function<Var<T>(Graph<T>&)>& loss,
                           T eps, size_t max_per_param) {
  for (auto* p : params) p->zero_grad();
  {
    Graph<T> g(true);
    auto out = loss(g);
    g.backward(out);
  }
  GradCheckResult res;
  for (auto* p : params) {
    const size_t n = p->value.numel();
    const size_t stride = (max_per_param == 0 || n <= max_per_param) ? 1 : n / max_per_param;
    double diff_sq = 0, a_sq = 0, n_sq = 0;
    for (size_t j = 0; j < n; j += stride) {
      const T orig = p->value.data[j];
      p->value.data[j] = orig + eps;
      const double up = evaluate(loss);
      p->value.data[j] = orig - eps;
      const double down = evaluate(loss);
      p->value.data[j] = orig;
      const double numeric = (up - down) / (2.0 * static_cast<double>(eps));
      const double analytic = p->grad.data[j];
      if (!std::isfinite(numeric) || !std::isfinite(analytic)) throw NonFiniteError("grad_check: non-finite gradient");
      const double rel = std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      diff_sq += (analytic - numeric) * (analytic - numeric);
      a_sq += analytic * analytic;
      n_sq += numeric * numeric;
      ++res.coordinates;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = p->name;
        res.worst_index = j;
        res.worst_analytic = analytic;
        res.worst_numeric = numeric;
      }
    }
    res.add_tensor(p->name, diff_sq, a_sq, n_sq);
  }
  return res;
}

ParamSet<double> widen(const ParamSet<float>& params) {
  ParamSet<double> out;
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    Tensor<double> t(p.value.shape);
    for (size_t j = 0; j < t.data.size(); ++j) t.data[j] = p.value.data[j];
    out.add(p.name, std::move(t));
  }
  return out;
}

template GradCheckResult grad_check<float>(const std::vector<Parameter<float>*>&,
                                           const std::function<Var<float>(Graph<float>&)>&, float, size_t);
template GradCheckResult grad_check<double>(const std::vector<Parameter<double>*>&,
                                            const std::function<Var<double>(Graph<double>&)>&, double, size_t);

}  // namespace layoutcomp::ad

#include "layoutcomp/optim.hpp"

#include <algorithm>
#include <cmath>

namespace layoutcomp::ad {

template <typename T>
void AdamState<T>::init(const std::vector<Parameter<T>*>& params) {
  step = 0;
  m.clear();
  v.clear();
  for (const auto* p : params) {
    m.emplace_back(p->value.numel(), T(0));
    v.emplace_back(p->value.numel(), T(0));
  }
}

template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, AdamState<T>& state, double lr, const AdamConfig& cfg) {
  if (state.m.empty() && state.step == 0) state.init(params);
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeMismatch("adam: optimizer state does not match the parameter list");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    const size_t n = params[i]->value.numel();
    if (params[i]->grad.numel() != n || state.m[i].size() != n || state.v[i].size() != n) {
      throw ShapeMismatch("adam: shape mismatch for parameter '" + params[i]->name + "'");
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i]->value.data;
    const auto& g = params[i]->grad.data;
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mhat = mj / c1;
      const double vhat = vj / c2;
      w[j] = static_cast<T>(w[j] - lr * mhat / (std::sqrt(vhat) + cfg.epsilon));
    }
    require_finite<T>(w, params[i]->name.c_str());
  }
}

double LrSchedule::at(std::int64_t step) const {
  const double s = static_cast<double>(std::max<std::int64_t>(step, 1));
  if (warmup <= 0) return peak;
  const double w = static_cast<double>(warmup);
  return peak * std::min(s / w, std::sqrt(w / s));
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(const std::vector<Parameter<float>*>&, AdamState<float>&, double, const AdamConfig&);
template void adam_step<double>(const std::vector<Parameter<double>*>&, AdamState<double>&, double, const AdamConfig&);

}  // namespace layoutcomp::ad

#pragma once

#include <cstdint>
#include <vector>

#include "layoutcomp/tensor.hpp"

namespace layoutcomp::ad {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First and second moments per parameter, in the parameter order they were created for.
template <typename T>
struct AdamState {
  std::int64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;

  void init(const std::vector<Parameter<T>*>& params);
};

/// One bias-corrected Adam update from each parameter's accumulated grad.
template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, AdamState<T>& state, double lr, const AdamConfig& cfg = {});

/// Linear warmup to `peak` over `warmup` steps, then inverse-square-root decay. Steps count from 1.
struct LrSchedule {
  double peak = 1e-3;
  int warmup = 200;

  double at(std::int64_t step) const;
};

extern template struct AdamState<float>;
extern template struct AdamState<double>;

}  // namespace layoutcomp::ad

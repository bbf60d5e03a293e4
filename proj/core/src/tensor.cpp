#include "layoutcomp/tensor.hpp"

#include <cmath>

namespace layoutcomp::ad {

template <typename T>
void require_finite(std::span<const T> values, const char* where) {
  for (T v : values) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string("non-finite value in ") + where);
  }
}

template <typename T>
Parameter<T>& ParamSet<T>::add(const std::string& name, Tensor<T> value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  index_[name] = params_.size();
  params_.push_back(std::make_unique<Parameter<T>>(name, std::move(value)));
  return *params_.back();
}

template <typename T>
Parameter<T>& ParamSet<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter '" + name + "'");
  return *params_[it->second];
}

template <typename T>
const Parameter<T>& ParamSet<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter '" + name + "'");
  return *params_[it->second];
}

template <typename T>
size_t ParamSet<T>::num_values() const {
  size_t n = 0;
  for (const auto& p : params_) n += p->value.numel();
  return n;
}

template <typename T>
std::vector<Parameter<T>*> ParamSet<T>::pointers() {
  std::vector<Parameter<T>*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

template <typename T>
void ParamSet<T>::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

template void require_finite<float>(std::span<const float>, const char*);
template void require_finite<double>(std::span<const double>, const char*);
template struct Tensor<float>;
template struct Tensor<double>;
template class ParamSet<float>;
template class ParamSet<double>;
template void require_finite<long double>(std::span<const long double>, const char*);
template struct Tensor<long double>;
template class ParamSet<long double>;

}  // namespace layoutcomp::ad

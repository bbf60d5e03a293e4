#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace layoutcomp::ad {

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class VocabOverflow : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Dense row-major tensor. Most operations treat it as a matrix: the last extent is the
/// column count and everything before it is folded into rows.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
    for (int e : shape) {
      if (e <= 0) throw ShapeMismatch("tensor extents must be positive");
    }
    data.assign(numel_of(shape), fill);
  }
  Tensor(std::vector<int> s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != numel_of(shape)) throw ShapeMismatch("data length does not match shape");
  }

  static size_t numel_of(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), size_t{1}, [](size_t a, int b) { return a * static_cast<size_t>(b); });
  }
  size_t numel() const { return data.size(); }
  int cols() const { return shape.empty() ? 1 : shape.back(); }
  int rows() const { return cols() == 0 ? 0 : static_cast<int>(numel() / static_cast<size_t>(cols())); }
  T* row(int r) { return data.data() + static_cast<size_t>(r) * static_cast<size_t>(cols()); }
  const T* row(int r) const { return data.data() + static_cast<size_t>(r) * static_cast<size_t>(cols()); }
  T& at(int r, int c) { return row(r)[c]; }
  T at(int r, int c) const { return row(r)[c]; }
};

template <typename T>
void require_finite(std::span<const T> values, const char* where);

/// Trainable tensor with its gradient accumulator.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape) {
    value.requires_grad = true;
  }
  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), T(0)); }
};

/// Named parameters with stable addresses, kept in registration order.
template <typename T>
class ParamSet {
 public:
  Parameter<T>& add(const std::string& name, Tensor<T> value);
  Parameter<T>& get(const std::string& name);
  const Parameter<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  size_t size() const { return params_.size(); }
  size_t num_values() const;
  Parameter<T>& operator[](size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](size_t i) const { return *params_[i]; }
  std::vector<Parameter<T>*> pointers();
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::map<std::string, size_t> index_;
};

extern template struct Tensor<float>;
extern template struct Tensor<double>;
extern template class ParamSet<float>;
extern template class ParamSet<double>;

}  // namespace layoutcomp::ad

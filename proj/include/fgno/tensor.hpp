#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace fgno {

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    out += std::to_string(s[i]);
    if (i + 1 < s.size()) out += ", ";
  }
  return out + "]";
}

// Dense row-major tensor. Rank is dynamic but almost everything in the
// pipeline is rank-1 or rank-2.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> sh) : shape(std::move(sh)) {
    v.assign(numel_of(shape), T(0));
  }
  Tensor(std::vector<int> sh, std::vector<T> data)
      : shape(std::move(sh)), v(std::move(data)) {
    if (static_cast<size_t>(numel_of(shape)) != v.size())
      throw std::invalid_argument("tensor: shape " + shape_str(shape) +
                                  " does not match buffer of " +
                                  std::to_string(v.size()) + " values");
  }

  static long numel_of(const std::vector<int>& sh) {
    long n = 1;
    for (int d : sh) {
      if (d <= 0) throw std::invalid_argument("tensor: non-positive extent in " + shape_str(sh));
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> sh) { return Tensor(std::move(sh)); }
  static Tensor full(std::vector<int> sh, T value) {
    Tensor t(std::move(sh));
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
  }
  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  long numel() const { return static_cast<long>(v.size()); }
  int rows() const { return shape.at(0); }
  int cols() const { return shape.at(1); }

  T& at(int i, int j) { return v[static_cast<size_t>(i) * cols() + j]; }
  const T& at(int i, int j) const { return v[static_cast<size_t>(i) * cols() + j]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (T x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.v.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape) + " vs " + shape_str(b.shape));
}

}  // namespace fgno

#pragma once

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adml/error.hpp"

namespace adml {

using Shape = std::vector<std::size_t>;

/// Element precision tag, encoded on disk as a single byte.
enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <std::floating_point T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "only single and double precision are supported");
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major array. A rank-0 tensor holds a single scalar.
template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : data_(1, T{0}) {}

  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(numel_of(shape_), fill) {
    check_extents();
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != numel_of(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const noexcept { return data_.size(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T item() const {
    if (data_.size() != 1) {
      throw ContractError("item() on tensor of shape " + shape_str(shape_));
    }
    return data_[0];
  }

  Tensor reshaped(Shape shape) const {
    if (numel_of(shape) != numel()) {
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " +
                           shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  bool operator==(const Tensor&) const = default;

 private:
  void check_extents() const {
    for (auto e : shape_) {
      if (e == 0) throw DimensionError("zero extent in shape " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

/// Same shape and identical bit patterns (distinguishes -0 from +0, compares NaN payloads).
template <std::floating_point T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(T)) == 0;
}

template <std::floating_point T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  T m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Concatenate along axis 0; trailing extents must agree.
template <std::floating_point T>
Tensor<T> concat0(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() == 0 || a.rank() != b.rank() ||
      !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
    throw DimensionError("concat0: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  Shape s = a.shape();
  s[0] += b.dim(0);
  std::vector<T> d(a.vec());
  d.insert(d.end(), b.vec().begin(), b.vec().end());
  return Tensor<T>(std::move(s), std::move(d));
}

/// Rows [begin, end) along axis 0.
template <std::floating_point T>
Tensor<T> slice0(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  if (a.rank() == 0 || begin >= end || end > a.dim(0)) {
    throw DimensionError("slice0 out of range on " + shape_str(a.shape()));
  }
  const std::size_t row = a.numel() / a.dim(0);
  Shape s = a.shape();
  s[0] = end - begin;
  std::vector<T> d(a.vec().begin() + begin * row, a.vec().begin() + end * row);
  return Tensor<T>(std::move(s), std::move(d));
}

/// Stack equally shaped tensors into a new leading axis.
template <std::floating_point T>
Tensor<T> stack(std::span<const Tensor<T>> items) {
  if (items.empty()) throw ContractError("stack of zero tensors");
  Shape s{items.size()};
  const Shape& inner = items.front().shape();
  s.insert(s.end(), inner.begin(), inner.end());
  std::vector<T> d;
  d.reserve(numel_of(s));
  for (const auto& t : items) {
    if (t.shape() != inner) {
      throw DimensionError("stack: " + shape_str(t.shape()) + " vs " + shape_str(inner));
    }
    d.insert(d.end(), t.vec().begin(), t.vec().end());
  }
  return Tensor<T>(std::move(s), std::move(d));
}

template <std::floating_point To, std::floating_point From>
Tensor<To> cast(const Tensor<From>& t) {
  std::vector<To> d(t.numel());
  std::transform(t.vec().begin(), t.vec().end(), d.begin(),
                 [](From v) { return static_cast<To>(v); });
  return Tensor<To>(t.shape(), std::move(d));
}

}  // namespace adml

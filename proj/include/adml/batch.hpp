#pragma once

#include "adml/tensor.hpp"

namespace adml {

/// Labeled samples: x is [B, sample...], y holds B class indices.
template <std::floating_point T>
struct Batch {
  Tensor<T> x;
  std::vector<int> y;

  std::size_t size() const noexcept { return y.size(); }
  bool operator==(const Batch&) const = default;
};

/// Rows of `a` followed by rows of `b`.
template <std::floating_point T>
Batch<T> concat(const Batch<T>& a, const Batch<T>& b) {
  Batch<T> out{concat0(a.x, b.x), a.y};
  out.y.insert(out.y.end(), b.y.begin(), b.y.end());
  return out;
}

}  // namespace adml

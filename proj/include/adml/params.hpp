#pragma once

#include <string>
#include <string_view>

#include "adml/ops.hpp"

namespace adml {

template <std::floating_point T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;

  bool operator==(const NamedTensor&) const = default;
};

/// Ordered, uniquely named tensors. Values are never mutated in place;
/// updates build a new set.
template <std::floating_point T>
class ParamSet {
 public:
  ParamSet() = default;

  explicit ParamSet(std::vector<NamedTensor<T>> entries) : entries_(std::move(entries)) {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      for (std::size_t j = 0; j < i; ++j)
        if (entries_[i].name == entries_[j].name) {
          throw ParameterError("duplicate parameter name '" + entries_[i].name + "'");
        }
  }

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  const NamedTensor<T>& operator[](std::size_t i) const { return entries_.at(i); }

  const Tensor<T>* find(std::string_view name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e.value;
    return nullptr;
  }

  const Tensor<T>& at(std::string_view name) const {
    if (const auto* t = find(name)) return *t;
    throw ParameterError("missing parameter '" + std::string(name) + "'");
  }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
  }

  bool operator==(const ParamSet&) const = default;

 private:
  std::vector<NamedTensor<T>> entries_;
};

/// Gradient per parameter name, in the order the targets were requested.
template <std::floating_point T>
using GradMap = ParamSet<T>;

template <std::floating_point T>
bool bitwise_equal(const ParamSet<T>& a, const ParamSet<T>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || !bitwise_equal(a[i].value, b[i].value)) return false;
  }
  return true;
}

template <std::floating_point T>
T max_abs_diff(const ParamSet<T>& a, const ParamSet<T>& b) {
  T m = 0;
  for (const auto& e : a) m = std::max(m, max_abs_diff(e.value, b.at(e.name)));
  return m;
}

/// theta - step * g, matched by name. Returns a fresh set; neither input changes.
template <std::floating_point T>
ParamSet<T> sgd_step(const ParamSet<T>& theta, const GradMap<T>& g, T step) {
  std::vector<NamedTensor<T>> out;
  out.reserve(theta.size());
  for (const auto& e : theta) {
    const Tensor<T>& d = g.at(e.name);
    if (d.shape() != e.value.shape()) {
      throw DimensionError("gradient for '" + e.name + "' has shape " + shape_str(d.shape()));
    }
    Tensor<T> v = e.value;
    for (std::size_t i = 0; i < v.numel(); ++i) v[i] -= step * d[i];
    out.push_back({e.name, std::move(v)});
  }
  return ParamSet<T>(std::move(out));
}

/// Elementwise a + b over matching names (order of a).
template <std::floating_point T>
GradMap<T> accumulate(const GradMap<T>& a, const GradMap<T>& b) {
  std::vector<NamedTensor<T>> out;
  out.reserve(a.size());
  for (const auto& e : a) {
    Tensor<T> v = e.value;
    const Tensor<T>& d = b.at(e.name);
    for (std::size_t i = 0; i < v.numel(); ++i) v[i] += d[i];
    out.push_back({e.name, std::move(v)});
  }
  return GradMap<T>(std::move(out));
}

/// Parameters bound into a graph, addressed by name.
template <std::floating_point T>
class VarParams {
 public:
  VarParams() = default;

  void push(std::string name, Var<T> v) { entries_.emplace_back(std::move(name), std::move(v)); }

  /// Fresh leaves for every parameter of `p`.
  static VarParams leaves(const ParamSet<T>& p, bool requires_grad = true) {
    VarParams out;
    for (const auto& e : p) out.push(e.name, Var<T>::leaf(e.value, requires_grad));
    return out;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_.at(i).first; }
  const Var<T>& var(std::size_t i) const { return entries_.at(i).second; }

  const Var<T>& at(std::string_view name) const {
    for (const auto& [n, v] : entries_)
      if (n == name) return v;
    throw ParameterError("missing parameter '" + std::string(name) + "'");
  }

  bool contains(std::string_view name) const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const auto& e) { return e.first == name; });
  }

  std::vector<Var<T>> vars() const {
    std::vector<Var<T>> out;
    for (const auto& e : entries_) out.push_back(e.second);
    return out;
  }

  ParamSet<T> values() const {
    std::vector<NamedTensor<T>> out;
    for (const auto& [n, v] : entries_) out.push_back({n, v.value()});
    return ParamSet<T>(std::move(out));
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> entries_;
};

/// Gradients of `loss` w.r.t. every entry of `params`, keyed by name.
template <std::floating_point T>
std::vector<Var<T>> grad(const Var<T>& loss, const VarParams<T>& params, bool create_graph) {
  const auto targets = params.vars();
  return grad(loss, std::span<const Var<T>>(targets), create_graph);
}

template <std::floating_point T>
GradMap<T> grad_map(const Var<T>& loss, const VarParams<T>& params) {
  const auto g = grad(loss, params, false);
  std::vector<NamedTensor<T>> out;
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back({params.name(i), g[i].value()});
  return GradMap<T>(std::move(out));
}

}  // namespace adml

#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// Every differentiable op records a Node holding its forward value, its
// inputs, and a backward rule. Backward rules are written in terms of the
// same differentiable ops, so when gradients are requested with
// create_graph=true the returned gradients are themselves recorded and can be
// differentiated again. That is what meta-gradients through an inner
// gradient-descent step need.
//
// Graphs are immutable once built: backward() keeps all adjoints in a local
// table and never touches the nodes, so the same graph can be differentiated
// any number of times. There is no global state (no "no_grad" mode); a Var
// obtained through detach() is simply treated as a constant by every op.

#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>

#include "adml/tensor.hpp"

namespace adml {

template <std::floating_point T>
struct Node;

/// Handle to a recorded value. Cheap to copy; shares the underlying node.
template <std::floating_point T>
class Var {
 public:
  Var() = default;

  /// A graph input. With requires_grad=false the value is a constant.
  static Var leaf(Tensor<T> value, bool requires_grad = true);
  static Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t numel() const { return node_->value.numel(); }
  T item() const { return node_->value.item(); }

  bool requires_grad() const noexcept;
  const char* op() const noexcept;

  /// Same value, cut from the graph.
  Var detach() const { return Var(node_, false); }

  const Node<T>* node() const noexcept { return node_.get(); }

  Var(std::shared_ptr<const Node<T>> node, bool tracked)
      : node_(std::move(node)), tracked_(tracked) {}

 private:
  std::shared_ptr<const Node<T>> node_;
  bool tracked_ = false;
};

/// What a backward rule sees. `need[i]` tells whether input i wants a gradient;
/// rules may leave the other entries undefined.
template <std::floating_point T>
struct BackwardCtx {
  std::span<const Var<T>> inputs;
  const Var<T>& out;
  const Var<T>& grad;
  std::span<const char> need;
};

template <std::floating_point T>
using BackwardFn = std::function<std::vector<Var<T>>(const BackwardCtx<T>&)>;

template <std::floating_point T>
struct Node : std::enable_shared_from_this<Node<T>> {
  Tensor<T> value;
  std::vector<Var<T>> inputs;
  BackwardFn<T> backward;
  const char* op = "leaf";
  bool requires_grad = false;
};

template <std::floating_point T>
Var<T> Var<T>::leaf(Tensor<T> value, bool requires_grad) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Var(std::move(n), true);
}

template <std::floating_point T>
bool Var<T>::requires_grad() const noexcept {
  return node_ && tracked_ && node_->requires_grad;
}

template <std::floating_point T>
const char* Var<T>::op() const noexcept {
  return node_ ? node_->op : "undefined";
}

/// Record an op result. Inputs that do not require gradients are not retained.
template <std::floating_point T>
Var<T> record(const char* op, Tensor<T> value, std::vector<Var<T>> inputs, BackwardFn<T> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = op;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Var<T>& v) { return v.requires_grad(); });
  if (any) {
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward = std::move(backward);
  }
  return Var<T>(std::move(n), true);
}

template <std::floating_point T>
Var<T> add(const Var<T>& a, const Var<T>& b);

namespace detail {

template <std::floating_point T>
std::vector<const Node<T>*> topo_order(const Node<T>* root) {
  std::vector<const Node<T>*> order;
  std::unordered_set<const Node<T>*> seen;
  std::vector<std::pair<const Node<T>*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      const Var<T>& in = n->inputs[next++];
      if (in.requires_grad() && seen.insert(in.node()).second) {
        stack.emplace_back(in.node(), 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  return order;  // inputs before consumers
}

}  // namespace detail

/// Gradients of scalar `root` w.r.t. each of `wrt`, in the same order.
///
/// A target the root does not depend on gets a zero gradient. With
/// create_graph the results are recorded Vars, differentiable again.
template <std::floating_point T>
std::vector<Var<T>> grad(const Var<T>& root, std::span<const Var<T>> wrt, bool create_graph = false) {
  if (!root.defined() || root.numel() != 1) {
    throw ContractError("backward root must be a scalar, got shape " +
                        (root.defined() ? shape_str(root.shape()) : std::string("<undefined>")));
  }
  std::unordered_map<const Node<T>*, Var<T>> adj;
  if (root.requires_grad()) {
    adj.emplace(root.node(), Var<T>::constant(Tensor<T>(root.shape(), T{1})));
    const auto order = detail::topo_order(root.node());
    std::vector<Var<T>> inputs;
    std::vector<char> need;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const Node<T>* n = *it;
      auto found = adj.find(n);
      if (found == adj.end() || !n->backward) continue;
      inputs.clear();
      need.clear();
      for (const auto& in : n->inputs) {
        inputs.push_back(create_graph ? in : in.detach());
        need.push_back(in.requires_grad() ? 1 : 0);
      }
      const Var<T> out(n->shared_from_this(), create_graph);
      const Var<T> g = create_graph ? found->second : found->second.detach();
      const auto gins = n->backward(BackwardCtx<T>{inputs, out, g, need});
      for (std::size_t i = 0; i < n->inputs.size(); ++i) {
        if (!need[i] || !gins.at(i).defined()) continue;
        const Node<T>* p = n->inputs[i].node();
        auto slot = adj.find(p);
        if (slot == adj.end()) {
          adj.emplace(p, gins[i]);
        } else {
          slot->second = add(slot->second, gins[i]);
        }
      }
    }
  }
  std::vector<Var<T>> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto found = w.requires_grad() ? adj.find(w.node()) : adj.end();
    if (found == adj.end()) {
      out.push_back(Var<T>::constant(Tensor<T>(w.shape())));
    } else {
      out.push_back(create_graph ? found->second : found->second.detach());
    }
  }
  return out;
}

template <std::floating_point T>
std::vector<Var<T>> grad(const Var<T>& root, std::initializer_list<Var<T>> wrt, bool create_graph = false) {
  return grad(root, std::span<const Var<T>>(wrt.begin(), wrt.size()), create_graph);
}

}  // namespace adml

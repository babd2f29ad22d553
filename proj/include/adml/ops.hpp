#pragma once

// Differentiable ops. Each backward rule is composed from ops in this file,
// which keeps every gradient differentiable to arbitrary order.

#include <cmath>

#include "adml/autodiff.hpp"
#include "adml/kernels.hpp"

namespace adml {

template <std::floating_point T>
using Grads = std::vector<Var<T>>;

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <std::floating_point T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return record<T>("add", kernel::zip(a.value(), b.value(), std::plus<T>{}, "add"), {a, b},
                   [](const BackwardCtx<T>& c) { return Grads<T>{c.grad, c.grad}; });
}

template <std::floating_point T>
Var<T> neg(const Var<T>& a);

template <std::floating_point T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return record<T>("sub", kernel::zip(a.value(), b.value(), std::minus<T>{}, "sub"), {a, b},
                   [](const BackwardCtx<T>& c) {
                     Grads<T> g(2);
                     if (c.need[0]) g[0] = c.grad;
                     if (c.need[1]) g[1] = neg(c.grad);
                     return g;
                   });
}

template <std::floating_point T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return record<T>("mul", kernel::zip(a.value(), b.value(), std::multiplies<T>{}, "mul"), {a, b},
                   [](const BackwardCtx<T>& c) {
                     Grads<T> g(2);
                     if (c.need[0]) g[0] = mul(c.grad, c.inputs[1]);
                     if (c.need[1]) g[1] = mul(c.grad, c.inputs[0]);
                     return g;
                   });
}

/// a * k for a constant k.
template <std::floating_point T>
Var<T> scale(const Var<T>& a, T k) {
  return record<T>("scale", kernel::map(a.value(), [k](T v) { return v * k; }), {a},
                   [k](const BackwardCtx<T>& c) { return Grads<T>{scale(c.grad, k)}; });
}

template <std::floating_point T>
Var<T> neg(const Var<T>& a) {
  return scale(a, T{-1});
}

/// a + k for a constant k.
template <std::floating_point T>
Var<T> add_scalar(const Var<T>& a, T k) {
  return record<T>("add_scalar", kernel::map(a.value(), [k](T v) { return v + k; }), {a},
                   [](const BackwardCtx<T>& c) { return Grads<T>{c.grad}; });
}

template <std::floating_point T>
Var<T> exp(const Var<T>& a) {
  return record<T>("exp", kernel::map(a.value(), [](T v) { return std::exp(v); }), {a},
                   [](const BackwardCtx<T>& c) { return Grads<T>{mul(c.grad, c.out)}; });
}

template <std::floating_point T>
Var<T> log(const Var<T>& a) {
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (!(a.value()[i] > 0)) throw ContractError("log of a non-positive value");
  }
  return record<T>("log", kernel::map(a.value(), [](T v) { return std::log(v); }), {a},
                   [](const BackwardCtx<T>& c) {
                     return Grads<T>{mul(c.grad, pow(c.inputs[0], T{-1}))};
                   });
}

/// Elementwise a^p for a constant exponent; a must be positive unless p is integral.
template <std::floating_point T>
Var<T> pow(const Var<T>& a, T p) {
  return record<T>("pow", kernel::map(a.value(), [p](T v) { return std::pow(v, p); }), {a},
                   [p](const BackwardCtx<T>& c) {
                     return Grads<T>{mul(c.grad, scale(pow(c.inputs[0], p - 1), p))};
                   });
}

/// a * mask for a constant mask (used for relu and its derivatives).
template <std::floating_point T>
Var<T> apply_mask(const Var<T>& a, std::shared_ptr<const Tensor<T>> mask) {
  auto v = kernel::zip(a.value(), *mask, std::multiplies<T>{}, "apply_mask");
  return record<T>("mask", std::move(v), {a},
                   [mask](const BackwardCtx<T>& c) { return Grads<T>{apply_mask(c.grad, mask)}; });
}

/// max(0, x); the derivative at exactly 0 is taken as 0.
template <std::floating_point T>
Var<T> relu(const Var<T>& x) {
  auto mask = std::make_shared<const Tensor<T>>(
      kernel::map(x.value(), [](T v) { return v > 0 ? T{1} : T{0}; }));
  return apply_mask(x, std::move(mask));
}

// ---------------------------------------------------------------------------
// Shape ops and reductions

template <std::floating_point T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Shape from = a.shape();
  return record<T>("reshape", a.value().reshaped(std::move(shape)), {a},
                   [from](const BackwardCtx<T>& c) { return Grads<T>{reshape(c.grad, from)}; });
}

/// Row-major flatten to [B, rest].
template <std::floating_point T>
Var<T> flatten(const Var<T>& x) {
  if (x.shape().empty()) throw DimensionError("flatten of a scalar");
  const std::size_t b = x.shape()[0];
  return reshape(x, Shape{b, x.numel() / b});
}

template <std::floating_point T>
Var<T> transpose(const Var<T>& a) {
  return record<T>("transpose", kernel::transpose(a.value()), {a},
                   [](const BackwardCtx<T>& c) { return Grads<T>{transpose(c.grad)}; });
}

template <std::floating_point T>
Var<T> reduce_to_axis(const Var<T>& x, std::size_t axis);

/// Broadcast a vector along `axis` of `shape`.
template <std::floating_point T>
Var<T> expand_axis(const Var<T>& v, Shape shape, std::size_t axis) {
  auto value = kernel::expand_axis(v.value(), shape, axis);
  return record<T>("expand_axis", std::move(value), {v}, [axis](const BackwardCtx<T>& c) {
    return Grads<T>{reduce_to_axis(c.grad, axis)};
  });
}

/// Sum over all axes but `axis`, giving a vector of length shape[axis].
template <std::floating_point T>
Var<T> reduce_to_axis(const Var<T>& x, std::size_t axis) {
  Shape from = x.shape();
  return record<T>("reduce_to_axis", kernel::reduce_to_axis(x.value(), axis), {x},
                   [from, axis](const BackwardCtx<T>& c) {
                     return Grads<T>{expand_axis(c.grad, from, axis)};
                   });
}

/// Fill `shape` with the scalar `s`.
template <std::floating_point T>
Var<T> broadcast_scalar(const Var<T>& s, Shape shape);

template <std::floating_point T>
Var<T> sum(const Var<T>& x) {
  Shape from = x.shape();
  return record<T>("sum", Tensor<T>::scalar(kernel::sum(x.value())), {x},
                   [from](const BackwardCtx<T>& c) {
                     return Grads<T>{broadcast_scalar(c.grad, from)};
                   });
}

template <std::floating_point T>
Var<T> broadcast_scalar(const Var<T>& s, Shape shape) {
  Tensor<T> v(shape, s.value().item());
  return record<T>("broadcast_scalar", std::move(v), {s},
                   [](const BackwardCtx<T>& c) { return Grads<T>{reshape(sum(c.grad), Shape(c.inputs[0].shape()))}; });
}

template <std::floating_point T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.numel()));
}

template <std::floating_point T>
Var<T> scatter_add(const Var<T>& g, std::shared_ptr<const kernel::Index> idx, Shape out_shape);

/// out[i] = x[idx[i]].
template <std::floating_point T>
Var<T> gather(const Var<T>& x, std::shared_ptr<const kernel::Index> idx, Shape out_shape) {
  Shape from = x.shape();
  auto v = kernel::gather(x.value(), *idx, out_shape);
  return record<T>("gather", std::move(v), {x}, [idx, from](const BackwardCtx<T>& c) {
    return Grads<T>{scatter_add(c.grad, idx, from)};
  });
}

template <std::floating_point T>
Var<T> scatter_add(const Var<T>& g, std::shared_ptr<const kernel::Index> idx, Shape out_shape) {
  Shape from = g.shape();
  auto v = kernel::scatter_add(g.value(), *idx, out_shape);
  return record<T>("scatter_add", std::move(v), {g}, [idx, from](const BackwardCtx<T>& c) {
    return Grads<T>{gather(c.grad, idx, from)};
  });
}

// ---------------------------------------------------------------------------
// Network layers

template <std::floating_point T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  return record<T>("matmul", kernel::matmul(a.value(), b.value()), {a, b},
                   [](const BackwardCtx<T>& c) {
                     Grads<T> g(2);
                     if (c.need[0]) g[0] = matmul(c.grad, transpose(c.inputs[1]));
                     if (c.need[1]) g[1] = matmul(transpose(c.inputs[0]), c.grad);
                     return g;
                   });
}

/// x[B,in] * w[in,out] + b[out].
template <std::floating_point T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  auto y = matmul(x, w);
  return add(y, expand_axis(b, y.shape(), 1));
}

template <std::floating_point T>
Var<T> flip_transpose(const Var<T>& w) {
  return record<T>("flip_transpose", kernel::flip_transpose(w.value()), {w},
                   [](const BackwardCtx<T>& c) { return Grads<T>{flip_transpose(c.grad)}; });
}

template <std::floating_point T>
Var<T> conv2d_kernel_grad(const Var<T>& x, const Var<T>& gy);

/// 3x3 same-padded cross-correlation without bias.
template <std::floating_point T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w) {
  return record<T>("conv2d", kernel::conv2d(x.value(), w.value()), {x, w},
                   [](const BackwardCtx<T>& c) {
                     Grads<T> g(2);
                     if (c.need[0]) g[0] = conv2d(c.grad, flip_transpose(c.inputs[1]));
                     if (c.need[1]) g[1] = conv2d_kernel_grad(c.inputs[0], c.grad);
                     return g;
                   });
}

template <std::floating_point T>
Var<T> conv2d_kernel_grad(const Var<T>& x, const Var<T>& gy) {
  return record<T>("conv2d_kernel_grad", kernel::conv2d_kernel_grad(x.value(), gy.value()),
                   {x, gy}, [](const BackwardCtx<T>& c) {
                     Grads<T> g(2);
                     if (c.need[0]) g[0] = conv2d(c.inputs[1], flip_transpose(c.grad));
                     if (c.need[1]) g[1] = conv2d(c.inputs[0], c.grad);
                     return g;
                   });
}

/// conv2d plus a per-filter bias.
template <std::floating_point T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  auto y = conv2d(x, w);
  return add(y, expand_axis(b, y.shape(), 1));
}

inline constexpr double kBatchNormEps = 1e-5;

/// Per-feature (axis 1) normalization with statistics of this batch only.
template <std::floating_point T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  T eps = static_cast<T>(kBatchNormEps)) {
  if (x.shape().size() < 2) throw DimensionError("batch_norm needs rank >= 2");
  const Shape& s = x.shape();
  const T count = static_cast<T>(x.numel() / s[1]);
  auto mu = scale(reduce_to_axis(x, 1), T{1} / count);
  auto centered = sub(x, expand_axis(mu, s, 1));
  auto var = scale(reduce_to_axis(mul(centered, centered), 1), T{1} / count);
  auto inv_std = pow(add_scalar(var, eps), T{-0.5});
  auto normalized = mul(centered, expand_axis(inv_std, s, 1));
  return add(mul(normalized, expand_axis(gamma, s, 1)), expand_axis(beta, s, 1));
}

/// 2x2 max pooling, stride 2; odd extents are floored.
template <std::floating_point T>
Var<T> max_pool2x2(const Var<T>& x) {
  auto idx = std::make_shared<const kernel::Index>(kernel::max_pool2x2_argmax(x.value()));
  const Shape& s = x.shape();
  return gather(x, std::move(idx), Shape{s[0], s[1], s[2] / 2, s[3] / 2});
}

template <std::floating_point T>
Var<T> logsumexp_rows(const Var<T>& z) {
  return record<T>("logsumexp_rows", kernel::logsumexp_rows(z.value()), {z},
                   [](const BackwardCtx<T>& c) {
                     const Shape& s = c.inputs[0].shape();
                     auto softmax = exp(sub(c.inputs[0], expand_axis(c.out, s, 0)));
                     return Grads<T>{mul(expand_axis(c.grad, s, 0), softmax)};
                   });
}

/// Mean negative log-likelihood of `labels` under softmax(logits).
template <std::floating_point T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  if (logits.shape().size() != 2 || logits.shape()[0] != labels.size()) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t B = logits.shape()[0], N = logits.shape()[1];
  auto idx = std::make_shared<kernel::Index>(B);
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= N) {
      throw LabelError("label " + std::to_string(labels[b]) + " outside [0," +
                       std::to_string(N) + ")");
    }
    (*idx)[b] = b * N + static_cast<std::size_t>(labels[b]);
  }
  auto picked = gather(logits, std::shared_ptr<const kernel::Index>(std::move(idx)), Shape{B});
  return mean(sub(logsumexp_rows(logits), picked));
}

// Operator sugar for scalar algebra in tests and tiny models.
template <std::floating_point T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <std::floating_point T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <std::floating_point T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }

}  // namespace adml

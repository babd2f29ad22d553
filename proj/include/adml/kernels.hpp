#pragma once

// Plain tensor kernels. No graph recording happens here; the differentiable
// wrappers in ops.hpp call these for their forward values.

#include <cmath>
#include <limits>
#include <memory>

#include "adml/tensor.hpp"

namespace adml::kernel {

using Index = std::vector<std::size_t>;

template <std::floating_point T, class F>
Tensor<T> map(const Tensor<T>& a, F f) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i]);
  return out;
}

template <std::floating_point T, class F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, F f, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    T* row = &out[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = &b[p * n];
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return out;
}

template <std::floating_point T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw DimensionError("transpose needs rank 2, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor<T> out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

/// 3x3 cross-correlation, stride 1, one pixel of zero padding on each side.
template <std::floating_point T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w) {
  if (x.rank() != 4 || w.rank() != 4 || w.dim(2) != 3 || w.dim(3) != 3) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + ", kernel " +
                         shape_str(w.shape()));
  }
  if (x.dim(1) != w.dim(1)) {
    throw DimensionError("conv2d: input has " + std::to_string(x.dim(1)) +
                         " channels, kernel expects " + std::to_string(w.dim(1)));
  }
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), F = w.dim(0);
  Tensor<T> out({B, F, H, W});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f) {
      T* o = &out[((b * F) + f) * H * W];
      for (std::size_t c = 0; c < C; ++c) {
        const T* in = &x[((b * C) + c) * H * W];
        const T* k = &w[((f * C) + c) * 9];
        for (std::size_t i = 0; i < 3; ++i)
          for (std::size_t j = 0; j < 3; ++j) {
            const T kv = k[i * 3 + j];
            const std::size_t h0 = i == 0 ? 1 : 0, h1 = i == 2 ? H - 1 : H;
            const std::size_t w0 = j == 0 ? 1 : 0, w1 = j == 2 ? W - 1 : W;
            for (std::size_t h = h0; h < h1; ++h) {
              const T* src = in + (h + i - 1) * W + (j - 1);
              T* dst = o + h * W;
              for (std::size_t ww = w0; ww < w1; ++ww) dst[ww] += kv * src[ww];
            }
          }
      }
    }
  return out;
}

/// Gradient of conv2d w.r.t. its kernel: out[f,c,i,j] = sum x[b,c,h+i-1,w+j-1] * gy[b,f,h,w].
template <std::floating_point T>
Tensor<T> conv2d_kernel_grad(const Tensor<T>& x, const Tensor<T>& gy) {
  if (x.rank() != 4 || gy.rank() != 4 || x.dim(0) != gy.dim(0) || x.dim(2) != gy.dim(2) ||
      x.dim(3) != gy.dim(3)) {
    throw DimensionError("conv2d_kernel_grad: " + shape_str(x.shape()) + " vs " +
                         shape_str(gy.shape()));
  }
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), F = gy.dim(1);
  Tensor<T> out({F, C, 3, 3});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f) {
      const T* g = &gy[((b * F) + f) * H * W];
      for (std::size_t c = 0; c < C; ++c) {
        const T* in = &x[((b * C) + c) * H * W];
        T* k = &out[((f * C) + c) * 9];
        for (std::size_t i = 0; i < 3; ++i)
          for (std::size_t j = 0; j < 3; ++j) {
            const std::size_t h0 = i == 0 ? 1 : 0, h1 = i == 2 ? H - 1 : H;
            const std::size_t w0 = j == 0 ? 1 : 0, w1 = j == 2 ? W - 1 : W;
            T acc = 0;
            for (std::size_t h = h0; h < h1; ++h) {
              const T* src = in + (h + i - 1) * W + (j - 1);
              const T* gr = g + h * W;
              for (std::size_t ww = w0; ww < w1; ++ww) acc += src[ww] * gr[ww];
            }
            k[i * 3 + j] += acc;
          }
      }
    }
  return out;
}

/// [F,C,3,3] -> [C,F,3,3] with both spatial axes reversed. An involution.
template <std::floating_point T>
Tensor<T> flip_transpose(const Tensor<T>& w) {
  if (w.rank() != 4 || w.dim(2) != 3 || w.dim(3) != 3) {
    throw DimensionError("flip_transpose: " + shape_str(w.shape()));
  }
  const std::size_t F = w.dim(0), C = w.dim(1);
  Tensor<T> out({C, F, 3, 3});
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
          out[((c * F + f) * 3 + (2 - i)) * 3 + (2 - j)] = w[((f * C + c) * 3 + i) * 3 + j];
  return out;
}

/// Stride of `axis` and the extent of all axes after it.
inline std::pair<std::size_t, std::size_t> axis_layout(const Shape& shape, std::size_t axis) {
  std::size_t inner = 1;
  for (std::size_t a = axis + 1; a < shape.size(); ++a) inner *= shape[a];
  return {shape.at(axis), inner};
}

/// Replicate a vector of length shape[axis] along every other axis of `shape`.
template <std::floating_point T>
Tensor<T> expand_axis(const Tensor<T>& v, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size() || v.numel() != shape[axis]) {
    throw DimensionError("expand_axis: vector of " + std::to_string(v.numel()) +
                         " onto axis " + std::to_string(axis) + " of " + shape_str(shape));
  }
  Tensor<T> out(shape);
  const auto [n, inner] = axis_layout(shape, axis);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = v[(i / inner) % n];
  return out;
}

/// Sum over every axis except `axis`; the adjoint of expand_axis.
template <std::floating_point T>
Tensor<T> reduce_to_axis(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("reduce_to_axis: axis " + std::to_string(axis) + " of " +
                         shape_str(x.shape()));
  }
  const auto [n, inner] = axis_layout(x.shape(), axis);
  Tensor<T> out({n});
  for (std::size_t i = 0; i < x.numel(); ++i) out[(i / inner) % n] += x[i];
  return out;
}

template <std::floating_point T>
T sum(const Tensor<T>& x) {
  T s = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) s += x[i];
  return s;
}

/// Flat source indices of each 2x2 window maximum (stride 2, odd extents floored).
/// Ties resolve to the first maximum in row-major window order.
template <std::floating_point T>
Index max_pool2x2_argmax(const Tensor<T>& x) {
  if (x.rank() != 4 || x.dim(2) < 2 || x.dim(3) < 2) {
    throw DimensionError("max_pool2x2 needs [B,C,H>=2,W>=2], got " + shape_str(x.shape()));
  }
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = H / 2, Wo = W / 2;
  Index idx(B * C * Ho * Wo);
  std::size_t o = 0;
  for (std::size_t bc = 0; bc < B * C; ++bc)
    for (std::size_t h = 0; h < Ho; ++h)
      for (std::size_t w = 0; w < Wo; ++w, ++o) {
        std::size_t best = bc * H * W + (2 * h) * W + 2 * w;
        for (std::size_t dh = 0; dh < 2; ++dh)
          for (std::size_t dw = 0; dw < 2; ++dw) {
            const std::size_t s = bc * H * W + (2 * h + dh) * W + (2 * w + dw);
            if (x[s] > x[best]) best = s;
          }
        idx[o] = best;
      }
  return idx;
}

template <std::floating_point T>
Tensor<T> gather(const Tensor<T>& x, const Index& idx, const Shape& out_shape) {
  Tensor<T> out(out_shape);
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = x[idx[i]];
  return out;
}

/// Adjoint of gather: accumulate g[i] into out[idx[i]].
template <std::floating_point T>
Tensor<T> scatter_add(const Tensor<T>& g, const Index& idx, const Shape& out_shape) {
  Tensor<T> out(out_shape);
  for (std::size_t i = 0; i < idx.size(); ++i) out[idx[i]] += g[i];
  return out;
}

/// Row-wise log-sum-exp of a [B,N] matrix, shifted by the row maximum.
template <std::floating_point T>
Tensor<T> logsumexp_rows(const Tensor<T>& z) {
  if (z.rank() != 2) throw DimensionError("logsumexp_rows needs rank 2, got " + shape_str(z.shape()));
  const std::size_t B = z.dim(0), N = z.dim(1);
  Tensor<T> out({B});
  for (std::size_t b = 0; b < B; ++b) {
    const T* row = &z[b * N];
    const T m = *std::max_element(row, row + N);
    T s = 0;
    for (std::size_t j = 0; j < N; ++j) s += std::exp(row[j] - m);
    out[b] = m + std::log(s);
  }
  return out;
}

}  // namespace adml::kernel

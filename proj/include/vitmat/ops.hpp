#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <string_view>

#include "vitmat/tensor.hpp"

// Forward/backward pairs for every numeric op the model uses. Backward
// functions take the forward inputs (or the cached forward output) and the
// upstream gradient, and return gradients with the input shapes.
namespace vitmat::ops {

template <typename T>
void check_finite(std::string_view op, const Tensor<T>& t) {
  for (const T v : t.data()) {
    if (!std::isfinite(v)) throw NumericError("non-finite value produced by " + std::string(op));
  }
}

namespace detail {

// C = op(A) * op(B), op = identity or transpose, for 2-D tensors.
template <typename T>
Tensor<T> gemm(const Tensor<T>& a, bool trans_a, const Tensor<T>& b, bool trans_b, std::string_view op) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError(std::string(op) + ": expected 2-D operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const std::size_t m = trans_a ? a.cols() : a.rows();
  const std::size_t k = trans_a ? a.rows() : a.cols();
  const std::size_t kb = trans_b ? b.cols() : b.rows();
  const std::size_t n = trans_b ? b.rows() : b.cols();
  if (k != kb)
    throw DimensionError(std::string(op) + ": inner dimensions differ for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  Tensor<T> c({m, n});
  const std::size_t lda = a.cols();
  const std::size_t ldb = b.cols();
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = c.data().data();
  if (!trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = pc + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const T aip = trans_a ? pa[p * lda + i] : pa[i * lda + p];
        if (aip == T(0)) continue;
        const T* brow = pb + p * ldb;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const T* brow = pb + j * ldb;
        T acc = T(0);
        if (trans_a) {
          for (std::size_t p = 0; p < k; ++p) acc += pa[p * lda + i] * brow[p];
        } else {
          const T* arow = pa + i * lda;
          for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        }
        pc[i * n + j] = acc;
      }
    }
  }
  return c;
}

// Splits shape around `axis` into (outer, axis length, inner).
inline void axis_split(const Shape& shape, std::size_t axis, std::size_t& outer, std::size_t& len,
                       std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
}

// Broadcast rule: b's shape must equal a's shape or a trailing suffix of it;
// b is then repeated over a's leading axes.
inline std::size_t broadcast_period(const Shape& a, const Shape& b, std::string_view op) {
  bool ok = b.size() <= a.size();
  for (std::size_t i = 0; ok && i < b.size(); ++i) ok = b[b.size() - 1 - i] == a[a.size() - 1 - i];
  if (!ok)
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b) + " onto " + shape_str(a));
  return shape_numel(b);
}

}  // namespace detail

template <typename T>
struct MatmulGrads {
  Tensor<T> da;
  Tensor<T> db;
};

/// c[i,j] = sum_k a[i,k] b[k,j].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  auto c = detail::gemm(a, false, b, false, "matmul");
  check_finite("matmul", c);
  return c;
}

/// a * b^T without materializing the transpose.
template <typename T>
Tensor<T> matmul_bt(const Tensor<T>& a, const Tensor<T>& b) {
  auto c = detail::gemm(a, false, b, true, "matmul_bt");
  check_finite("matmul_bt", c);
  return c;
}

/// a^T * b.
template <typename T>
Tensor<T> matmul_at(const Tensor<T>& a, const Tensor<T>& b) {
  auto c = detail::gemm(a, true, b, false, "matmul_at");
  check_finite("matmul_at", c);
  return c;
}

template <typename T>
MatmulGrads<T> matmul_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& dc) {
  return {matmul_bt(dc, b), matmul_at(a, dc)};
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw DimensionError("transpose: expected 2-D tensor, got " + shape_str(a.shape()));
  Tensor<T> t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

/// Max-subtracted softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank())
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for shape " + shape_str(x.shape()));
  std::size_t outer, len, inner;
  detail::axis_split(x.shape(), axis, outer, len, inner);
  Tensor<T> y(x.shape());
  const T* px = x.data().data();
  T* py = y.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = px[base];
      for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, px[base + i * inner]);
      T total = T(0);
      for (std::size_t i = 0; i < len; ++i) {
        const T e = std::exp(px[base + i * inner] - mx);
        py[base + i * inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < len; ++i) py[base + i * inner] /= total;
    }
  }
  check_finite("softmax", y);
  return y;
}

/// dx = y * (dy - sum(dy * y)) per slice, from the forward output y.
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& y, const Tensor<T>& dy, std::size_t axis) {
  if (y.shape() != dy.shape())
    throw DimensionError("softmax_backward: " + shape_str(y.shape()) + " vs " + shape_str(dy.shape()));
  if (axis >= y.rank()) throw DimensionError("softmax_backward: invalid axis");
  std::size_t outer, len, inner;
  detail::axis_split(y.shape(), axis, outer, len, inner);
  Tensor<T> dx(y.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T dot = T(0);
      for (std::size_t i = 0; i < len; ++i) dot += y[base + i * inner] * dy[base + i * inner];
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t idx = base + i * inner;
        dx[idx] = y[idx] * (dy[idx] - dot);
      }
    }
  }
  return dx;
}

inline constexpr double kLayerNormEps = 1e-6;

template <typename T>
struct LayerNormOutput {
  Tensor<T> out;
  Tensor<T> normalized;  // pre-affine values
  std::vector<T> inv_std;  // one per normalized vector
};

template <typename T>
struct LayerNormGrads {
  Tensor<T> dx;
  Tensor<T> dgamma;
  Tensor<T> dbeta;
};

/// Normalizes over the last axis: (x - mean) / sqrt(var + eps), then gamma * . + beta.
template <typename T>
LayerNormOutput<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                              double eps = kLayerNormEps) {
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d)
    throw DimensionError("layer_norm: last dimension " + std::to_string(d) + " vs gamma " +
                         shape_str(gamma.shape()) + ", beta " + shape_str(beta.shape()));
  const std::size_t vectors = x.numel() / d;
  LayerNormOutput<T> r{Tensor<T>(x.shape()), Tensor<T>(x.shape()), std::vector<T>(vectors)};
  for (std::size_t v = 0; v < vectors; ++v) {
    const T* px = x.data().data() + v * d;
    T mean = T(0);
    for (std::size_t i = 0; i < d; ++i) mean += px[i];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t i = 0; i < d; ++i) var += (px[i] - mean) * (px[i] - mean);
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
    r.inv_std[v] = inv;
    for (std::size_t i = 0; i < d; ++i) {
      const T n = (px[i] - mean) * inv;
      r.normalized[v * d + i] = n;
      r.out[v * d + i] = n * gamma[i] + beta[i];
    }
  }
  check_finite("layer_norm", r.out);
  return r;
}

template <typename T>
LayerNormGrads<T> layer_norm_backward(const LayerNormOutput<T>& fwd, const Tensor<T>& gamma, const Tensor<T>& dy) {
  const std::size_t d = dy.shape().back();
  const std::size_t vectors = dy.numel() / d;
  LayerNormGrads<T> g{Tensor<T>(dy.shape()), Tensor<T>(gamma.shape()), Tensor<T>(gamma.shape())};
  std::vector<T> dn(d);
  for (std::size_t v = 0; v < vectors; ++v) {
    const T* n = fwd.normalized.data().data() + v * d;
    const T* pdy = dy.data().data() + v * d;
    T sum_dn = T(0), sum_dn_n = T(0);
    for (std::size_t i = 0; i < d; ++i) {
      g.dgamma[i] += pdy[i] * n[i];
      g.dbeta[i] += pdy[i];
      dn[i] = pdy[i] * gamma[i];
      sum_dn += dn[i];
      sum_dn_n += dn[i] * n[i];
    }
    const T inv = fwd.inv_std[v];
    const T scale = inv / static_cast<T>(d);
    for (std::size_t i = 0; i < d; ++i)
      g.dx[v * d + i] = scale * (static_cast<T>(d) * dn[i] - sum_dn - n[i] * sum_dn_n);
  }
  return g;
}

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
inline constexpr double kGeluSqrt2OverPi = 0.7978845608028654;
inline constexpr double kGeluCubic = 0.044715;

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  const T c = static_cast<T>(kGeluSqrt2OverPi), a = static_cast<T>(kGeluCubic);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const T v = x[i];
    y[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v)));
  }
  check_finite("gelu", y);
  return y;
}

template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  Tensor<T> dx(x.shape());
  const T c = static_cast<T>(kGeluSqrt2OverPi), a = static_cast<T>(kGeluCubic);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const T v = x[i];
    const T t = std::tanh(c * (v + a * v * v * v));
    const T dinner = c * (T(1) + T(3) * a * v * v);
    dx[i] = dy[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * dinner);
  }
  return dx;
}

enum class Elementwise { add, mul };

template <typename T>
struct BinaryGrads {
  Tensor<T> da;
  Tensor<T> db;
};

/// a (op) b where b is broadcast over a's leading axes (see detail::broadcast_period).
template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, Elementwise kind) {
  const std::size_t period = detail::broadcast_period(a.shape(), b.shape(), "elementwise");
  Tensor<T> c(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i)
    c[i] = kind == Elementwise::add ? a[i] + b[i % period] : a[i] * b[i % period];
  check_finite(kind == Elementwise::add ? "add" : "mul", c);
  return c;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(a, b, Elementwise::add);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(a, b, Elementwise::mul);
}

/// Gradients of elementwise(a, b, kind); db sums over the broadcast axes.
template <typename T>
BinaryGrads<T> elementwise_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& dc, Elementwise kind) {
  const std::size_t period = detail::broadcast_period(a.shape(), b.shape(), "elementwise_backward");
  BinaryGrads<T> g{Tensor<T>(a.shape()), Tensor<T>(b.shape())};
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (kind == Elementwise::add) {
      g.da[i] = dc[i];
      g.db[i % period] += dc[i];
    } else {
      g.da[i] = dc[i] * b[i % period];
      g.db[i % period] += dc[i] * a[i];
    }
  }
  return g;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> c(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) c[i] = a[i] * s;
  check_finite("scale", c);
  return c;
}

/// In-place accumulation, shapes must match exactly.
template <typename T>
void accumulate(Tensor<T>& into, const Tensor<T>& g) {
  if (into.shape() != g.shape())
    throw DimensionError("accumulate: " + shape_str(into.shape()) + " vs " + shape_str(g.shape()));
  for (std::size_t i = 0; i < g.numel(); ++i) into[i] += g[i];
}

template <typename T>
T sum(const Tensor<T>& x) {
  T s = T(0);
  for (const T v : x.data()) s += v;
  return s;
}

/// x * w + b for x: [rows x in], w: [in x out], b: [out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add(matmul(x, w), b);
}

template <typename T>
struct LinearGrads {
  Tensor<T> dx;
  Tensor<T> dw;
  Tensor<T> db;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy) {
  LinearGrads<T> g{matmul_bt(dy, w), matmul_at(x, dy), Tensor<T>({w.cols()})};
  for (std::size_t r = 0; r < dy.rows(); ++r)
    for (std::size_t c = 0; c < dy.cols(); ++c) g.db[c] += dy(r, c);
  return g;
}

/// Columns [start, start + width) of a 2-D tensor.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t start, std::size_t width) {
  if (a.rank() != 2 || start + width > a.cols())
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + width) +
                         ") out of range for " + shape_str(a.shape()));
  Tensor<T> s({a.rows(), width});
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < width; ++c) s(r, c) = a(r, start + c);
  return s;
}

/// dst[:, start:start+width] = src (the inverse of slice_cols).
template <typename T>
void assign_cols(Tensor<T>& dst, const Tensor<T>& src, std::size_t start) {
  if (dst.rank() != 2 || src.rank() != 2 || src.rows() != dst.rows() || start + src.cols() > dst.cols())
    throw DimensionError("assign_cols: " + shape_str(src.shape()) + " into " + shape_str(dst.shape()));
  for (std::size_t r = 0; r < src.rows(); ++r)
    for (std::size_t c = 0; c < src.cols(); ++c) dst(r, start + c) = src(r, c);
}

template <typename T>
std::size_t argmax(std::span<const T> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace vitmat::ops

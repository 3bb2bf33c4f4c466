#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "vitmat/ops.hpp"

namespace vitmat {

template <typename T>
struct CrossEntropyResult {
  T loss = T(0);
  Tensor<T> dlogits;  // (softmax - onehot) / B
};

/// Mean over the batch of -log softmax(logits)[label], via log-sum-exp.
/// logits: [B x K] (a rank-1 [K] tensor is treated as B = 1).
template <typename T>
CrossEntropyResult<T> cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> labels) {
  const Tensor<T> l = logits.rank() == 1 ? logits.reshaped({1, logits.numel()}) : logits;
  if (l.rank() != 2) throw DimensionError("cross_entropy: logits must be [B x K], got " + shape_str(logits.shape()));
  const std::size_t b = l.rows(), k = l.cols();
  if (labels.size() != b)
    throw InputError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(b));
  CrossEntropyResult<T> r{T(0), Tensor<T>(logits.shape())};
  const T inv_b = T(1) / static_cast<T>(b);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= k)
      throw InputError("cross_entropy: label " + std::to_string(labels[i]) + " out of range for " +
                       std::to_string(k) + " classes");
    T mx = l(i, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, l(i, j));
    T z = T(0);
    for (std::size_t j = 0; j < k; ++j) z += std::exp(l(i, j) - mx);
    const T lse = mx + std::log(z);
    r.loss += (lse - l(i, labels[i])) * inv_b;
    for (std::size_t j = 0; j < k; ++j) {
      const T p = std::exp(l(i, j) - lse);
      r.dlogits[i * k + j] = (p - (j == labels[i] ? T(1) : T(0))) * inv_b;
    }
  }
  if (!std::isfinite(r.loss)) throw NumericError("non-finite value produced by cross_entropy");
  return r;
}

}  // namespace vitmat

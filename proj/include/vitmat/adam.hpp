#pragma once

#include <cmath>
#include <cstdint>

#include "vitmat/vit.hpp"

namespace vitmat {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moments mirroring the parameter map, plus the step count.
template <typename T>
struct AdamState {
  ViTParams<T> m;
  ViTParams<T> v;
  std::uint64_t t = 0;
  AdamHyper hyper;

  static AdamState for_params(const ViTParams<T>& params, AdamHyper hyper = {}) {
    return AdamState{params.zeros_like(), params.zeros_like(), 0, hyper};
  }
};

/// t += 1; m = b1 m + (1-b1) g; v = b2 v + (1-b2) g^2;
/// theta -= lr * m_hat / (sqrt(v_hat) + eps) with bias-corrected moments.
template <typename T>
void adam_step(ViTParams<T>& params, const ViTParams<T>& grads, AdamState<T>& state, double lr) {
  if (params.arrays.size() != grads.arrays.size() || params.arrays.size() != state.m.arrays.size())
    throw DimensionError("adam_step: parameter, gradient and state maps differ in size");
  state.t += 1;
  const double b1 = state.hyper.beta1, b2 = state.hyper.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (auto& [name, theta] : params.arrays) {
    const auto& g = grads.at(name);
    auto& m = state.m.at(name);
    auto& v = state.v.at(name);
    if (g.shape() != theta.shape() || m.shape() != theta.shape() || v.shape() != theta.shape())
      throw DimensionError("adam_step: shape mismatch for '" + name + "': param " + shape_str(theta.shape()) +
                           ", grad " + shape_str(g.shape()));
    for (std::size_t i = 0; i < theta.numel(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / c1;
      const double vhat = vi / c2;
      theta[i] = static_cast<T>(theta[i] - lr * mhat / (std::sqrt(vhat) + state.hyper.eps));
    }
  }
}

}  // namespace vitmat

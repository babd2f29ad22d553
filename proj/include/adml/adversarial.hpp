#pragma once

#include "adml/batch.hpp"
#include "adml/models.hpp"

namespace adml {

/// FGSM settings. epsilon is in raw value units of value_range (pixels on
/// 0..255 for images). When samples are stored normalized to [0,1] the step
/// actually applied is epsilon / (hi - lo).
struct AttackConfig {
  double epsilon = 2.0;
  double lo = 0.0;
  double hi = 255.0;
  bool clip = true;
  bool normalized = false;

  void validate() const {
    if (!(epsilon >= 0)) throw ContractError("attack epsilon must be >= 0");
    if (!(lo < hi)) throw ContractError("attack value range needs lo < hi");
  }

  double step() const { return normalized ? epsilon / (hi - lo) : epsilon; }
  double clip_lo() const { return normalized ? 0.0 : lo; }
  double clip_hi() const { return normalized ? 1.0 : hi; }

  bool operator==(const AttackConfig&) const = default;
};

template <std::floating_point T>
T sign_of(T v) {
  return v > 0 ? T{1} : (v < 0 ? T{-1} : T{0});
}

/// x + step * sign(grad), optionally clamped; coordinates with zero gradient
/// are left as they are.
template <std::floating_point T>
Tensor<T> signed_step(const Tensor<T>& x, const Tensor<T>& g, const AttackConfig& cfg) {
  cfg.validate();
  const T step = static_cast<T>(cfg.step());
  if (step == 0) return x;
  Tensor<T> out = x;
  const T lo = static_cast<T>(cfg.clip_lo()), hi = static_cast<T>(cfg.clip_hi());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const T s = sign_of(g[i]);
    if (s == 0) continue;
    out[i] += step * s;
    if (cfg.clip) out[i] = std::clamp(out[i], lo, hi);
  }
  return out;
}

/// Gradient of the model's mean cross-entropy w.r.t. its input batch.
template <std::floating_point T>
Tensor<T> input_gradient(const ModelSpec& spec, const ParamSet<T>& params, const Batch<T>& b) {
  auto x = Var<T>::leaf(b.x);
  auto loss = cross_entropy(forward(spec, VarParams<T>::leaves(params, false), x),
                            std::span<const int>(b.y));
  return grad(loss, {x})[0].value();
}

/// Fast Gradient Sign Method against the true labels. Labels are carried over.
template <std::floating_point T>
Batch<T> fgsm(const ModelSpec& spec, const ParamSet<T>& params, const Batch<T>& b,
              const AttackConfig& cfg) {
  cfg.validate();
  if (cfg.step() == 0) return b;
  return Batch<T>{signed_step(b.x, input_gradient(spec, params, b), cfg), b.y};
}

}  // namespace adml

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "trlhpo/core/tensor.hpp"

namespace trlhpo::core {

struct AdamConfig {
  Real lr = 1e-3;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<std::vector<Real>> m;
  std::vector<std::vector<Real>> v;
  std::int64_t t = 0;

  AdamState() = default;
  AdamState(AdamConfig cfg, std::span<const Tensor> params) : config(cfg) {
    for (const auto& p : params) {
      m.emplace_back(p.numel(), 0.0);
      v.emplace_back(p.numel(), 0.0);
    }
  }
};

/// One bias-corrected Adam update, in place on `params`.
inline void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params, " +
                     std::to_string(grads.size()) + " grads, " + std::to_string(state.m.size()) +
                     " moment slots");
  }
  ++state.t;
  const auto& c = state.config;
  const Real bc1 = 1.0 - std::pow(c.beta1, static_cast<Real>(state.t));
  const Real bc2 = 1.0 - std::pow(c.beta2, static_cast<Real>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].mutable_data();
    const auto g = grads[k].data();
    if (g.size() != p.size() || state.m[k].size() != p.size()) {
      throw ShapeError("adam_step: parameter " + std::to_string(k) + " shape " +
                       shape_str(params[k].shape()) + " vs grad " + shape_str(grads[k].shape()));
    }
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const Real mhat = m[i] / bc1;
      const Real vhat = v[i] / bc2;
      p[i] -= c.lr * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

}  // namespace trlhpo::core

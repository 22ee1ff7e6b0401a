#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "trlhpo/core/tensor.hpp"

namespace trlhpo::core {

/// Central-difference gradient of a scalar function at x.
///
/// `f` must not record onto a tape the caller later differentiates; it is
/// evaluated 2 * numel(x) times on perturbed copies of x.
inline Tensor finite_diff_grad(const std::function<Real(const Tensor&)>& f, const Tensor& x, Real eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: eps must be positive");
  std::vector<Real> g(x.numel());
  Tensor probe = x.clone();
  auto values = probe.mutable_data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Real orig = values[i];
    values[i] = orig + eps;
    const Real up = f(probe);
    values[i] = orig - eps;
    const Real down = f(probe);
    values[i] = orig;
    g[i] = (up - down) / (2.0 * eps);
  }
  return Tensor(x.shape(), std::move(g));
}

/// Relative agreement test used by gradient checks: |a - b| <= rel * max(|a|, |b|),
/// with an absolute floor for entries that are numerically zero.
inline bool grad_close(Real analytic, Real numeric, Real rel = 1e-4, Real abs_floor = 1e-8) {
  const Real diff = std::abs(analytic - numeric);
  return diff <= abs_floor || diff <= rel * std::max(std::abs(analytic), std::abs(numeric));
}

}  // namespace trlhpo::core

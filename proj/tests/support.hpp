#pragma once

// Shared helpers for the unit suites and the acceptance binary: a
// finite-difference harness and brute-force oracles written independently
// of the library code they check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "trlhpo/core/gradcheck.hpp"
#include "trlhpo/core/ops.hpp"
#include "trlhpo/core/random.hpp"
#include "trlhpo/search_space.hpp"

namespace trlhpo::testkit {

using core::Real;
using core::Tensor;

struct GradReport {
  std::size_t checked = 0;
  std::size_t mismatched = 0;
  double worst_rel = 0.0;
  std::string first_mismatch;
};

inline Tensor random_tensor(core::Shape shape, core::Rng& rng, double stddev = 1.0) {
  return core::normal_tensor(std::move(shape), rng, stddev);
}

/// Compares reverse-mode gradients of sum(f(inputs) * w), for a random
/// projection w, against central differences for every input element.
inline GradReport check_gradients(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                  const std::vector<Tensor>& inputs, core::Rng& rng, double eps = 1e-6,
                                  double rel = 1e-4, double abs_floor = 1e-7) {
  const Tensor probe_out = f(inputs);
  const Tensor w = random_tensor(probe_out.shape(), rng);
  auto value = [&](const std::vector<Tensor>& xs) {
    const Tensor y = f(xs);
    double s = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * w[i];
    return s;
  };

  std::vector<Tensor> tracked;
  for (const auto& x : inputs) tracked.push_back(x.clone(true));
  std::vector<Tensor> analytic;
  {
    core::GradTape tape;
    core::TapeScope scope(tape);
    const Tensor loss = core::ops::sum(core::ops::mul(f(tracked), w));
    analytic = tape.backward(loss, tracked);
  }

  GradReport rep;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor numeric = core::finite_diff_grad(
        [&](const Tensor& xk) {
          auto xs = inputs;
          xs[k] = xk;
          return value(xs);
        },
        inputs[k], eps);
    for (std::size_t i = 0; i < numeric.numel(); ++i) {
      const double a = analytic[k][i], n = numeric[i];
      ++rep.checked;
      const double scale = std::max(std::abs(a), std::abs(n));
      if (std::abs(a - n) > abs_floor && scale > 0.0) rep.worst_rel = std::max(rep.worst_rel, std::abs(a - n) / scale);
      if (!core::grad_close(a, n, rel, abs_floor)) {
        if (rep.mismatched == 0) {
          rep.first_mismatch = "input " + std::to_string(k) + "[" + std::to_string(i) + "]: analytic " +
                               std::to_string(a) + " vs numeric " + std::to_string(n);
        }
        ++rep.mismatched;
      }
    }
  }
  return rep;
}

/// Same comparison for parameters held inside a model: `f` reads them
/// through shared handles, so perturbing `params` in place moves `f`.
/// Checks `per_case` randomly chosen coordinates (all when 0).
inline GradReport check_param_gradients(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                                        core::Rng& rng, std::size_t per_case = 0, double eps = 1e-6,
                                        double rel = 1e-4, double abs_floor = 1e-7) {
  const Tensor w = random_tensor(f().shape(), rng);
  auto value = [&] {
    const Tensor y = f();
    double s = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * w[i];
    return s;
  };
  std::vector<Tensor> analytic;
  {
    core::GradTape tape;
    core::TapeScope scope(tape);
    analytic = tape.backward(core::ops::sum(core::ops::mul(f(), w)), params);
  }
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i = 0; i < params[k].numel(); ++i) coords.emplace_back(k, i);
  if (per_case > 0 && per_case < coords.size()) {
    for (std::size_t i = 0; i < per_case; ++i) std::swap(coords[i], coords[i + rng() % (coords.size() - i)]);
    coords.resize(per_case);
  }
  GradReport rep;
  for (const auto& [k, i] : coords) {
    Tensor p = params[k];
    const double orig = p[i];
    p.mutable_data()[i] = orig + eps;
    const double up = value();
    p.mutable_data()[i] = orig - eps;
    const double down = value();
    p.mutable_data()[i] = orig;
    const double a = analytic[k][i], n = (up - down) / (2 * eps);
    ++rep.checked;
    const double scale = std::max(std::abs(a), std::abs(n));
    if (std::abs(a - n) > abs_floor && scale > 0.0) rep.worst_rel = std::max(rep.worst_rel, std::abs(a - n) / scale);
    if (!core::grad_close(a, n, rel, abs_floor)) {
      if (rep.mismatched == 0) {
        rep.first_mismatch = "param " + std::to_string(k) + "[" + std::to_string(i) + "]: analytic " +
                             std::to_string(a) + " vs numeric " + std::to_string(n);
      }
      ++rep.mismatched;
    }
  }
  return rep;
}

/// Random integer in [lo, hi].
inline std::size_t pick(core::Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

/// Values bounded away from the kinks of piecewise-linear ops.
inline Tensor away_from_zero(core::Shape shape, core::Rng& rng) {
  Tensor t = random_tensor(std::move(shape), rng);
  for (auto& v : t.mutable_data()) {
    if (std::abs(v) < 0.05) v = v < 0 ? -0.05 - std::abs(v) : 0.05 + v;
  }
  return t;
}

// ---------------------------------------------------------------------------
// Forward oracles
// ---------------------------------------------------------------------------

/// Valid cross-correlation by direct summation.
inline std::vector<double> conv2d_oracle(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t s) {
  const auto N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto F = w.dim(0), K = w.dim(2);
  const auto Ho = (H - K) / s + 1, Wo = (W - K) / s + 1;
  std::vector<double> y(N * F * Ho * Wo, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          double acc = b.defined() ? b[f] : 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t u = 0; u < K; ++u)
              for (std::size_t v = 0; v < K; ++v)
                acc += x[((n * C + c) * H + i * s + u) * W + j * s + v] * w[((f * C + c) * K + u) * K + v];
          y[((n * F + f) * Ho + i) * Wo + j] = acc;
        }
  return y;
}

/// Max over each window of real (unpadded) cells.
inline std::vector<double> maxpool_oracle(const Tensor& x, std::size_t k, std::size_t s, std::size_t p) {
  const auto N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto Ho = (H + 2 * p - k) / s + 1, Wo = (W + 2 * p - k) / s + 1;
  std::vector<double> y;
  for (std::size_t nc = 0; nc < N * C; ++nc)
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Wo; ++j) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t u = 0; u < k; ++u)
          for (std::size_t v = 0; v < k; ++v) {
            const long r = static_cast<long>(i * s + u) - static_cast<long>(p);
            const long c = static_cast<long>(j * s + v) - static_cast<long>(p);
            if (r >= 0 && c >= 0 && r < static_cast<long>(H) && c < static_cast<long>(W)) {
              best = std::max(best, x[nc * H * W + static_cast<std::size_t>(r) * W + static_cast<std::size_t>(c)]);
            }
          }
        y.push_back(best);
      }
  return y;
}

/// Output extent by enumerating window start positions that fit.
inline long windows_along(long extent, long kernel, long stride, long padding) {
  long count = 0;
  for (long start = -padding; start + kernel <= extent + padding; start += stride) ++count;
  return count;
}

/// Shape a layer produces, derived by window enumeration rather than the closed form.
inline std::optional<FeatureShape> shape_oracle(const FeatureShape& in, const LayerSpec& layer) {
  if (const auto* d = std::get_if<DenseLayer>(&layer)) return FeatureShape::vector(d->neurons);
  if (in.flat) return std::nullopt;
  long k = 0, s = 0, p = 0;
  int channels = in.channels;
  if (const auto* c = std::get_if<ConvLayer>(&layer)) {
    k = c->kernel;
    s = c->stride;
    channels = c->filters;
  } else {
    const auto& pl = std::get<PoolLayer>(layer);
    k = pl.kernel;
    s = pl.stride;
    p = pl.padding;
  }
  const long h = windows_along(static_cast<long>(in.height), k, s, p);
  const long w = windows_along(static_cast<long>(in.width), k, s, p);
  if (h <= 0 || w <= 0) return std::nullopt;
  return FeatureShape::grid(channels, static_cast<int>(h), static_cast<int>(w));
}

}  // namespace trlhpo::testkit

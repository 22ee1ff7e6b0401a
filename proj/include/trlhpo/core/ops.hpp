#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "trlhpo/core/tensor.hpp"

/// Differentiable primitives. Every op computes its forward value eagerly and,
/// when a tape is active and some input requires grad, records a backward rule.
namespace trlhpo::core::ops {

namespace detail {

inline bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (active_tape() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

inline bool tracking(std::span<const Tensor> inputs) {
  if (active_tape() == nullptr) return false;
  for (const auto& t : inputs) {
    if (t.requires_grad()) return true;
  }
  return false;
}

[[noreturn]] inline void mismatch(std::string_view op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline void require_rank(std::string_view op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

template <class Forward, class Derivative>
Tensor unary(std::string_view op, const Tensor& x, Forward f, Derivative df) {
  std::vector<Real> y(x.numel());
  const auto xs = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xs[i]);
  const bool track = tracking({&x});
  Tensor out(x.shape(), std::move(y), track);
  if (track) {
    active_tape()->record(op, {x}, out, [x, out, df]() mutable {
      const auto& go = grad_buffer(out);
      auto& gx = grad_buffer(x);
      const auto xs = x.data();
      const auto ys = out.data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * df(xs[i], ys[i]);
    });
  }
  return out;
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) detail::mismatch("matmul", a.shape(), b.shape());
  std::vector<Real> c(m * n, 0.0);
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const Real aip = A[i * k + p];
      if (aip == 0.0) continue;
      const Real* brow = &B[p * n];
      Real* crow = &c[i * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  const bool track = detail::tracking({&a, &b});
  Tensor out({m, n}, std::move(c), track);
  if (track) {
    active_tape()->record("matmul", {a, b}, out, [a, b, out, m, k, n]() mutable {
      const auto& G = grad_buffer(out);
      const auto A = a.data();
      const auto B = b.data();
      if (a.requires_grad()) {
        auto& GA = grad_buffer(a);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            Real s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * B[p * n + j];
            GA[i * k + p] += s;
          }
        }
      }
      if (b.requires_grad()) {
        auto& GB = grad_buffer(b);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const Real aip = A[i * k + p];
            if (aip == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) GB[p * n + j] += aip * G[i * n + j];
          }
        }
      }
    });
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) detail::mismatch("add", a.shape(), b.shape());
  std::vector<Real> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
  const bool track = detail::tracking({&a, &b});
  Tensor out(a.shape(), std::move(y), track);
  if (track) {
    active_tape()->record("add", {a, b}, out, [a, b, out]() mutable {
      const auto& g = grad_buffer(out);
      if (a.requires_grad()) {
        auto& ga = grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = grad_buffer(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) detail::mismatch("sub", a.shape(), b.shape());
  std::vector<Real> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] - b[i];
  const bool track = detail::tracking({&a, &b});
  Tensor out(a.shape(), std::move(y), track);
  if (track) {
    active_tape()->record("sub", {a, b}, out, [a, b, out]() mutable {
      const auto& g = grad_buffer(out);
      if (a.requires_grad()) {
        auto& ga = grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = grad_buffer(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) detail::mismatch("mul", a.shape(), b.shape());
  std::vector<Real> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * b[i];
  const bool track = detail::tracking({&a, &b});
  Tensor out(a.shape(), std::move(y), track);
  if (track) {
    active_tape()->record("mul", {a, b}, out, [a, b, out]() mutable {
      const auto& g = grad_buffer(out);
      if (a.requires_grad()) {
        auto& ga = grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      }
      if (b.requires_grad()) {
        auto& gb = grad_buffer(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& x, Real c) {
  return detail::unary("scale", x, [c](Real v) { return c * v; }, [c](Real, Real) { return c; });
}

/// x[rows, n] + bias[n], broadcast over rows.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  detail::require_rank("add_bias", x, 2);
  const std::size_t r = x.dim(0), n = x.dim(1);
  if (bias.numel() != n) detail::mismatch("add_bias", x.shape(), bias.shape());
  std::vector<Real> y(x.numel());
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = x[i * n + j] + bias[j];
  }
  const bool track = detail::tracking({&x, &bias});
  Tensor out(x.shape(), std::move(y), track);
  if (track) {
    active_tape()->record("add_bias", {x, bias}, out, [x, bias, out, r, n]() mutable {
      const auto& g = grad_buffer(out);
      if (x.requires_grad()) {
        auto& gx = grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto& gb = grad_buffer(bias);
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
      }
    });
  }
  return out;
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      "relu", x, [](Real v) { return v > 0.0 ? v : 0.0; },
      [](Real v, Real) { return v > 0.0 ? 1.0 : 0.0; });
}

inline constexpr Real kLeakySlope = 0.01;

inline Tensor leaky_relu(const Tensor& x) {
  return detail::unary(
      "leakyrelu", x, [](Real v) { return v > 0.0 ? v : kLeakySlope * v; },
      [](Real v, Real) { return v > 0.0 ? 1.0 : kLeakySlope; });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary(
      "tanh", x, [](Real v) { return std::tanh(v); }, [](Real, Real y) { return 1.0 - y * y; });
}

inline Real sigmoid_scalar(Real v) {
  return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      "sigmoid", x, [](Real v) { return sigmoid_scalar(v); },
      [](Real, Real y) { return y * (1.0 - y); });
}

inline Tensor elu(const Tensor& x) {
  return detail::unary(
      "elu", x, [](Real v) { return v > 0.0 ? v : std::expm1(v); },
      [](Real v, Real) { return v > 0.0 ? 1.0 : std::exp(v); });
}

/// Exact (erf-based) GELU.
inline Tensor gelu(const Tensor& x) {
  return detail::unary(
      "gelu", x, [](Real v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); },
      [](Real v, Real) {
        const Real cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
        const Real pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}

/// Row-wise softmax over the last axis of a rank-1 or rank-2 tensor.
///
/// With `causal`, entry (i, j) for j > i is excluded and receives exactly zero
/// weight.
inline Tensor softmax(const Tensor& x, bool causal = false) {
  if (x.rank() > 2) throw ShapeError("softmax: expected rank <= 2, got " + shape_str(x.shape()));
  const std::size_t r = x.rank() == 2 ? x.dim(0) : 1;
  const std::size_t c = x.rank() == 2 ? x.dim(1) : x.dim(0);
  if (causal && r > c) throw ShapeError("softmax: causal mask needs rows <= cols, got " + shape_str(x.shape()));
  std::vector<Real> y(x.numel(), 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t visible = causal ? i + 1 : c;
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < visible; ++j) mx = std::max(mx, x[i * c + j]);
    Real z = 0.0;
    for (std::size_t j = 0; j < visible; ++j) {
      y[i * c + j] = std::exp(x[i * c + j] - mx);
      z += y[i * c + j];
    }
    for (std::size_t j = 0; j < visible; ++j) y[i * c + j] /= z;
  }
  const bool track = detail::tracking({&x});
  Tensor out(x.shape(), std::move(y), track);
  if (track) {
    active_tape()->record("softmax", {x}, out, [x, out, r, c]() mutable {
      const auto& g = grad_buffer(out);
      auto& gx = grad_buffer(x);
      for (std::size_t i = 0; i < r; ++i) {
        Real dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * out[i * c + j];
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += out[i * c + j] * (g[i * c + j] - dot);
      }
    });
  }
  return out;
}

/// Normalizes each row of x[rows, n], then applies gain and shift.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, Real eps = 1e-5) {
  detail::require_rank("layer_norm", x, 2);
  const std::size_t r = x.dim(0), n = x.dim(1);
  if (gain.numel() != n) detail::mismatch("layer_norm", x.shape(), gain.shape());
  if (shift.numel() != n) detail::mismatch("layer_norm", x.shape(), shift.shape());
  std::vector<Real> xhat(x.numel()), inv_std(r), y(x.numel());
  for (std::size_t i = 0; i < r; ++i) {
    Real mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += x[i * n + j];
    mean /= static_cast<Real>(n);
    Real var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const Real d = x[i * n + j] - mean;
      var += d * d;
    }
    var /= static_cast<Real>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (x[i * n + j] - mean) * inv_std[i];
      y[i * n + j] = xhat[i * n + j] * gain[j] + shift[j];
    }
  }
  const bool track = detail::tracking({&x, &gain, &shift});
  Tensor out(x.shape(), std::move(y), track);
  if (track) {
    active_tape()->record("layer_norm", {x, gain, shift}, out,
                          [x, gain, shift, out, r, n, xhat = std::move(xhat),
                           inv_std = std::move(inv_std)]() mutable {
      const auto& g = grad_buffer(out);
      if (gain.requires_grad()) {
        auto& gg = grad_buffer(gain);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * xhat[i * n + j];
      }
      if (shift.requires_grad()) {
        auto& gs = grad_buffer(shift);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < n; ++j) gs[j] += g[i * n + j];
      }
      if (x.requires_grad()) {
        auto& gx = grad_buffer(x);
        for (std::size_t i = 0; i < r; ++i) {
          Real mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const Real d = g[i * n + j] * gain[j];
            mean_d += d;
            mean_dx += d * xhat[i * n + j];
          }
          mean_d /= static_cast<Real>(n);
          mean_dx /= static_cast<Real>(n);
          for (std::size_t j = 0; j < n; ++j) {
            const Real d = g[i * n + j] * gain[j];
            gx[i * n + j] += inv_std[i] * (d - mean_d - xhat[i * n + j] * mean_dx);
          }
        }
      }
    });
  }
  return out;
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) detail::mismatch("reshape", x.shape(), shape);
  const bool track = detail::tracking({&x});
  Tensor out(std::move(shape), std::vector<Real>(x.data().begin(), x.data().end()), track);
  if (track) {
    active_tape()->record("reshape", {x}, out, [x, out]() mutable {
      const auto& g = grad_buffer(out);
      auto& gx = grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

/// [N, ...] -> [N, prod(...)].
inline Tensor flatten(const Tensor& x) {
  const std::size_t n = x.dim(0);
  return reshape(x, {n, x.numel() / n});
}

inline Tensor transpose(const Tensor& x) {
  detail::require_rank("transpose", x, 2);
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<Real> y(x.numel());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[j * r + i] = x[i * c + j];
  const bool track = detail::tracking({&x});
  Tensor out({c, r}, std::move(y), track);
  if (track) {
    active_tape()->record("transpose", {x}, out, [x, out, r, c]() mutable {
      const auto& g = grad_buffer(out);
      auto& gx = grad_buffer(x);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
    });
  }
  return out;
}

inline Tensor sum(const Tensor& x) {
  Real s = 0.0;
  for (auto v : x.data()) s += v;
  const bool track = detail::tracking({&x});
  Tensor out({1}, {s}, track);
  if (track) {
    active_tape()->record("sum", {x}, out, [x, out]() mutable {
      const Real g = grad_buffer(out)[0];
      auto& gx = grad_buffer(x);
      for (auto& v : gx) v += g;
    });
  }
  return out;
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<Real>(x.numel())); }

/// Mean negative log-likelihood of `labels` under row-wise softmax of logits[m, c].
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  detail::require_rank("cross_entropy", logits, 2);
  const std::size_t m = logits.dim(0), c = logits.dim(1);
  if (labels.size() != m) {
    throw ShapeError("cross_entropy: shape mismatch " + shape_str(logits.shape()) + " vs [" +
                     std::to_string(labels.size()) + "] labels");
  }
  std::vector<Real> probs(logits.numel());
  Real loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto label = static_cast<std::size_t>(labels[i]);
    if (labels[i] < 0 || label >= c) throw std::out_of_range("cross_entropy: label out of range");
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, logits[i * c + j]);
    Real z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(logits[i * c + j] - mx);
    const Real log_z = mx + std::log(z);
    loss += log_z - logits[i * c + label];
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(logits[i * c + j] - log_z);
  }
  loss /= static_cast<Real>(m);
  const bool track = detail::tracking({&logits});
  Tensor out({1}, {loss}, track);
  if (track) {
    std::vector<int> lab(labels.begin(), labels.end());
    active_tape()->record("cross_entropy", {logits}, out,
                          [logits, out, m, c, probs = std::move(probs), lab = std::move(lab)]() mutable {
      const Real g = grad_buffer(out)[0] / static_cast<Real>(m);
      auto& gx = grad_buffer(logits);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          const Real target = static_cast<std::size_t>(lab[i]) == j ? 1.0 : 0.0;
          gx[i * c + j] += g * (probs[i * c + j] - target);
        }
      }
    });
  }
  return out;
}

/// Valid (unpadded) 2-D convolution.
/// x[N, C, H, W] * weight[F, C, K, K] + bias[F] -> [N, F, Ho, Wo].
inline Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride) {
  detail::require_rank("conv2d", x, 4);
  detail::require_rank("conv2d", weight, 4);
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t F = weight.dim(0), K = weight.dim(2);
  if (weight.dim(1) != C || weight.dim(3) != K || K > H || K > W || stride == 0) {
    detail::mismatch("conv2d", x.shape(), weight.shape());
  }
  if (bias.defined() && bias.numel() != F) detail::mismatch("conv2d", weight.shape(), bias.shape());
  const std::size_t Ho = (H - K) / stride + 1, Wo = (W - K) / stride + 1;
  std::vector<Real> y(N * F * Ho * Wo, 0.0);
  const auto X = x.data();
  const auto Wt = weight.data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t f = 0; f < F; ++f) {
      Real* yp = &y[((n * F) + f) * Ho * Wo];
      if (bias.defined()) std::fill(yp, yp + Ho * Wo, bias[f]);
      for (std::size_t c = 0; c < C; ++c) {
        const Real* xp = &X[((n * C) + c) * H * W];
        for (std::size_t ki = 0; ki < K; ++ki) {
          for (std::size_t kj = 0; kj < K; ++kj) {
            const Real w = Wt[((f * C + c) * K + ki) * K + kj];
            for (std::size_t oh = 0; oh < Ho; ++oh) {
              const Real* xrow = xp + (oh * stride + ki) * W + kj;
              Real* yrow = yp + oh * Wo;
              for (std::size_t ow = 0; ow < Wo; ++ow) yrow[ow] += w * xrow[ow * stride];
            }
          }
        }
      }
    }
  }
  const bool track = detail::tracking({&x, &weight, &bias});
  Tensor out({N, F, Ho, Wo}, std::move(y), track);
  if (track) {
    std::vector<Tensor> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    active_tape()->record("conv2d", std::move(inputs), out,
                          [x, weight, bias, out, N, C, H, W, F, K, Ho, Wo, stride]() mutable {
      const auto& G = grad_buffer(out);
      const auto X = x.data();
      const auto Wt = weight.data();
      std::vector<Real>* gx = x.requires_grad() ? &grad_buffer(x) : nullptr;
      std::vector<Real>* gw = weight.requires_grad() ? &grad_buffer(weight) : nullptr;
      if (bias.defined() && bias.requires_grad()) {
        auto& gb = grad_buffer(bias);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t f = 0; f < F; ++f) {
            const Real* gp = &G[((n * F) + f) * Ho * Wo];
            for (std::size_t i = 0; i < Ho * Wo; ++i) gb[f] += gp[i];
          }
      }
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t f = 0; f < F; ++f) {
          const Real* gp = &G[((n * F) + f) * Ho * Wo];
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t xoff = ((n * C) + c) * H * W;
            for (std::size_t ki = 0; ki < K; ++ki) {
              for (std::size_t kj = 0; kj < K; ++kj) {
                const std::size_t widx = ((f * C + c) * K + ki) * K + kj;
                const Real w = Wt[widx];
                Real acc = 0.0;
                for (std::size_t oh = 0; oh < Ho; ++oh) {
                  const std::size_t xrow = xoff + (oh * stride + ki) * W + kj;
                  const Real* grow = gp + oh * Wo;
                  if (gw) {
                    for (std::size_t ow = 0; ow < Wo; ++ow) acc += grow[ow] * X[xrow + ow * stride];
                  }
                  if (gx) {
                    for (std::size_t ow = 0; ow < Wo; ++ow) (*gx)[xrow + ow * stride] += grow[ow] * w;
                  }
                }
                if (gw) (*gw)[widx] += acc;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

/// Max pooling over x[N, C, H, W]; padded cells never win.
inline Tensor maxpool2d(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t padding) {
  detail::require_rank("maxpool2d", x, 4);
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (stride == 0 || kernel == 0 || kernel > H + 2 * padding || kernel > W + 2 * padding) {
    throw ShapeError("maxpool2d: kernel " + std::to_string(kernel) + " padding " +
                     std::to_string(padding) + " does not fit input " + shape_str(x.shape()));
  }
  const std::size_t Ho = (H + 2 * padding - kernel) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - kernel) / stride + 1;
  std::vector<Real> y(N * C * Ho * Wo);
  std::vector<std::size_t> arg(y.size());
  const auto X = x.data();
  const auto P = static_cast<std::ptrdiff_t>(padding);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const std::size_t xoff = nc * H * W;
    for (std::size_t oh = 0; oh < Ho; ++oh) {
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        Real best = -std::numeric_limits<Real>::infinity();
        std::size_t best_idx = std::numeric_limits<std::size_t>::max();
        for (std::size_t ki = 0; ki < kernel; ++ki) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * stride + ki) - P;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t kj = 0; kj < kernel; ++kj) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * stride + kj) - P;
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
            const std::size_t idx = xoff + static_cast<std::size_t>(ih) * W + static_cast<std::size_t>(iw);
            if (X[idx] > best) {
              best = X[idx];
              best_idx = idx;
            }
          }
        }
        if (best_idx == std::numeric_limits<std::size_t>::max()) {
          throw ShapeError("maxpool2d: window lies entirely in padding for input " + shape_str(x.shape()));
        }
        const std::size_t o = (nc * Ho + oh) * Wo + ow;
        y[o] = best;
        arg[o] = best_idx;
      }
    }
  }
  const bool track = detail::tracking({&x});
  Tensor out({N, C, Ho, Wo}, std::move(y), track);
  if (track) {
    active_tape()->record("maxpool2d", {x}, out, [x, out, arg = std::move(arg)]() mutable {
      const auto& g = grad_buffer(out);
      auto& gx = grad_buffer(x);
      for (std::size_t o = 0; o < g.size(); ++o) gx[arg[o]] += g[o];
    });
  }
  return out;
}

/// Columns [begin, end) of x[rows, cols].
inline Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  detail::require_rank("slice_cols", x, 2);
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (begin >= end || end > c) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") outside " + shape_str(x.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<Real> y(r * w);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) y[i * w + j] = x[i * c + begin + j];
  const bool track = detail::tracking({&x});
  Tensor out({r, w}, std::move(y), track);
  if (track) {
    active_tape()->record("slice_cols", {x}, out, [x, out, r, c, w, begin]() mutable {
      const auto& g = grad_buffer(out);
      auto& gx = grad_buffer(x);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) gx[i * c + begin + j] += g[i * w + j];
    });
  }
  return out;
}

inline Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t r = parts[0].dim(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_rank("concat_cols", p, 2);
    if (p.dim(0) != r) detail::mismatch("concat_cols", parts[0].shape(), p.shape());
    total += p.dim(1);
  }
  std::vector<Real> y(r * total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) y[i * total + off + j] = p[i * w + j];
    off += w;
  }
  const bool track = detail::tracking(parts);
  Tensor out({r, total}, std::move(y), track);
  if (track) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    active_tape()->record("concat_cols", inputs, out, [inputs, out, r, total]() mutable {
      const auto& g = grad_buffer(out);
      std::size_t off = 0;
      for (auto& p : inputs) {
        const std::size_t w = p.dim(1);
        if (p.requires_grad()) {
          auto& gp = grad_buffer(p);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * total + off + j];
        }
        off += w;
      }
    });
  }
  return out;
}

inline Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = parts[0].dim(1);
  std::size_t rows = 0;
  for (const auto& p : parts) {
    detail::require_rank("concat_rows", p, 2);
    if (p.dim(1) != c) detail::mismatch("concat_rows", parts[0].shape(), p.shape());
    rows += p.dim(0);
  }
  std::vector<Real> y;
  y.reserve(rows * c);
  for (const auto& p : parts) y.insert(y.end(), p.data().begin(), p.data().end());
  const bool track = detail::tracking(parts);
  Tensor out({rows, c}, std::move(y), track);
  if (track) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    active_tape()->record("concat_rows", inputs, out, [inputs, out]() mutable {
      const auto& g = grad_buffer(out);
      std::size_t off = 0;
      for (auto& p : inputs) {
        if (p.requires_grad()) {
          auto& gp = grad_buffer(p);
          for (std::size_t i = 0; i < p.numel(); ++i) gp[i] += g[off + i];
        }
        off += p.numel();
      }
    });
  }
  return out;
}

/// Row i of x[rows, cols] as a [1, cols] tensor.
inline Tensor row(const Tensor& x, std::size_t i) {
  detail::require_rank("row", x, 2);
  const std::size_t c = x.dim(1);
  if (i >= x.dim(0)) throw ShapeError("row: index " + std::to_string(i) + " outside " + shape_str(x.shape()));
  const bool track = detail::tracking({&x});
  Tensor out({1, c}, std::vector<Real>(x.data().begin() + i * c, x.data().begin() + (i + 1) * c), track);
  if (track) {
    active_tape()->record("row", {x}, out, [x, out, i, c]() mutable {
      const auto& g = grad_buffer(out);
      auto& gx = grad_buffer(x);
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j];
    });
  }
  return out;
}

}  // namespace trlhpo::core::ops

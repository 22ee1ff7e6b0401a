#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

#include "trlhpo/core/tensor.hpp"

namespace trlhpo::core {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x243F6A8885A308D3ULL;
  for (auto p : parts) h = mix_seed(h ^ mix_seed(p));
  return h;
}

/// Box-Muller normal draw; unlike std::normal_distribution it is identical
/// across standard library implementations.
inline Real normal(Rng& rng, Real mean = 0.0, Real stddev = 1.0) {
  constexpr Real kScale = 1.0 / 9007199254740992.0;  // 2^-53
  const Real u1 = (static_cast<Real>(rng() >> 11) + 1.0) * kScale;
  const Real u2 = static_cast<Real>(rng() >> 11) * kScale;
  return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793238462643 * u2);
}

inline Real uniform01(Rng& rng) {
  return static_cast<Real>(rng() >> 11) * (1.0 / 9007199254740992.0);
}

inline Tensor normal_tensor(Shape shape, Rng& rng, Real stddev, bool requires_grad = false) {
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = normal(rng, 0.0, stddev);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

}  // namespace trlhpo::core

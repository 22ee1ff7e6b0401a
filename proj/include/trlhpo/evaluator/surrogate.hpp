#pragma once

#include <algorithm>
#include <cstdint>
#include <string>

#include "trlhpo/core/random.hpp"
#include "trlhpo/evaluator/outcome.hpp"
#include "trlhpo/search_space.hpp"

namespace trlhpo::evaluator {

/// Analytic stand-in for candidate training.
///
/// Accuracy is 0.1 + (0.9 - err) - penalty, with err starting at 0.9 (chance level for
/// ten classes). Useful layers remove a fraction of the remaining error,
/// scaled by a hyper-parameter quality in (0, 1]:
///   first Conv2D 0.85, second Conv2D 0.35, each further Conv2D costs 0.03;
///   MaxPool after a Conv2D 0.25 then 0.08, later pools add nothing, and a
///   pool before any Conv2D removes only 0.05;
///   first FCL 0.75 without a preceding Conv2D, otherwise 0.30;
///   each further (necessarily consecutive) FCL costs 0.02.
namespace surrogate {

inline constexpr double kChance = 0.1;
inline constexpr double kChanceError = 0.9;
inline constexpr double kBatchNoiseSigma = 0.02;

inline double conv_quality(const ConvLayer& c) {
  const double filters = 0.8 + 0.2 * static_cast<double>(c.filters - 8) / 120.0;
  const double kernel = c.kernel == 3 ? 1.0 : c.kernel == 5 ? 0.95 : 0.9;
  const double stride = c.stride == 1 ? 1.0 : c.stride == 2 ? 0.93 : 0.85;
  return filters * kernel * stride;
}

inline double pool_quality(const PoolLayer& p) {
  const double kernel = p.kernel == 2 ? 1.0 : std::max(0.6, 1.0 - 0.06 * (p.kernel - 2));
  const double stride = p.stride == 2 ? 1.0 : p.stride == 1 ? 0.9 : 0.92;
  const double padding = p.padding == 0 ? 1.0 : 0.95;
  return kernel * stride * padding;
}

inline double dense_quality(const DenseLayer& d) {
  const double width = 0.8 + 0.2 * static_cast<double>(d.neurons - 16) / 496.0;
  double act = 1.0;
  switch (d.activation) {
    case Activation::Relu:
    case Activation::Gelu: act = 1.0; break;
    case Activation::LeakyRelu: act = 0.98; break;
    case Activation::Elu: act = 0.97; break;
    case Activation::Tanh: act = 0.92; break;
    case Activation::Sigmoid: act = 0.85; break;
    case Activation::None: act = 0.8; break;
  }
  return width * act * (d.bias ? 1.0 : 0.96);
}

/// Best-quality layer of each kind; every factor above peaks here.
inline ConvLayer best_conv() { return {128, 3, 1}; }
inline PoolLayer best_pool() { return {2, 2, 0}; }
inline DenseLayer best_dense() { return {512, true, Activation::Relu}; }

inline double score(const ArchSpec& arch) {
  double err = kChanceError;
  double penalty = 0.0;
  int convs = 0, pools_after_conv = 0, dense = 0;
  for (const auto& layer : arch.layers()) {
    if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      ++convs;
      const double q = conv_quality(*c);
      if (convs == 1) err *= 1.0 - 0.85 * q;
      else if (convs == 2) err *= 1.0 - 0.35 * q;
      else penalty += 0.03;
    } else if (const auto* p = std::get_if<PoolLayer>(&layer)) {
      const double q = pool_quality(*p);
      if (convs == 0) {
        err *= 1.0 - 0.05 * q;
      } else {
        ++pools_after_conv;
        if (pools_after_conv == 1) err *= 1.0 - 0.25 * q;
        else if (pools_after_conv == 2) err *= 1.0 - 0.08 * q;
      }
    } else {
      const auto& d = std::get<DenseLayer>(layer);
      ++dense;
      if (dense == 1) err *= 1.0 - (convs == 0 ? 0.75 : 0.30) * dense_quality(d);
      else penalty += 0.02;
    }
  }
  return std::clamp(kChance + (kChanceError - err) - penalty, 0.0, 1.0);
}

}  // namespace surrogate

inline EvalOutcome surrogate_eval(const ArchSpec& arch, std::uint64_t seed) {
  EvalOutcome o;
  o.overall_accuracy = surrogate::score(arch);
  core::Rng rng(core::derive_seed({seed, std::stoull(arch_hash(arch), nullptr, 16)}));
  o.batch_accuracies.resize(kProfileBatches);
  for (auto& b : o.batch_accuracies) {
    b = std::clamp(o.overall_accuracy + core::normal(rng, 0.0, surrogate::kBatchNoiseSigma), 0.0, 1.0);
  }
  o.param_count = 0;
  return o;
}

class SurrogateEvaluator : public Evaluator {
 public:
  explicit SurrogateEvaluator(std::uint64_t seed) : seed_(seed) {}

  EvalOutcome evaluate(const ArchSpec& arch) override {
    count_evaluation();
    return surrogate_eval(arch, seed_);
  }

  std::string fingerprint() const override { return "surrogate:" + std::to_string(seed_); }

 private:
  std::uint64_t seed_;
};

}  // namespace trlhpo::evaluator

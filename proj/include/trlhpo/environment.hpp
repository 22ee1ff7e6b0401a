#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trlhpo/core/random.hpp"
#include "trlhpo/evaluator/cache.hpp"
#include "trlhpo/evaluator/outcome.hpp"
#include "trlhpo/search_space.hpp"

namespace trlhpo {

inline constexpr std::size_t kImrWidth = 64;
inline constexpr std::size_t kImrInputs = 4 + evaluator::kProfileBatches;  // 36

/// Frozen random map from (action, batch accuracies) to a 64-value
/// intermediate model representation: tanh(W x + b). Never trained.
class ImrEncoder {
 public:
  explicit ImrEncoder(std::uint64_t seed, bool zero_bias = false) : weights_(kImrWidth * kImrInputs), bias_(kImrWidth) {
    core::Rng rng(core::derive_seed({seed, 0x1A4}));
    const double stddev = 1.0 / std::sqrt(static_cast<double>(kImrInputs));
    for (auto& w : weights_) w = core::normal(rng, 0.0, stddev);
    for (auto& b : bias_) b = zero_bias ? 0.0 : core::normal(rng, 0.0, 0.1);
  }

  std::array<double, kImrWidth> encode(const ActionVector& action, std::span<const double> batch_accuracies) const {
    if (batch_accuracies.size() != evaluator::kProfileBatches) {
      throw std::invalid_argument("encode_imr: expected 32 batch accuracies, got " +
                                  std::to_string(batch_accuracies.size()));
    }
    std::array<double, kImrInputs> x{};
    for (std::size_t i = 0; i < 4; ++i) x[i] = action[i];
    for (std::size_t i = 0; i < batch_accuracies.size(); ++i) x[4 + i] = batch_accuracies[i];
    std::array<double, kImrWidth> y{};
    for (std::size_t r = 0; r < kImrWidth; ++r) {
      double s = bias_[r];
      for (std::size_t c = 0; c < kImrInputs; ++c) s += weights_[r * kImrInputs + c] * x[c];
      y[r] = std::tanh(s);
    }
    return y;
  }

 private:
  std::vector<double> weights_;
  std::vector<double> bias_;
};

/// Partial architecture as seen by the controller: one IMR row per
/// generated layer, zero rows for empty slots.
struct EnvState {
  std::vector<double> slots = std::vector<double>(kMaxLayers * kImrWidth, 0.0);
  std::size_t layer_count = 0;
  double last_accuracy = 0.1;
  ArchSpec arch;

  std::span<const double> slot(std::size_t i) const { return std::span(slots).subspan(i * kImrWidth, kImrWidth); }
  bool operator==(const EnvState& o) const {
    return slots == o.slots && layer_count == o.layer_count && last_accuracy == o.last_accuracy && arch == o.arch;
  }
};

inline nlohmann::json state_to_json(const EnvState& s) {
  return {{"slots", s.slots}, {"layer_count", s.layer_count}, {"last_accuracy", s.last_accuracy},
          {"arch", arch_to_json(s.arch)}};
}

inline EnvState state_from_json(const nlohmann::json& j) {
  EnvState s;
  s.slots = j.at("slots").get<std::vector<double>>();
  s.layer_count = j.at("layer_count").get<std::size_t>();
  s.last_accuracy = j.at("last_accuracy").get<double>();
  s.arch = arch_from_json(j.at("arch"));
  return s;
}

struct Transition {
  EnvState state;
  ActionVector action;
  double reward = 0.0;
  EnvState next_state;
  bool done = false;
};

inline nlohmann::json transition_to_json(const Transition& t) {
  return {{"state", state_to_json(t.state)},
          {"action", t.action.a},
          {"reward", t.reward},
          {"next_state", state_to_json(t.next_state)},
          {"done", t.done}};
}

inline Transition transition_from_json(const nlohmann::json& j) {
  Transition t;
  t.state = state_from_json(j.at("state"));
  t.action.a = j.at("action").get<std::array<double, 4>>();
  t.reward = j.at("reward").get<double>();
  t.next_state = state_from_json(j.at("next_state"));
  t.done = j.at("done").get<bool>();
  return t;
}

enum class StopReason { None, MaxLayers, MinImprovement, LowAccuracy };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::None: return "none";
    case StopReason::MaxLayers: return "max-layers";
    case StopReason::MinImprovement: return "min-improvement";
    case StopReason::LowAccuracy: return "low-accuracy";
  }
  return "none";
}

struct EnvConfig {
  double baseline_accuracy = 0.10;
  double min_improvement = 0.001;
  double accuracy_floor = 0.60;
  std::size_t max_layers = kMaxLayers;
};

struct StopDecision {
  bool done = false;
  StopReason reason = StopReason::None;
};

inline double compute_reward(double prev_accuracy, double new_accuracy) { return new_accuracy - prev_accuracy; }

/// Rules are checked in order: layer cap, minimal improvement (from the
/// second layer on), accuracy floor.
inline StopDecision check_stop(std::size_t layer_count, double reward, double new_accuracy,
                               const EnvConfig& cfg = {}) {
  if (layer_count >= cfg.max_layers) return {true, StopReason::MaxLayers};
  if (layer_count >= 2 && reward < cfg.min_improvement) return {true, StopReason::MinImprovement};
  if (new_accuracy < cfg.accuracy_floor) return {true, StopReason::LowAccuracy};
  return {};
}

struct StepResult {
  EnvState next;
  double reward = 0.0;
  bool done = false;
  StopReason reason = StopReason::None;
  LayerSpec layer;
  evaluator::EvalOutcome outcome;
};

/// Layer-by-layer construction environment with progressive rewards.
class Environment {
 public:
  Environment(const ImrEncoder& encoder, EnvConfig cfg = {},
              FeatureShape input = FeatureShape::grid(1, 28, 28))
      : encoder_(&encoder), cfg_(cfg), input_(input) {}

  const EnvConfig& config() const { return cfg_; }

  EnvState reset() const {
    EnvState s;
    s.last_accuracy = cfg_.baseline_accuracy;
    s.arch = ArchSpec(input_);
    return s;
  }

  std::array<double, kImrWidth> encode_imr(const ActionVector& action, std::span<const double> accuracies) const {
    return encoder_->encode(action, accuracies);
  }

  /// Decodes the action into a legal layer, evaluates the grown architecture
  /// and writes its IMR into the next slot. Evaluator exceptions propagate
  /// and leave `state` untouched.
  StepResult step(const EnvState& state, const ActionVector& action, evaluator::Evaluator& eval,
                  evaluator::EvalCache* cache = nullptr) const {
    if (state.layer_count >= cfg_.max_layers) throw std::logic_error("step: episode already terminal");
    if (!action.valid()) throw std::invalid_argument("step: action outside [0,1]^4");
    StepResult r;
    r.layer = decode_action(action, state.arch.output_shape());
    r.next = state;
    r.next.arch.append(r.layer);
    r.outcome = evaluator::eval_cached(r.next.arch, eval, cache);
    r.reward = compute_reward(state.last_accuracy, r.outcome.overall_accuracy);
    const auto imr = encoder_->encode(action, r.outcome.batch_accuracies);
    std::copy(imr.begin(), imr.end(), r.next.slots.begin() + static_cast<std::ptrdiff_t>(state.layer_count * kImrWidth));
    r.next.layer_count = state.layer_count + 1;
    r.next.last_accuracy = r.outcome.overall_accuracy;
    const auto stop = check_stop(r.next.layer_count, r.reward, r.outcome.overall_accuracy, cfg_);
    r.done = stop.done;
    r.reason = stop.reason;
    return r;
  }

 private:
  const ImrEncoder* encoder_;
  EnvConfig cfg_;
  FeatureShape input_;
};

}  // namespace trlhpo

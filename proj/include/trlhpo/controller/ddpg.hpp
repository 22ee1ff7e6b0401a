#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "trlhpo/controller/replay_buffer.hpp"
#include "trlhpo/controller/transformer.hpp"
#include "trlhpo/core/adam.hpp"
#include "trlhpo/core/checkpoint.hpp"
#include "trlhpo/environment.hpp"

namespace trlhpo::controller {

struct DdpgConfig {
  double actor_lr = 1e-5;
  double critic_lr = 1e-4;
  double gamma = 0.99;
  double tau = 0.005;
  std::size_t batch_size = 64;
  std::size_t buffer_capacity = 2000;
  double noise_sigma = 0.2;
  double noise_decay = 0.99;
  std::size_t embed_dim = 64;
  std::size_t heads = 4;
  std::size_t blocks = 2;
  std::size_t expansion = 4;
};

inline nlohmann::json ddpg_to_json(const DdpgConfig& c) {
  return {{"actor_lr", c.actor_lr},       {"critic_lr", c.critic_lr},   {"gamma", c.gamma},
          {"tau", c.tau},                 {"batch_size", c.batch_size}, {"buffer_capacity", c.buffer_capacity},
          {"noise_sigma", c.noise_sigma}, {"noise_decay", c.noise_decay}, {"embed_dim", c.embed_dim},
          {"heads", c.heads},             {"blocks", c.blocks},         {"expansion", c.expansion}};
}

inline TransformerConfig actor_config(const DdpgConfig& c) {
  return {.input_dim = kImrWidth, .embed_dim = c.embed_dim, .heads = c.heads, .blocks = c.blocks,
          .expansion = c.expansion, .seq_len = kMaxLayers, .output_dim = 4, .extra_token_dim = 0,
          .output_activation = OutputActivation::Sigmoid};
}

inline TransformerConfig critic_config(const DdpgConfig& c) {
  return {.input_dim = kImrWidth, .embed_dim = c.embed_dim, .heads = c.heads, .blocks = c.blocks,
          .expansion = c.expansion, .seq_len = kMaxLayers, .output_dim = 1, .extra_token_dim = 4,
          .output_activation = OutputActivation::Tanh};
}

inline Tensor state_tokens(const EnvState& s) { return Tensor({kMaxLayers, kImrWidth}, s.slots); }

/// Slot the actor reads from: the next empty slot, or the last one when full.
inline std::size_t acting_position(const EnvState& s) { return std::min(s.layer_count, kMaxLayers - 1); }

struct ActorOutput {
  ActionVector action;
  std::vector<Tensor> attention;  // final block, per head, [6, 6]
};

inline NetOutput actor_graph(const TransformerNet& actor, const EnvState& s) {
  return actor.forward(state_tokens(s), Tensor{}, acting_position(s));
}

inline ActorOutput actor_forward(const TransformerNet& actor, const EnvState& s) {
  auto out = actor_graph(actor, s);
  ActorOutput r;
  for (std::size_t i = 0; i < 4; ++i) r.action.a[i] = out.value[i];
  r.attention = std::move(out.attention);
  return r;
}

/// Q(s, a) graph; `action` is a [1, 4] tensor so gradients can reach it.
inline Tensor critic_graph(const TransformerNet& critic, const EnvState& s, const Tensor& action) {
  return critic.forward(state_tokens(s), action, kMaxLayers).value;
}

inline Tensor action_tensor(const ActionVector& a, bool requires_grad = false) {
  return Tensor({1, 4}, {a[0], a[1], a[2], a[3]}, requires_grad);
}

inline double critic_forward(const TransformerNet& critic, const EnvState& s, const ActionVector& a) {
  return critic_graph(critic, s, action_tensor(a)).item();
}

/// Head-averaged attention row for query position `query`.
inline std::vector<double> mean_attention_row(std::span<const Tensor> heads, std::size_t query) {
  if (heads.empty()) return {};
  const std::size_t n = heads.front().dim(1);
  std::vector<double> row(n, 0.0);
  for (const auto& h : heads) {
    for (std::size_t j = 0; j < n; ++j) row[j] += h[query * n + j];
  }
  for (auto& v : row) v /= static_cast<double>(heads.size());
  return row;
}

/// Clean actor action plus independent N(0, sigma) per component, clipped.
inline ActionVector add_exploration_noise(const ActionVector& clean, double sigma, core::Rng& rng) {
  if (sigma < 0.0) throw std::invalid_argument("select_action: sigma must be non-negative");
  if (sigma == 0.0) return clean;
  std::array<double, 4> v{};
  for (std::size_t i = 0; i < 4; ++i) v[i] = clean[i] + core::normal(rng, 0.0, sigma);
  return ActionVector::clamped(v);
}

struct UpdateStats {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  bool grads_finite = true;
};

inline bool all_finite(std::span<const Tensor> ts) {
  for (const auto& t : ts) {
    for (double v : t.data()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

/// Actor-critic pair with target copies, optimizers and the TD update.
class DdpgAgent {
 public:
  DdpgAgent(const DdpgConfig& cfg, std::uint64_t seed)
      : cfg_(cfg),
        actor_(actor_config(cfg), core::derive_seed({seed, 0xAC7})),
        critic_(critic_config(cfg), core::derive_seed({seed, 0xC71})),
        actor_target_(actor_),
        critic_target_(critic_) {
    const auto at = actor_.tensors();
    const auto ct = critic_.tensors();
    actor_opt_ = core::AdamState(core::AdamConfig{.lr = cfg.actor_lr}, at);
    critic_opt_ = core::AdamState(core::AdamConfig{.lr = cfg.critic_lr}, ct);
  }

  const DdpgConfig& config() const { return cfg_; }
  const TransformerNet& actor() const { return actor_; }
  const TransformerNet& critic() const { return critic_; }
  const TransformerNet& actor_target() const { return actor_target_; }
  const TransformerNet& critic_target() const { return critic_target_; }
  TransformerNet& actor() { return actor_; }
  TransformerNet& critic() { return critic_; }

  ActorOutput act(const EnvState& s) const { return actor_forward(actor_, s); }

  ActionVector select_action(const EnvState& s, double sigma, core::Rng& rng) const {
    return add_exploration_noise(act(s).action, sigma, rng);
  }

  /// y = r + gamma * (1 - done) * Q_target(s', actor_target(s')).
  double td_target(const Transition& t) const {
    if (t.done || cfg_.gamma == 0.0) return t.reward;
    const auto next_action = actor_forward(actor_target_, t.next_state).action;
    return t.reward + cfg_.gamma * critic_forward(critic_target_, t.next_state, next_action);
  }

  double critic_loss(std::span<const Transition> batch) const {
    double loss = 0.0;
    for (const auto& t : batch) {
      const double d = critic_forward(critic_, t.state, t.action) - td_target(t);
      loss += d * d;
    }
    return loss / static_cast<double>(batch.size());
  }

  /// One Adam step on the mean squared TD error. Returns the pre-step loss.
  double critic_step(std::span<const Transition> batch, bool* finite = nullptr) {
    std::vector<double> targets;
    targets.reserve(batch.size());
    for (const auto& t : batch) targets.push_back(td_target(t));

    auto params = critic_.tensors();
    core::GradTape tape;
    core::TapeScope scope(tape);
    std::vector<Tensor> qs;
    qs.reserve(batch.size());
    for (const auto& t : batch) qs.push_back(critic_graph(critic_, t.state, action_tensor(t.action)));
    const Tensor q = ops::concat_rows(qs);
    const Tensor diff = ops::sub(q, Tensor({batch.size(), 1}, targets));
    const Tensor loss = ops::mean(ops::mul(diff, diff));
    const auto grads = tape.backward(loss, params);
    const bool ok = all_finite(grads);
    if (finite) *finite = ok;
    if (ok) core::adam_step(params, grads, critic_opt_);
    return loss.item();
  }

  /// One Adam step on -mean Q(s, actor(s)), moving only actor parameters.
  double actor_step(std::span<const Transition> batch, bool* finite = nullptr) {
    auto params = actor_.tensors();
    core::GradTape tape;
    core::TapeScope scope(tape);
    std::vector<Tensor> qs;
    qs.reserve(batch.size());
    for (const auto& t : batch) {
      const Tensor a = actor_graph(actor_, t.state).value;
      qs.push_back(critic_graph(critic_, t.state, a));
    }
    const Tensor loss = ops::scale(ops::mean(ops::concat_rows(qs)), -1.0);
    const auto grads = tape.backward(loss, params);
    const bool ok = all_finite(grads);
    if (finite) *finite = ok;
    if (ok) core::adam_step(params, grads, actor_opt_);
    return loss.item();
  }

  void update_targets() {
    soft_update(actor_.params(), actor_target_.params(), cfg_.tau);
    soft_update(critic_.params(), critic_target_.params(), cfg_.tau);
  }

  /// Critic step, actor step, then soft target updates.
  UpdateStats update(std::span<const Transition> batch) {
    if (batch.empty()) throw std::invalid_argument("ddpg update: empty batch");
    UpdateStats s;
    bool critic_ok = true, actor_ok = true;
    s.critic_loss = critic_step(batch, &critic_ok);
    s.actor_loss = actor_step(batch, &actor_ok);
    s.grads_finite = critic_ok && actor_ok;
    update_targets();
    return s;
  }

  nlohmann::json to_json() const {
    return {{"actor", core::params_to_json(actor_.params())},
            {"critic", core::params_to_json(critic_.params())},
            {"actor_target", core::params_to_json(actor_target_.params())},
            {"critic_target", core::params_to_json(critic_target_.params())},
            {"actor_opt", core::adam_to_json(actor_opt_)},
            {"critic_opt", core::adam_to_json(critic_opt_)}};
  }

  void load_json(const nlohmann::json& j) {
    core::params_from_json(j.at("actor"), actor_.params());
    core::params_from_json(j.at("critic"), critic_.params());
    core::params_from_json(j.at("actor_target"), actor_target_.params());
    core::params_from_json(j.at("critic_target"), critic_target_.params());
    actor_opt_ = core::adam_from_json(j.at("actor_opt"));
    critic_opt_ = core::adam_from_json(j.at("critic_opt"));
  }

 private:
  DdpgConfig cfg_;
  TransformerNet actor_, critic_, actor_target_, critic_target_;
  core::AdamState actor_opt_, critic_opt_;
};

}  // namespace trlhpo::controller

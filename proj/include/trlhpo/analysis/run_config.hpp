#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "trlhpo/controller/ddpg.hpp"
#include "trlhpo/environment.hpp"
#include "trlhpo/evaluator/mnist.hpp"
#include "trlhpo/evaluator/training.hpp"

namespace trlhpo::analysis {

enum class EvaluatorMode { Surrogate, Real };
enum class PolicyMode { Ddpg, Random };

/// Everything a search run depends on. Written verbatim into the run-log
/// header, so a log is enough to reproduce its run.
struct RunConfig {
  evaluator::DataConfig data;
  EvaluatorMode evaluator = EvaluatorMode::Real;
  evaluator::TrainBudget budget;
  std::uint64_t surrogate_seed = 0;
  controller::DdpgConfig ddpg;
  EnvConfig env;
  PolicyMode policy = PolicyMode::Ddpg;

  std::size_t episodes = 50;
  std::size_t models_per_episode = 10;
  std::size_t opt_rounds_per_episode = 5;
  /// Gradient steps per optimization round.
  std::size_t steps_per_round = 1;
  std::size_t exploration_episodes = 40;
  /// Updates start once the buffer holds this many transitions; 0 means full.
  std::size_t warmup_transitions = 0;
  /// Exploitation episodes append to the buffer (off: the buffer is frozen).
  bool exploit_buffer_writes = false;
  /// Exploitation episodes keep running optimization rounds on the buffer.
  bool exploit_updates = true;

  std::uint64_t seed = 0;
  double wallclock_budget_s = 0.0;  // 0: unlimited
  std::size_t threads = 0;          // 0: one per rollout
  bool use_cache = true;
  std::size_t checkpoint_every = 1;  // episodes; 0 disables
  std::size_t top_k = 10;
  std::string out_dir = "runs/latest";

  std::size_t warmup() const { return warmup_transitions == 0 ? ddpg.buffer_capacity : warmup_transitions; }
};

inline const char* to_string(EvaluatorMode m) { return m == EvaluatorMode::Surrogate ? "surrogate" : "real"; }
inline const char* to_string(PolicyMode m) { return m == PolicyMode::Random ? "random" : "ddpg"; }

inline EvaluatorMode evaluator_mode_from_string(const std::string& s) {
  if (s == "surrogate") return EvaluatorMode::Surrogate;
  if (s == "real") return EvaluatorMode::Real;
  throw std::invalid_argument("config: evaluator must be 'real' or 'surrogate', got '" + s + "'");
}

inline PolicyMode policy_mode_from_string(const std::string& s) {
  if (s == "ddpg") return PolicyMode::Ddpg;
  if (s == "random") return PolicyMode::Random;
  throw std::invalid_argument("config: policy must be 'ddpg' or 'random', got '" + s + "'");
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  return {
      {"data",
       {{"mnist_dir", c.data.mnist_dir},
        {"train_size", c.data.train_size},
        {"validation_size", c.data.validation_size},
        {"split_seed", c.data.split_seed}}},
      {"evaluator", to_string(c.evaluator)},
      {"budget", evaluator::budget_to_json(c.budget)},
      {"surrogate_seed", c.surrogate_seed},
      {"ddpg", controller::ddpg_to_json(c.ddpg)},
      {"env",
       {{"baseline_accuracy", c.env.baseline_accuracy},
        {"min_improvement", c.env.min_improvement},
        {"accuracy_floor", c.env.accuracy_floor},
        {"max_layers", c.env.max_layers}}},
      {"policy", to_string(c.policy)},
      {"episodes", c.episodes},
      {"models_per_episode", c.models_per_episode},
      {"opt_rounds_per_episode", c.opt_rounds_per_episode},
      {"steps_per_round", c.steps_per_round},
      {"exploration_episodes", c.exploration_episodes},
      {"warmup_transitions", c.warmup_transitions},
      {"exploit_buffer_writes", c.exploit_buffer_writes},
      {"exploit_updates", c.exploit_updates},
      {"seed", c.seed},
      {"wallclock_budget_s", c.wallclock_budget_s},
      {"threads", c.threads},
      {"use_cache", c.use_cache},
      {"checkpoint_every", c.checkpoint_every},
      {"top_k", c.top_k},
      {"out_dir", c.out_dir},
  };
}

namespace detail {

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

}  // namespace detail

/// Missing keys keep their defaults; unknown keys are rejected so typos fail loudly.
inline RunConfig config_from_json(const nlohmann::json& j) {
  static const char* known[] = {"data", "evaluator", "budget", "surrogate_seed", "ddpg", "env", "policy",
                                "episodes", "models_per_episode", "opt_rounds_per_episode", "steps_per_round",
                                "exploration_episodes", "warmup_transitions", "exploit_buffer_writes",
                                "exploit_updates", "seed", "wallclock_budget_s", "threads", "use_cache",
                                "checkpoint_every", "top_k", "out_dir"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }
  using detail::read_opt;
  RunConfig c;
  if (j.contains("data")) {
    const auto& d = j.at("data");
    read_opt(d, "mnist_dir", c.data.mnist_dir);
    read_opt(d, "train_size", c.data.train_size);
    read_opt(d, "validation_size", c.data.validation_size);
    read_opt(d, "split_seed", c.data.split_seed);
  }
  if (j.contains("evaluator")) c.evaluator = evaluator_mode_from_string(j.at("evaluator").get<std::string>());
  if (j.contains("budget")) {
    const auto& b = j.at("budget");
    read_opt(b, "epochs", c.budget.epochs);
    read_opt(b, "batch_size", c.budget.batch_size);
    read_opt(b, "lr", c.budget.lr);
    read_opt(b, "seed", c.budget.seed);
  }
  read_opt(j, "surrogate_seed", c.surrogate_seed);
  if (j.contains("ddpg")) {
    const auto& d = j.at("ddpg");
    read_opt(d, "actor_lr", c.ddpg.actor_lr);
    read_opt(d, "critic_lr", c.ddpg.critic_lr);
    read_opt(d, "gamma", c.ddpg.gamma);
    read_opt(d, "tau", c.ddpg.tau);
    read_opt(d, "batch_size", c.ddpg.batch_size);
    read_opt(d, "buffer_capacity", c.ddpg.buffer_capacity);
    read_opt(d, "noise_sigma", c.ddpg.noise_sigma);
    read_opt(d, "noise_decay", c.ddpg.noise_decay);
    read_opt(d, "embed_dim", c.ddpg.embed_dim);
    read_opt(d, "heads", c.ddpg.heads);
    read_opt(d, "blocks", c.ddpg.blocks);
    read_opt(d, "expansion", c.ddpg.expansion);
  }
  if (j.contains("env")) {
    const auto& e = j.at("env");
    read_opt(e, "baseline_accuracy", c.env.baseline_accuracy);
    read_opt(e, "min_improvement", c.env.min_improvement);
    read_opt(e, "accuracy_floor", c.env.accuracy_floor);
    read_opt(e, "max_layers", c.env.max_layers);
  }
  if (j.contains("policy")) c.policy = policy_mode_from_string(j.at("policy").get<std::string>());
  read_opt(j, "episodes", c.episodes);
  read_opt(j, "models_per_episode", c.models_per_episode);
  read_opt(j, "opt_rounds_per_episode", c.opt_rounds_per_episode);
  read_opt(j, "steps_per_round", c.steps_per_round);
  read_opt(j, "exploration_episodes", c.exploration_episodes);
  read_opt(j, "warmup_transitions", c.warmup_transitions);
  read_opt(j, "exploit_buffer_writes", c.exploit_buffer_writes);
  read_opt(j, "exploit_updates", c.exploit_updates);
  read_opt(j, "seed", c.seed);
  read_opt(j, "wallclock_budget_s", c.wallclock_budget_s);
  read_opt(j, "threads", c.threads);
  read_opt(j, "use_cache", c.use_cache);
  read_opt(j, "checkpoint_every", c.checkpoint_every);
  read_opt(j, "top_k", c.top_k);
  read_opt(j, "out_dir", c.out_dir);
  return c;
}

inline void validate(const RunConfig& c) {
  auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
  if (c.models_per_episode == 0) fail("models_per_episode must be positive");
  if (c.ddpg.batch_size == 0) fail("ddpg.batch_size must be positive");
  if (c.ddpg.buffer_capacity < c.ddpg.batch_size) fail("ddpg.buffer_capacity must be at least ddpg.batch_size");
  if (c.warmup() > c.ddpg.buffer_capacity) fail("warmup_transitions exceeds ddpg.buffer_capacity");
  if (c.ddpg.tau < 0.0 || c.ddpg.tau > 1.0) fail("ddpg.tau must lie in [0,1]");
  if (c.ddpg.noise_sigma < 0.0) fail("ddpg.noise_sigma must be non-negative");
  if (c.env.max_layers == 0 || c.env.max_layers > kMaxLayers) fail("env.max_layers must lie in [1,6]");
  if (c.wallclock_budget_s < 0.0) fail("wallclock_budget_s must be non-negative");
  if (c.out_dir.empty()) fail("out_dir must be set");
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path.string());
  const auto j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  return config_from_json(j);
}

}  // namespace trlhpo::analysis

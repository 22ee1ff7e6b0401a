#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "trlhpo/analysis/run_config.hpp"
#include "trlhpo/analysis/run_log.hpp"
#include "trlhpo/controller/ddpg.hpp"
#include "trlhpo/controller/replay_buffer.hpp"
#include "trlhpo/environment.hpp"
#include "trlhpo/evaluator/cache.hpp"
#include "trlhpo/evaluator/surrogate.hpp"
#include "trlhpo/evaluator/training.hpp"

namespace trlhpo::analysis {

struct SearchOptions {
  /// Replaces the evaluator the config would build. Must be thread-safe.
  evaluator::Evaluator* evaluator = nullptr;
  /// Continue from out_dir/checkpoint.json when it exists.
  bool resume = false;
};

struct EpisodeSummary {
  std::size_t episode = 0;
  std::string phase;
  double sigma = 0.0;
  double mean_return = 0.0;
  double best_accuracy = 0.0;
  std::size_t transitions = 0;
};

struct RunResult {
  std::size_t episodes_completed = 0;
  std::string stopped_by;  // "episodes" | "wallclock"
  /// Step rewards in log order.
  std::vector<double> rewards;
  std::vector<EpisodeSummary> episodes;
  double best_accuracy = 0.0;
  std::string best_digest;
  nlohmann::json best_arch;
  std::size_t evaluations = 0;
  std::size_t incidents = 0;
  std::filesystem::path log_path;

  /// Mean of per-episode mean returns over episodes of the given phase.
  double mean_return(const std::string& phase) const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& e : episodes) {
      if (e.phase == phase) {
        s += e.mean_return;
        ++n;
      }
    }
    return n ? s / static_cast<double>(n) : 0.0;
  }
};

inline std::unique_ptr<evaluator::Evaluator> make_evaluator(const RunConfig& cfg) {
  if (cfg.evaluator == EvaluatorMode::Surrogate) {
    return std::make_unique<evaluator::SurrogateEvaluator>(cfg.surrogate_seed);
  }
  auto data = std::make_shared<const evaluator::Dataset>(evaluator::load_dataset(cfg.data));
  return std::make_unique<evaluator::TrainingEvaluator>(std::move(data), cfg.budget);
}

namespace detail {

struct RolloutResult {
  std::vector<StepRecord> records;
  std::vector<Transition> transitions;
  std::vector<std::string> incidents;
};

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0, double offset) {
  return offset + std::chrono::duration<double>(Clock::now() - t0).count();
}

inline void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << j.dump();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

/// Keeps the log prefix up to the `episode` record of `last_episode`, dropping
/// lines of any episode that was interrupted. Returns the last timestamp kept.
inline double truncate_log(const std::filesystem::path& path, std::size_t last_episode) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("resume: cannot read " + path.string());
  std::vector<std::string> kept;
  std::size_t keep_until = 0;
  double last_t = 0.0;
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) lines.push_back(std::move(line));
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto j = nlohmann::json::parse(lines[i], nullptr, false);
    if (j.is_discarded()) break;
    if (j.value("type", "") == "episode" && j.value("episode", std::size_t{0}) == last_episode) {
      keep_until = i + 1;
      last_t = j.value("elapsed_s", 0.0);
    }
  }
  if (keep_until == 0) throw std::runtime_error("resume: log has no record of episode " + std::to_string(last_episode));
  lines.resize(keep_until);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    for (const auto& l : lines) out << l << '\n';
    if (!out) throw std::runtime_error("resume: cannot rewrite " + path.string());
  }
  std::filesystem::rename(tmp, path);
  return last_t;
}

}  // namespace detail

/// Runs the search described by `cfg`, writing out_dir/run_log.jsonl.
///
/// Each episode runs `models_per_episode` rollouts concurrently against a
/// frozen actor, then (after the barrier) logs them in rollout order, feeds
/// the buffer and performs the optimization rounds on one thread.
inline RunResult run_search(const RunConfig& cfg, const SearchOptions& opt = {}) {
  validate(cfg);
  namespace fs = std::filesystem;
  const fs::path out_dir = cfg.out_dir;
  fs::create_directories(out_dir);
  const fs::path log_path = out_dir / "run_log.jsonl";
  const fs::path ckpt_path = out_dir / "checkpoint.json";

  std::unique_ptr<evaluator::Evaluator> owned;
  evaluator::Evaluator* eval = opt.evaluator;
  if (!eval) {
    owned = make_evaluator(cfg);
    eval = owned.get();
  }
  std::unique_ptr<evaluator::EvalCache> cache;
  if (cfg.use_cache) {
    cache = cfg.evaluator == EvaluatorMode::Real && !opt.evaluator
                ? std::make_unique<evaluator::EvalCache>(out_dir / "eval_cache.jsonl", eval->fingerprint())
                : std::make_unique<evaluator::EvalCache>(eval->fingerprint());
  }

  const ImrEncoder encoder(core::derive_seed({cfg.seed, 0x1E}));
  const Environment env(encoder, cfg.env);
  controller::DdpgAgent agent(cfg.ddpg, core::derive_seed({cfg.seed, 0xA6}));
  controller::ReplayBuffer buffer(cfg.ddpg.buffer_capacity);

  RunResult result;
  result.log_path = log_path;
  std::size_t start_episode = 0;
  double time_offset = 0.0;
  std::unique_ptr<RunLogWriter> log;

  if (opt.resume && fs::exists(ckpt_path) && fs::exists(log_path)) {
    std::ifstream in(ckpt_path);
    const auto ck = nlohmann::json::parse(in);
    if (ck.at("config") != config_to_json(cfg)) throw std::runtime_error("resume: checkpoint config differs from the requested run");
    agent.load_json(ck.at("agent"));
    buffer = controller::ReplayBuffer::from_json(ck.at("buffer"));
    const auto last = ck.at("episode").get<std::size_t>();
    start_episode = last + 1;
    time_offset = detail::truncate_log(log_path, last);
    const auto prior = read_run_log(log_path);
    for (const auto& s : prior.steps) {
      result.rewards.push_back(s.reward);
      if (s.overall_accuracy > result.best_accuracy) {
        result.best_accuracy = s.overall_accuracy;
        result.best_digest = s.digest;
        result.best_arch = s.arch;
      }
    }
    for (const auto& e : prior.episodes) {
      result.episodes.push_back({e.at("episode").get<std::size_t>(), e.at("phase").get<std::string>(),
                                 e.at("sigma").get<double>(), e.at("mean_return").get<double>(),
                                 e.at("best_accuracy").get<double>(), e.at("transitions").get<std::size_t>()});
    }
    result.incidents = prior.incidents.size();
    result.episodes_completed = start_episode;
    log = std::make_unique<RunLogWriter>(log_path, true);
    log->write({{"type", "resume"}, {"from_episode", start_episode}});
  } else {
    log = std::make_unique<RunLogWriter>(log_path, false);
    log->write({{"type", "header"},
                {"version", kRunLogVersion},
                {"config", config_to_json(cfg)},
                {"evaluator", eval->fingerprint()}});
  }

  const auto t0 = detail::Clock::now();
  const std::size_t workers =
      std::max<std::size_t>(1, std::min(cfg.threads == 0 ? cfg.models_per_episode : cfg.threads, cfg.models_per_episode));

  auto run_rollout = [&](std::size_t episode, std::size_t rollout, double sigma, bool explore) {
    detail::RolloutResult out;
    core::Rng rng(core::derive_seed({cfg.seed, 0x20, episode, rollout}));
    EnvState state = env.reset();
    for (std::size_t step = 0; step < cfg.env.max_layers; ++step) {
      StepRecord rec;
      rec.episode = episode;
      rec.rollout = rollout;
      rec.step = step;
      rec.phase = explore ? "explore" : "exploit";
      rec.t_start = detail::seconds_since(t0, time_offset);
      const auto acted = agent.act(state);
      rec.attention_query = controller::acting_position(state);
      rec.attention = controller::mean_attention_row(acted.attention, rec.attention_query);
      ActionVector action;
      if (cfg.policy == PolicyMode::Random) {
        for (auto& v : action.a) v = core::uniform01(rng);
      } else {
        action = controller::add_exploration_noise(acted.action, sigma, rng);
      }
      rec.action = action.a;
      StepResult r;
      try {
        r = env.step(state, action, *eval, cache.get());
      } catch (const std::exception& e) {
        out.incidents.push_back("episode " + std::to_string(episode) + " rollout " + std::to_string(rollout) +
                                " step " + std::to_string(step) + ": " + e.what());
        break;
      }
      const auto next_acted = agent.act(r.next);
      rec.next_attention_query = controller::acting_position(r.next);
      rec.next_attention = controller::mean_attention_row(next_acted.attention, rec.next_attention_query);
      rec.layer = layer_to_json(r.layer);
      rec.arch = arch_to_json(r.next.arch);
      rec.digest = arch_hash(r.next.arch);
      rec.reward = r.reward;
      rec.overall_accuracy = r.outcome.overall_accuracy;
      rec.batch_accuracies = r.outcome.batch_accuracies;
      rec.done = r.done;
      rec.stop_reason = to_string(r.reason);
      rec.t_end = detail::seconds_since(t0, time_offset);
      out.records.push_back(std::move(rec));
      out.transitions.push_back({state, action, r.reward, r.next, r.done});
      state = std::move(r.next);
      if (out.transitions.back().done) break;
    }
    return out;
  };

  result.stopped_by = "episodes";
  for (std::size_t episode = start_episode; episode < cfg.episodes; ++episode) {
    const bool explore = episode < cfg.exploration_episodes;
    const double sigma = explore ? cfg.ddpg.noise_sigma * std::pow(cfg.ddpg.noise_decay, static_cast<double>(episode)) : 0.0;

    // Rollout phase: actor parameters are only read until the barrier.
    std::vector<detail::RolloutResult> rollouts(cfg.models_per_episode);
    std::vector<std::exception_ptr> errors(workers);
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          try {
            for (std::size_t r = w; r < cfg.models_per_episode; r += workers) {
              rollouts[r] = run_rollout(episode, r, sigma, explore);
            }
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
    }
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }

    // Barrier passed: log in rollout order and feed the buffer.
    double return_sum = 0.0;
    double episode_best = 0.0;
    std::size_t transitions = 0;
    for (std::size_t r = 0; r < rollouts.size(); ++r) {
      double ret = 0.0;
      for (const auto& rec : rollouts[r].records) {
        log->write(step_to_json(rec));
        result.rewards.push_back(rec.reward);
        ret += rec.reward;
        episode_best = std::max(episode_best, rec.overall_accuracy);
        if (rec.overall_accuracy > result.best_accuracy) {
          result.best_accuracy = rec.overall_accuracy;
          result.best_digest = rec.digest;
          result.best_arch = rec.arch;
        }
      }
      for (const auto& msg : rollouts[r].incidents) {
        log->write({{"type", "incident"}, {"episode", episode}, {"rollout", r}, {"message", msg}});
        ++result.incidents;
      }
      return_sum += ret;
      if (explore || cfg.exploit_buffer_writes) {
        for (auto& t : rollouts[r].transitions) {
          buffer.push(std::move(t));
          ++transitions;
        }
      }
    }

    // Update phase: exclusive parameter mutation.
    const bool may_update = cfg.policy == PolicyMode::Ddpg && (explore || cfg.exploit_updates) &&
                            buffer.size() >= cfg.warmup() && buffer.size() >= cfg.ddpg.batch_size;
    if (may_update) {
      for (std::size_t round = 0; round < cfg.opt_rounds_per_episode; ++round) {
        for (std::size_t k = 0; k < cfg.steps_per_round; ++k) {
          core::Rng rng(core::derive_seed({cfg.seed, 0x5A, episode, round, k}));
          const auto batch = buffer.sample(cfg.ddpg.batch_size, rng);
          const auto stats = agent.update(batch);
          log->write({{"type", "update"},
                      {"episode", episode},
                      {"round", round},
                      {"step", k},
                      {"critic_loss", stats.critic_loss},
                      {"actor_loss", stats.actor_loss},
                      {"grads_finite", stats.grads_finite}});
          if (!stats.grads_finite) {
            log->write({{"type", "incident"}, {"episode", episode}, {"message", "non-finite gradient; step skipped"}});
            ++result.incidents;
          }
        }
      }
    }

    EpisodeSummary es{episode, explore ? "explore" : "exploit", sigma,
                      return_sum / static_cast<double>(cfg.models_per_episode), episode_best, transitions};
    result.episodes.push_back(es);
    const double elapsed = detail::seconds_since(t0, time_offset);
    log->write({{"type", "episode"},
                {"episode", episode},
                {"phase", es.phase},
                {"sigma", sigma},
                {"mean_return", es.mean_return},
                {"best_accuracy", es.best_accuracy},
                {"transitions", transitions},
                {"buffer_size", buffer.size()},
                {"updated", may_update},
                {"evaluations", eval->evaluations()},
                {"elapsed_s", elapsed}});
    result.episodes_completed = episode + 1;

    if (cfg.checkpoint_every > 0 && (episode + 1) % cfg.checkpoint_every == 0) {
      detail::write_json_atomic(ckpt_path, {{"config", config_to_json(cfg)},
                                            {"episode", episode},
                                            {"agent", agent.to_json()},
                                            {"buffer", buffer.to_json()}});
    }
    if (cfg.wallclock_budget_s > 0.0 && elapsed >= cfg.wallclock_budget_s) {
      result.stopped_by = "wallclock";
      break;
    }
  }

  result.evaluations = eval->evaluations();
  log->write({{"type", "summary"},
              {"episodes_completed", result.episodes_completed},
              {"stopped_by", result.stopped_by},
              {"best_accuracy", result.best_accuracy},
              {"best_digest", result.best_digest},
              {"best_arch", result.best_arch},
              {"evaluations", result.evaluations},
              {"incidents", result.incidents},
              {"elapsed_s", detail::seconds_since(t0, time_offset)}});
  return result;
}

}  // namespace trlhpo::analysis

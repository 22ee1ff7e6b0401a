#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trlhpo/search_space.hpp"

namespace trlhpo::analysis {

inline constexpr int kRunLogVersion = 1;

/// One generated layer: what the actor proposed, what was built, how it scored.
struct StepRecord {
  std::size_t episode = 0;
  std::size_t rollout = 0;
  std::size_t step = 0;
  std::string phase;  // "explore" | "exploit"
  std::array<double, 4> action{};
  nlohmann::json layer;  // canonical layer object
  nlohmann::json arch;   // canonical architecture after this step
  std::string digest;
  double reward = 0.0;
  double overall_accuracy = 0.0;
  std::vector<double> batch_accuracies;
  /// Head-averaged final-block attention of the acting query (row `attention_query`).
  std::vector<double> attention;
  std::size_t attention_query = 0;
  /// Same, recomputed on the successor state; its query sees this step's slot.
  std::vector<double> next_attention;
  std::size_t next_attention_query = 0;
  bool done = false;
  std::string stop_reason;
  double t_start = 0.0;
  double t_end = 0.0;
};

inline nlohmann::json step_to_json(const StepRecord& s) {
  return {{"type", "step"},
          {"episode", s.episode},
          {"rollout", s.rollout},
          {"step", s.step},
          {"phase", s.phase},
          {"action", s.action},
          {"layer", s.layer},
          {"arch", s.arch},
          {"digest", s.digest},
          {"reward", s.reward},
          {"overall_accuracy", s.overall_accuracy},
          {"batch_accuracies", s.batch_accuracies},
          {"attention", s.attention},
          {"attention_query", s.attention_query},
          {"next_attention", s.next_attention},
          {"next_attention_query", s.next_attention_query},
          {"done", s.done},
          {"stop_reason", s.stop_reason},
          {"t_start", s.t_start},
          {"t_end", s.t_end}};
}

inline StepRecord step_from_json(const nlohmann::json& j) {
  StepRecord s;
  s.episode = j.at("episode").get<std::size_t>();
  s.rollout = j.at("rollout").get<std::size_t>();
  s.step = j.at("step").get<std::size_t>();
  s.phase = j.value("phase", std::string{});
  s.action = j.at("action").get<std::array<double, 4>>();
  s.layer = j.at("layer");
  s.arch = j.at("arch");
  s.digest = j.at("digest").get<std::string>();
  s.reward = j.at("reward").get<double>();
  s.overall_accuracy = j.at("overall_accuracy").get<double>();
  s.batch_accuracies = j.value("batch_accuracies", std::vector<double>{});
  s.attention = j.value("attention", std::vector<double>{});
  s.attention_query = j.value("attention_query", std::size_t{0});
  s.next_attention = j.value("next_attention", std::vector<double>{});
  s.next_attention_query = j.value("next_attention_query", std::size_t{0});
  s.done = j.at("done").get<bool>();
  s.stop_reason = j.value("stop_reason", std::string{});
  s.t_start = j.at("t_start").get<double>();
  s.t_end = j.at("t_end").get<double>();
  return s;
}

inline std::string layer_kind(const StepRecord& s) { return s.layer.at("kind").get<std::string>(); }

/// Parsed run log. Lines of unknown type are kept in `other`.
struct RunLog {
  nlohmann::json header;
  std::vector<StepRecord> steps;
  std::vector<nlohmann::json> updates;
  std::vector<nlohmann::json> incidents;
  std::vector<nlohmann::json> episodes;
  std::optional<nlohmann::json> summary;
  std::vector<nlohmann::json> other;
  /// A final line that failed to parse (interrupted write).
  bool torn_tail = false;
};

inline void add_record(RunLog& log, const nlohmann::json& j) {
  const auto type = j.value("type", std::string{});
  if (type == "header") log.header = j;
  else if (type == "step") log.steps.push_back(step_from_json(j));
  else if (type == "update") log.updates.push_back(j);
  else if (type == "incident") log.incidents.push_back(j);
  else if (type == "episode") log.episodes.push_back(j);
  else if (type == "summary") log.summary = j;
  else log.other.push_back(j);
}

/// Reads a JSON-lines run log. A malformed final line is tolerated and flagged;
/// a malformed line anywhere else is an error.
inline RunLog read_run_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("run log: cannot open " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) lines.push_back(std::move(line));
  }
  RunLog log;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto j = nlohmann::json::parse(lines[i], nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      if (i + 1 == lines.size()) {
        log.torn_tail = true;
        break;
      }
      throw std::runtime_error("run log: " + path.string() + ":" + std::to_string(i + 1) + " is not a JSON object");
    }
    add_record(log, j);
  }
  return log;
}

/// Single append-only writer shared by the orchestrator. Each record is one
/// line, flushed before `write` returns.
class RunLogWriter {
 public:
  RunLogWriter(const std::filesystem::path& path, bool append) : path_(path) {
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw std::runtime_error("run log: cannot open " + path.string() + " for writing");
  }

  void write(const nlohmann::json& record) {
    std::lock_guard lock(mutex_);
    out_ << record.dump() << '\n';
    out_.flush();
    if (!out_) throw std::runtime_error("run log: write failed for " + path_.string());
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::mutex mutex_;
};

}  // namespace trlhpo::analysis

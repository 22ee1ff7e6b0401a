#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "trlhpo/evaluator/outcome.hpp"
#include "trlhpo/search_space.hpp"

namespace trlhpo::evaluator {

class CacheError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Outcome store keyed by architecture digest, optionally persisted as
/// append-only JSON lines: {"digest": ..., "evaluator": ..., "outcome": {...}}.
///
/// Entries written by a different evaluator fingerprint are ignored on load.
/// A torn final line (interrupted write) is skipped; earlier lines stay valid.
class EvalCache {
 public:
  /// In-memory cache.
  explicit EvalCache(std::string evaluator = "") : evaluator_(std::move(evaluator)) {}

  EvalCache(const std::filesystem::path& path, std::string evaluator) : path_(path), evaluator_(std::move(evaluator)) {
    if (std::filesystem::exists(path)) {
      std::ifstream in(path);
      if (!in) throw CacheError("cache: cannot read " + path.string());
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("digest") || !j.contains("outcome")) continue;
        if (j.value("evaluator", std::string{}) != evaluator_) continue;
        entries_.emplace(j.at("digest").get<std::string>(), outcome_from_json(j.at("outcome")));
      }
    }
    out_.open(path, std::ios::app);
    if (!out_) throw CacheError("cache: cannot open " + path.string() + " for append");
  }

  std::optional<EvalOutcome> lookup(const std::string& digest) const {
    std::shared_lock lock(mutex_);
    if (auto it = entries_.find(digest); it != entries_.end()) return it->second;
    return std::nullopt;
  }

  /// Stores `o` unless the digest is already present. Returns true if added.
  bool store(const std::string& digest, const EvalOutcome& o) {
    std::unique_lock lock(mutex_);
    if (entries_.contains(digest)) return false;
    if (out_.is_open()) {
      nlohmann::json j{{"digest", digest}, {"evaluator", evaluator_}, {"outcome", outcome_to_json(o)}};
      out_ << j.dump() << '\n';
      out_.flush();
      if (!out_) throw CacheError("cache: write failed for " + path_.string());
    }
    entries_.emplace(digest, o);
    return true;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
  }

  const std::string& evaluator() const { return evaluator_; }

 private:
  std::filesystem::path path_;
  std::string evaluator_;
  std::unordered_map<std::string, EvalOutcome> entries_;
  std::ofstream out_;
  mutable std::shared_mutex mutex_;
};

/// Cache-through evaluation. With a null cache this is plain evaluation.
inline EvalOutcome eval_cached(const ArchSpec& arch, Evaluator& evaluator, EvalCache* cache) {
  if (!cache) return evaluator.evaluate(arch);
  const auto digest = arch_hash(arch);
  if (auto hit = cache->lookup(digest)) return *hit;
  auto outcome = evaluator.evaluate(arch);
  cache->store(digest, outcome);
  return outcome;
}

}  // namespace trlhpo::evaluator

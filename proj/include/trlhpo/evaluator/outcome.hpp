#pragma once

#include <atomic>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trlhpo/search_space.hpp"

namespace trlhpo::evaluator {

inline constexpr std::size_t kProfileBatches = 32;
inline constexpr std::size_t kProfileBatchSize = 16;

/// Validation result for one candidate.
struct EvalOutcome {
  double overall_accuracy = 0.0;
  std::vector<double> batch_accuracies;
  double train_time_s = 0.0;
  std::size_t param_count = 0;
  bool diverged = false;

  /// Wall-clock time is excluded: two runs of the same candidate compare
  /// equal when every measured quantity matches.
  bool operator==(const EvalOutcome& o) const {
    return overall_accuracy == o.overall_accuracy && batch_accuracies == o.batch_accuracies &&
           param_count == o.param_count && diverged == o.diverged;
  }
};

inline nlohmann::json outcome_to_json(const EvalOutcome& o) {
  return {{"overall_accuracy", o.overall_accuracy},
          {"batch_accuracies", o.batch_accuracies},
          {"train_time_s", o.train_time_s},
          {"param_count", o.param_count},
          {"diverged", o.diverged}};
}

inline EvalOutcome outcome_from_json(const nlohmann::json& j) {
  EvalOutcome o;
  o.overall_accuracy = j.at("overall_accuracy").get<double>();
  o.batch_accuracies = j.at("batch_accuracies").get<std::vector<double>>();
  o.train_time_s = j.at("train_time_s").get<double>();
  o.param_count = j.at("param_count").get<std::size_t>();
  o.diverged = j.at("diverged").get<bool>();
  return o;
}

/// Per-batch accuracy over consecutive batches of `order`.
/// `predicted` and `labels` are indexed by validation sample.
inline std::vector<double> validate_batches(std::span<const int> predicted, std::span<const int> labels,
                                            std::span<const std::size_t> order,
                                            std::size_t n_batches = kProfileBatches,
                                            std::size_t batch_size = kProfileBatchSize) {
  if (predicted.size() != labels.size()) throw std::invalid_argument("validate_batches: prediction/label count differs");
  if (order.size() < n_batches * batch_size) {
    throw std::invalid_argument("validate_batches: need " + std::to_string(n_batches * batch_size) +
                                " validation samples, have " + std::to_string(order.size()));
  }
  std::vector<double> acc(n_batches);
  for (std::size_t b = 0; b < n_batches; ++b) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < batch_size; ++i) {
      const auto idx = order[b * batch_size + i];
      hits += predicted[idx] == labels[idx] ? 1 : 0;
    }
    acc[b] = static_cast<double>(hits) / static_cast<double>(batch_size);
  }
  return acc;
}

/// Anything that turns an architecture into an EvalOutcome.
class Evaluator {
 public:
  virtual ~Evaluator() = default;
  virtual EvalOutcome evaluate(const ArchSpec& arch) = 0;
  /// Identifies the evaluator and its settings; cache entries are scoped by it.
  virtual std::string fingerprint() const = 0;

  /// Number of evaluations actually performed (cache hits excluded).
  std::size_t evaluations() const { return evaluations_.load(); }

 protected:
  void count_evaluation() { ++evaluations_; }

 private:
  std::atomic<std::size_t> evaluations_{0};
};

}  // namespace trlhpo::evaluator

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "trlhpo/core/random.hpp"
#include "trlhpo/environment.hpp"

namespace trlhpo::controller {

/// Bounded FIFO of transitions with uniform sampling without replacement.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("replay buffer: capacity must be positive");
    items_.reserve(capacity);
  }

  void push(Transition t) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(t));
    } else {
      items_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool full() const { return items_.size() == capacity_; }

  /// Oldest-first view, index 0 is the oldest retained transition.
  const Transition& at(std::size_t i) const { return items_[(head_ + i) % items_.size()]; }

  std::vector<Transition> sample(std::size_t batch, core::Rng& rng) const {
    if (batch > items_.size()) {
      throw std::logic_error("replay buffer: cannot sample " + std::to_string(batch) + " from " +
                             std::to_string(items_.size()) + " transitions");
    }
    std::vector<std::size_t> idx(items_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::vector<Transition> out;
    out.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng() % (idx.size() - i));
      std::swap(idx[i], idx[j]);
      out.push_back(items_[idx[i]]);
    }
    return out;
  }

  nlohmann::json to_json() const {
    auto arr = nlohmann::json::array();
    for (std::size_t i = 0; i < size(); ++i) arr.push_back(transition_to_json(at(i)));
    return {{"capacity", capacity_}, {"items", arr}};
  }

  static ReplayBuffer from_json(const nlohmann::json& j) {
    ReplayBuffer b(j.at("capacity").get<std::size_t>());
    for (const auto& t : j.at("items")) b.push(transition_from_json(t));
    return b;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<Transition> items_;
};

}  // namespace trlhpo::controller

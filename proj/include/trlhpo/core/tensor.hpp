#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace trlhpo::core {

using Real = double;
using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {
struct TensorNode {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;
  bool requires_grad = false;
};
}  // namespace detail

/// Shared handle to a dense row-major array.
///
/// Copies share storage. Values are treated as immutable once an op has
/// consumed them; only parameter tensors are mutated, and only between
/// tape lifetimes (see Adam and soft updates).
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<Real> data, bool requires_grad = false)
      : node_(std::make_shared<detail::TensorNode>()) {
    if (shape.empty()) shape = {1};
    for (auto d : shape) {
      if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<Real>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, Real value, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<Real>(n, value), requires_grad);
  }

  static Tensor scalar(Real value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const Real> data() const { return node_->data; }
  std::span<Real> mutable_data() { return node_->data; }
  Real operator[](std::size_t i) const { return node_->data[i]; }

  Real item() const {
    if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not scalar");
    return node_->data[0];
  }

  /// Gradient buffer of the most recent backward pass; empty if never reached.
  std::span<const Real> grad() const { return node_->grad; }
  std::span<Real> mutable_grad() { return node_->grad; }

  /// Deep copy detached from any graph.
  Tensor clone(bool requires_grad = false) const {
    return Tensor(shape(), node_->data, requires_grad);
  }

  const void* id() const { return node_.get(); }

 private:
  friend class GradTape;
  friend void accumulate_grad(const Tensor& t, std::size_t i, Real g);
  friend std::vector<Real>& grad_buffer(const Tensor& t);
  std::shared_ptr<detail::TensorNode> node_;
};

// Handles share their node, so a const handle still reaches the buffer.
inline std::vector<Real>& grad_buffer(const Tensor& t) {
  if (t.node_->grad.size() != t.node_->data.size()) t.node_->grad.assign(t.node_->data.size(), 0.0);
  return t.node_->grad;
}

inline void accumulate_grad(const Tensor& t, std::size_t i, Real g) { grad_buffer(t)[i] += g; }

/// Ordered record of differentiable operations.
///
/// Entries are appended in execution order, so inputs always precede the
/// operations that consume them. A tape belongs to one thread; activate it
/// with TapeScope.
class GradTape {
 public:
  using BackwardFn = std::function<void()>;

  struct Entry {
    std::string op;
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  void record(std::string_view op, std::vector<Tensor> inputs, Tensor output, BackwardFn fn) {
    entries_.push_back(Entry{std::string(op), std::move(inputs), std::move(output), std::move(fn)});
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

  /// Reverse-mode sweep from a scalar loss.
  ///
  /// Returns one gradient per entry of `params`, shaped like the parameter;
  /// parameters the loss does not reach get zeros.
  std::vector<Tensor> backward(const Tensor& loss, std::span<const Tensor> params) {
    if (loss.numel() != 1) {
      throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    std::unordered_set<const void*> seen;
    auto reset = [&seen](const Tensor& t) {
      if (seen.insert(t.id()).second) t.node_->grad.assign(t.numel(), 0.0);
    };
    for (const auto& e : entries_) {
      for (const auto& in : e.inputs) reset(in);
      reset(e.output);
    }
    reset(loss);
    loss.node_->grad[0] = 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();

    std::vector<Tensor> grads;
    grads.reserve(params.size());
    for (const auto& p : params) {
      if (seen.contains(p.id())) {
        grads.emplace_back(p.shape(), p.node_->grad);
      } else {
        grads.push_back(Tensor::zeros(p.shape()));
      }
    }
    return grads;
  }

 private:
  std::vector<Entry> entries_;
};

namespace detail {
inline GradTape*& active_tape_slot() {
  thread_local GradTape* tape = nullptr;
  return tape;
}
}  // namespace detail

inline GradTape* active_tape() { return detail::active_tape_slot(); }

/// Makes `tape` the recording target for the current thread until destruction.
class TapeScope {
 public:
  explicit TapeScope(GradTape& tape) : previous_(detail::active_tape_slot()) {
    detail::active_tape_slot() = &tape;
  }
  ~TapeScope() { detail::active_tape_slot() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape* previous_;
};

/// Convenience wrapper matching the free-function form used in tests.
inline std::vector<Tensor> backward(GradTape& tape, const Tensor& loss,
                                    std::span<const Tensor> params) {
  return tape.backward(loss, params);
}

}  // namespace trlhpo::core

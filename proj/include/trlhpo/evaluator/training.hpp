#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "trlhpo/core/adam.hpp"
#include "trlhpo/core/checkpoint.hpp"
#include "trlhpo/core/ops.hpp"
#include "trlhpo/core/random.hpp"
#include "trlhpo/evaluator/mnist.hpp"
#include "trlhpo/evaluator/outcome.hpp"
#include "trlhpo/search_space.hpp"

namespace trlhpo::evaluator {

using core::Tensor;
namespace ops = core::ops;

// Standardization constants of the MNIST training pixels.
inline constexpr double kPixelMean = 0.1307;
inline constexpr double kPixelStd = 0.3081;

inline Tensor apply_activation(const Tensor& x, Activation a) {
  switch (a) {
    case Activation::None: return x;
    case Activation::Relu: return ops::relu(x);
    case Activation::LeakyRelu: return ops::leaky_relu(x);
    case Activation::Tanh: return ops::tanh(x);
    case Activation::Sigmoid: return ops::sigmoid(x);
    case Activation::Elu: return ops::elu(x);
    case Activation::Gelu: return ops::gelu(x);
  }
  return x;
}

/// Concrete network for a ModelPlan. Convolutions are followed by ReLU.
class CnnModel {
 public:
  CnnModel(ModelPlan plan, core::Rng& rng) : plan_(std::move(plan)) {
    FeatureShape in = plan_.arch.input_shape();
    for (std::size_t i = 0; i < plan_.arch.size(); ++i) {
      const auto& layer = plan_.arch.layers()[i];
      const std::string prefix = "layer" + std::to_string(i) + ".";
      if (const auto* c = std::get_if<ConvLayer>(&layer)) {
        const std::size_t fan_in = static_cast<std::size_t>(in.channels * c->kernel * c->kernel);
        add(prefix + "weight",
            core::normal_tensor({static_cast<std::size_t>(c->filters), static_cast<std::size_t>(in.channels),
                                 static_cast<std::size_t>(c->kernel), static_cast<std::size_t>(c->kernel)},
                                rng, std::sqrt(2.0 / static_cast<double>(fan_in)), true));
        add(prefix + "bias", Tensor::zeros({static_cast<std::size_t>(c->filters)}, true));
      } else if (const auto* d = std::get_if<DenseLayer>(&layer)) {
        const std::size_t fan_in = in.size();
        add(prefix + "weight", core::normal_tensor({fan_in, static_cast<std::size_t>(d->neurons)}, rng,
                                                   std::sqrt(2.0 / static_cast<double>(fan_in)), true));
        if (d->bias) add(prefix + "bias", Tensor::zeros({static_cast<std::size_t>(d->neurons)}, true));
      }
      in = plan_.arch.shapes()[i];
    }
    const auto classes = static_cast<std::size_t>(plan_.num_classes);
    add("head.weight", core::normal_tensor({plan_.head_inputs, classes}, rng,
                                           std::sqrt(1.0 / static_cast<double>(plan_.head_inputs)), true));
    add("head.bias", Tensor::zeros({classes}, true));
  }

  const ModelPlan& plan() const { return plan_; }
  const core::ParamList& params() const { return params_; }
  core::ParamList& params() { return params_; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  /// x[N, C, H, W] -> logits[N, num_classes].
  Tensor forward(const Tensor& x) const {
    Tensor h = x;
    std::size_t next = 0;
    for (const auto& layer : plan_.arch.layers()) {
      if (const auto* c = std::get_if<ConvLayer>(&layer)) {
        const auto& w = params_[next++].value;
        const auto& b = params_[next++].value;
        h = ops::relu(ops::conv2d(h, w, b, static_cast<std::size_t>(c->stride)));
      } else if (const auto* p = std::get_if<PoolLayer>(&layer)) {
        h = ops::maxpool2d(h, static_cast<std::size_t>(p->kernel), static_cast<std::size_t>(p->stride),
                           static_cast<std::size_t>(p->padding));
      } else {
        const auto& d = std::get<DenseLayer>(layer);
        if (h.rank() != 2) h = ops::flatten(h);
        h = ops::matmul(h, params_[next++].value);
        if (d.bias) h = ops::add_bias(h, params_[next++].value);
        h = apply_activation(h, d.activation);
      }
    }
    if (h.rank() != 2) h = ops::flatten(h);
    h = ops::matmul(h, params_[next].value);
    return ops::add_bias(h, params_[next + 1].value);
  }

 private:
  void add(std::string name, Tensor t) { params_.push_back({std::move(name), std::move(t)}); }

  ModelPlan plan_;
  core::ParamList params_;
};

/// Packs the listed images into a standardized [N, 1, rows, cols] tensor.
inline Tensor image_batch(const ImageSet& set, std::span<const std::size_t> indices) {
  const std::size_t px = set.image_size();
  std::vector<double> v(indices.size() * px);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const double* src = set.image(indices[b]);
    for (std::size_t i = 0; i < px; ++i) v[b * px + i] = (src[i] - kPixelMean) / kPixelStd;
  }
  return Tensor({indices.size(), 1, set.rows, set.cols}, std::move(v));
}

inline std::vector<int> predict(const CnnModel& model, const ImageSet& set, std::size_t chunk = 256) {
  std::vector<int> out(set.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size(); start += chunk) {
    const std::size_t end = std::min(set.size(), start + chunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor logits = model.forward(image_batch(set, idx));
    const std::size_t c = logits.dim(1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < c; ++j) {
        if (logits[i * c + j] > logits[i * c + best]) best = j;
      }
      out[start + i] = static_cast<int>(best);
    }
  }
  return out;
}

struct TrainBudget {
  std::size_t epochs = 1;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

inline nlohmann::json budget_to_json(const TrainBudget& b) {
  return {{"epochs", b.epochs}, {"batch_size", b.batch_size}, {"lr", b.lr}, {"seed", b.seed}};
}

/// Trains `arch` plus the classification head with Adam on cross-entropy and
/// scores it on the validation split. Deterministic for a given budget.seed.
inline EvalOutcome train_candidate(const ArchSpec& arch, const Dataset& data, const TrainBudget& budget) {
  const auto started = std::chrono::steady_clock::now();
  core::Rng rng(budget.seed);
  CnnModel model(build_model(arch, 10), rng);
  auto params = core::tensors_of(model.params());
  core::AdamState adam(core::AdamConfig{.lr = budget.lr}, params);

  EvalOutcome outcome;
  outcome.param_count = model.param_count();
  const std::size_t n = data.train.size();
  const std::size_t bs = std::max<std::size_t>(1, budget.batch_size);
  for (std::size_t epoch = 0; epoch < budget.epochs && !outcome.diverged; ++epoch) {
    const auto order = shuffled_indices(n, core::derive_seed({budget.seed, 0xE90C, epoch}));
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<int> labels;
      labels.reserve(idx.size());
      for (auto i : idx) labels.push_back(data.train.labels[i]);

      core::GradTape tape;
      core::TapeScope scope(tape);
      const Tensor loss = ops::cross_entropy(model.forward(image_batch(data.train, idx)), labels);
      if (!std::isfinite(loss.item())) {
        outcome.diverged = true;
        break;
      }
      const auto grads = tape.backward(loss, params);
      core::adam_step(params, grads, adam);
    }
  }

  if (!outcome.diverged) {
    for (const auto& p : params) {
      for (double v : p.data()) {
        if (!std::isfinite(v)) outcome.diverged = true;
      }
    }
  }
  if (outcome.diverged) {
    outcome.overall_accuracy = 0.0;
    outcome.batch_accuracies.assign(kProfileBatches, 0.0);
  } else {
    const auto pred = predict(model, data.validation);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.validation.labels[i] ? 1 : 0;
    outcome.overall_accuracy = static_cast<double>(hits) / static_cast<double>(pred.size());
    outcome.batch_accuracies = validate_batches(pred, data.validation.labels, data.profile_order);
  }
  outcome.train_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return outcome;
}

/// Real evaluator: trains each candidate on MNIST. The training seed is
/// derived from the architecture digest so results do not depend on the
/// order in which candidates are evaluated.
class TrainingEvaluator : public Evaluator {
 public:
  TrainingEvaluator(std::shared_ptr<const Dataset> data, TrainBudget budget)
      : data_(std::move(data)), budget_(budget) {}

  EvalOutcome evaluate(const ArchSpec& arch) override {
    count_evaluation();
    TrainBudget b = budget_;
    b.seed = core::derive_seed({budget_.seed, std::stoull(arch_hash(arch), nullptr, 16)});
    return train_candidate(arch, *data_, b);
  }

  std::string fingerprint() const override {
    return "train:" + budget_to_json(budget_).dump() + ":n" + std::to_string(data_->train.size()) + "/" +
           std::to_string(data_->validation.size());
  }

  const Dataset& data() const { return *data_; }

 private:
  std::shared_ptr<const Dataset> data_;
  TrainBudget budget_;
};

}  // namespace trlhpo::evaluator

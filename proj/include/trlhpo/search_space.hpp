#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace trlhpo {

// ---------------------------------------------------------------------------
// Hyper-parameter grids. Index order is significant: actions map onto these
// lists by position.
// ---------------------------------------------------------------------------

enum class Activation { None, Relu, LeakyRelu, Tanh, Sigmoid, Elu, Gelu };

namespace grid {

inline const std::vector<int>& conv_filters() {
  static const std::vector<int> v = [] {
    std::vector<int> out;
    for (int f = 8; f <= 128; f += 8) out.push_back(f);
    return out;
  }();
  return v;
}
inline const std::vector<int>& conv_kernels() {
  static const std::vector<int> v{3, 5, 7};
  return v;
}
inline const std::vector<int>& conv_strides() {
  static const std::vector<int> v{1, 2, 3};
  return v;
}
inline const std::vector<int>& fcl_neurons() {
  static const std::vector<int> v = [] {
    std::vector<int> out;
    for (int n = 16; n <= 512; n += 8) out.push_back(n);
    return out;
  }();
  return v;
}
inline const std::vector<bool>& fcl_bias() {
  static const std::vector<bool> v{false, true};
  return v;
}
inline const std::vector<Activation>& fcl_activations() {
  static const std::vector<Activation> v{Activation::None, Activation::Relu,    Activation::LeakyRelu,
                                         Activation::Tanh, Activation::Sigmoid, Activation::Elu,
                                         Activation::Gelu};
  return v;
}
inline const std::vector<int>& pool_kernels() {
  static const std::vector<int> v{2, 3, 4, 5, 6, 7, 8};
  return v;
}
inline const std::vector<int>& pool_strides() {
  static const std::vector<int> v{1, 2, 3};
  return v;
}
inline const std::vector<int>& pool_paddings() {
  static const std::vector<int> v{0, 1, 2, 3};
  return v;
}

/// Position in a list of n values selected by a in [0, 1].
inline std::size_t index_for(double a, std::size_t n) {
  const auto raw = static_cast<std::size_t>(std::floor(std::clamp(a, 0.0, 1.0) * static_cast<double>(n)));
  return std::min(raw, n - 1);
}

template <class T>
bool contains(const std::vector<T>& values, const T& v) {
  return std::find(values.begin(), values.end(), v) != values.end();
}

}  // namespace grid

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::None: return "None";
    case Activation::Relu: return "relu";
    case Activation::LeakyRelu: return "leakyrelu";
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Elu: return "elu";
    case Activation::Gelu: return "gelu";
  }
  return "None";
}

inline Activation activation_from_string(const std::string& s) {
  for (auto a : grid::fcl_activations()) {
    if (s == to_string(a)) return a;
  }
  throw std::invalid_argument("unknown activation '" + s + "'");
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

enum class LayerKind { Conv2D, FCL, MaxPool };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv2D: return "Conv2D";
    case LayerKind::FCL: return "FCL";
    case LayerKind::MaxPool: return "MaxPool";
  }
  return "?";
}

inline LayerKind kind_from_string(const std::string& s) {
  if (s == "Conv2D") return LayerKind::Conv2D;
  if (s == "FCL") return LayerKind::FCL;
  if (s == "MaxPool") return LayerKind::MaxPool;
  throw std::invalid_argument("unknown layer kind '" + s + "'");
}

struct ConvLayer {
  int filters = 8;
  int kernel = 3;
  int stride = 1;
  bool operator==(const ConvLayer&) const = default;
};

struct DenseLayer {
  int neurons = 16;
  bool bias = true;
  Activation activation = Activation::None;
  bool operator==(const DenseLayer&) const = default;
};

struct PoolLayer {
  int kernel = 2;
  int stride = 1;
  int padding = 0;
  bool operator==(const PoolLayer&) const = default;
};

using LayerSpec = std::variant<ConvLayer, DenseLayer, PoolLayer>;

inline LayerKind kind_of(const LayerSpec& l) {
  return std::visit(
      [](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ConvLayer>) return LayerKind::Conv2D;
        else if constexpr (std::is_same_v<T, DenseLayer>) return LayerKind::FCL;
        else return LayerKind::MaxPool;
      },
      l);
}

/// True iff every hyper-parameter is a member of its grid.
inline bool in_grid(const LayerSpec& l) {
  if (const auto* c = std::get_if<ConvLayer>(&l)) {
    return grid::contains(grid::conv_filters(), c->filters) && grid::contains(grid::conv_kernels(), c->kernel) &&
           grid::contains(grid::conv_strides(), c->stride);
  }
  if (const auto* d = std::get_if<DenseLayer>(&l)) {
    return grid::contains(grid::fcl_neurons(), d->neurons) && grid::contains(grid::fcl_activations(), d->activation);
  }
  const auto& p = std::get<PoolLayer>(l);
  return grid::contains(grid::pool_kernels(), p.kernel) && grid::contains(grid::pool_strides(), p.stride) &&
         grid::contains(grid::pool_paddings(), p.padding);
}

inline nlohmann::json layer_to_json(const LayerSpec& l) {
  return std::visit(
      [](const auto& v) -> nlohmann::json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ConvLayer>) {
          return {{"kind", "Conv2D"}, {"filters", v.filters}, {"kernel", v.kernel}, {"stride", v.stride}};
        } else if constexpr (std::is_same_v<T, DenseLayer>) {
          return {{"kind", "FCL"}, {"neurons", v.neurons}, {"bias", v.bias}, {"activation", to_string(v.activation)}};
        } else {
          return {{"kind", "MaxPool"}, {"kernel", v.kernel}, {"stride", v.stride}, {"padding", v.padding}};
        }
      },
      l);
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
  switch (kind_from_string(j.at("kind").get<std::string>())) {
    case LayerKind::Conv2D:
      return ConvLayer{j.at("filters").get<int>(), j.at("kernel").get<int>(), j.at("stride").get<int>()};
    case LayerKind::FCL:
      return DenseLayer{j.at("neurons").get<int>(), j.at("bias").get<bool>(),
                        activation_from_string(j.at("activation").get<std::string>())};
    case LayerKind::MaxPool:
      return PoolLayer{j.at("kernel").get<int>(), j.at("stride").get<int>(), j.at("padding").get<int>()};
  }
  throw std::invalid_argument("layer_from_json: bad kind");
}

inline std::string describe(const LayerSpec& l) {
  char buf[96];
  if (const auto* c = std::get_if<ConvLayer>(&l)) {
    std::snprintf(buf, sizeof buf, "Conv2D(%d,%d,%d)", c->filters, c->kernel, c->stride);
  } else if (const auto* d = std::get_if<DenseLayer>(&l)) {
    std::snprintf(buf, sizeof buf, "FCL(%d,%s,%s)", d->neurons, d->bias ? "T" : "F", to_string(d->activation));
  } else {
    const auto& p = std::get<PoolLayer>(l);
    std::snprintf(buf, sizeof buf, "MaxPool(%d,%d,%d)", p.kernel, p.stride, p.padding);
  }
  return buf;
}

// ---------------------------------------------------------------------------
// Shapes
// ---------------------------------------------------------------------------

/// Feature-map shape: (channels, height, width) on a grid, or a flat vector
/// of `channels` features.
struct FeatureShape {
  int channels = 1;
  int height = 1;
  int width = 1;
  bool flat = false;

  static FeatureShape grid(int c, int h, int w) { return {c, h, w, false}; }
  static FeatureShape vector(int n) { return {n, 1, 1, true}; }

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  bool operator==(const FeatureShape&) const = default;
};

inline nlohmann::json shape_to_json(const FeatureShape& s) {
  if (s.flat) return nlohmann::json::array({s.channels});
  return nlohmann::json::array({s.channels, s.height, s.width});
}

inline FeatureShape shape_from_json(const nlohmann::json& j) {
  const auto dims = j.get<std::vector<int>>();
  if (dims.size() == 1) return FeatureShape::vector(dims[0]);
  if (dims.size() == 3) return FeatureShape::grid(dims[0], dims[1], dims[2]);
  throw std::invalid_argument("shape must have 1 or 3 dims, got " + j.dump());
}

inline std::string describe(const FeatureShape& s) {
  if (s.flat) return "(" + std::to_string(s.channels) + ")";
  return "(" + std::to_string(s.channels) + "," + std::to_string(s.height) + "," + std::to_string(s.width) + ")";
}

class ArchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Output shape after applying `layer`. Convolutions are unpadded.
inline FeatureShape propagate_shape(const FeatureShape& in, const LayerSpec& layer) {
  if (const auto* d = std::get_if<DenseLayer>(&layer)) {
    if (d->neurons <= 0) throw ArchError("FCL: non-positive neuron count");
    return FeatureShape::vector(d->neurons);
  }
  if (in.flat) throw ArchError(describe(layer) + " cannot follow flat input " + describe(in));
  int k = 0, s = 1, p = 0, channels = in.channels;
  if (const auto* c = std::get_if<ConvLayer>(&layer)) {
    k = c->kernel;
    s = c->stride;
    channels = c->filters;
  } else {
    const auto& pl = std::get<PoolLayer>(layer);
    k = pl.kernel;
    s = pl.stride;
    p = pl.padding;
  }
  if (s <= 0 || k <= 0) throw ArchError(describe(layer) + ": non-positive kernel or stride");
  const int span_h = in.height + 2 * p - k;
  const int span_w = in.width + 2 * p - k;
  if (span_h < 0 || span_w < 0) {
    throw ArchError(describe(layer) + " on " + describe(in) + " gives a non-positive output dimension");
  }
  return FeatureShape::grid(channels, span_h / s + 1, span_w / s + 1);
}

// ---------------------------------------------------------------------------
// Actions
// ---------------------------------------------------------------------------

/// Four actor outputs in [0, 1]: layer kind followed by three HP selectors.
struct ActionVector {
  std::array<double, 4> a{};

  static ActionVector clamped(std::array<double, 4> v) {
    for (auto& x : v) x = std::clamp(x, 0.0, 1.0);
    return {v};
  }
  bool valid() const {
    return std::all_of(a.begin(), a.end(), [](double x) { return x >= 0.0 && x <= 1.0; });
  }
  double operator[](std::size_t i) const { return a[i]; }
  bool operator==(const ActionVector&) const = default;
};

inline LayerKind kind_for(double a0) {
  switch (grid::index_for(a0, 3)) {
    case 0: return LayerKind::Conv2D;
    case 1: return LayerKind::FCL;
    default: return LayerKind::MaxPool;
  }
}

inline DenseLayer decode_dense(const ActionVector& a) {
  const auto& n = grid::fcl_neurons();
  const auto& acts = grid::fcl_activations();
  return DenseLayer{n[grid::index_for(a[1], n.size())], a[2] >= 0.5, acts[grid::index_for(a[3], acts.size())]};
}

/// Raw grid decode without regard to the input shape.
inline LayerSpec decode_raw(const ActionVector& a) {
  switch (kind_for(a[0])) {
    case LayerKind::Conv2D: {
      const auto& f = grid::conv_filters();
      const auto& k = grid::conv_kernels();
      const auto& s = grid::conv_strides();
      return ConvLayer{f[grid::index_for(a[1], f.size())], k[grid::index_for(a[2], k.size())],
                       s[grid::index_for(a[3], s.size())]};
    }
    case LayerKind::FCL:
      return decode_dense(a);
    case LayerKind::MaxPool: {
      const auto& k = grid::pool_kernels();
      const auto& s = grid::pool_strides();
      const auto& p = grid::pool_paddings();
      return PoolLayer{k[grid::index_for(a[1], k.size())], s[grid::index_for(a[2], s.size())],
                       p[grid::index_for(a[3], p.size())]};
    }
  }
  return decode_dense(a);
}

/// Repairs `layer` so it can be applied to `in`.
///
/// Grid layers on flat input become FCLs decoded from `source`. Oversized
/// kernels shrink to the largest grid value that fits; pooling padding is
/// capped at kernel / 2 so no window lies wholly in padding. When no kernel
/// fits, the layer becomes an FCL.
inline LayerSpec legalize(const LayerSpec& layer, const FeatureShape& in, const ActionVector& source) {
  if (kind_of(layer) == LayerKind::FCL) return layer;
  if (in.flat) return decode_dense(source);
  const int extent = std::min(in.height, in.width);
  if (const auto* c = std::get_if<ConvLayer>(&layer)) {
    const auto& ks = grid::conv_kernels();
    for (auto it = ks.rbegin(); it != ks.rend(); ++it) {
      if (*it <= c->kernel && *it <= extent) return ConvLayer{c->filters, *it, c->stride};
    }
    return decode_dense(source);
  }
  const auto& p = std::get<PoolLayer>(layer);
  const auto& ks = grid::pool_kernels();
  for (auto it = ks.rbegin(); it != ks.rend(); ++it) {
    const int k = *it;
    const int pad = std::min(p.padding, k / 2);
    if (k <= p.kernel && k <= extent + 2 * pad) return PoolLayer{k, p.stride, pad};
  }
  return decode_dense(source);
}

inline LayerSpec decode_action(const ActionVector& a, const FeatureShape& in) {
  return legalize(decode_raw(a), in, a);
}

// ---------------------------------------------------------------------------
// Architectures
// ---------------------------------------------------------------------------

inline constexpr std::size_t kMaxLayers = 6;

/// Ordered stack of generated layers with the feature-map shape after each.
class ArchSpec {
 public:
  ArchSpec() = default;
  explicit ArchSpec(FeatureShape input) : input_(input) {}

  ArchSpec(FeatureShape input, const std::vector<LayerSpec>& layers) : input_(input) {
    for (const auto& l : layers) append(l);
  }

  const FeatureShape& input_shape() const { return input_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const std::vector<FeatureShape>& shapes() const { return shapes_; }
  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  FeatureShape output_shape() const { return shapes_.empty() ? input_ : shapes_.back(); }

  void append(const LayerSpec& layer) {
    if (layers_.size() >= kMaxLayers) throw ArchError("architecture already has " + std::to_string(kMaxLayers) + " layers");
    if (!layers_.empty() && kind_of(layers_.back()) == LayerKind::FCL && kind_of(layer) != LayerKind::FCL) {
      throw ArchError("layer " + std::to_string(layers_.size()) + ": " + trlhpo::describe(layer) + " after an FCL");
    }
    FeatureShape next;
    try {
      next = propagate_shape(output_shape(), layer);
    } catch (const ArchError& e) {
      throw ArchError("layer " + std::to_string(layers_.size()) + ": " + e.what());
    }
    layers_.push_back(layer);
    shapes_.push_back(next);
  }

  ArchSpec with(const LayerSpec& layer) const {
    ArchSpec copy = *this;
    copy.append(layer);
    return copy;
  }

  bool operator==(const ArchSpec& o) const { return input_ == o.input_ && layers_ == o.layers_; }

  std::string describe() const {
    std::string s = trlhpo::describe(input_);
    for (const auto& l : layers_) s += " -> " + trlhpo::describe(l);
    return s;
  }

 private:
  FeatureShape input_ = FeatureShape::grid(1, 28, 28);
  std::vector<LayerSpec> layers_;
  std::vector<FeatureShape> shapes_;
};

/// Canonical form: {"input_shape": [...], "layers": [{"kind": ..., hp...}]}.
/// Keys are emitted sorted, so dump() of this object is canonical.
inline nlohmann::json arch_to_json(const ArchSpec& arch) {
  auto layers = nlohmann::json::array();
  for (const auto& l : arch.layers()) layers.push_back(layer_to_json(l));
  return {{"input_shape", shape_to_json(arch.input_shape())}, {"layers", layers}};
}

inline ArchSpec arch_from_json(const nlohmann::json& j) {
  ArchSpec arch(shape_from_json(j.at("input_shape")));
  for (const auto& l : j.at("layers")) arch.append(layer_from_json(l));
  return arch;
}

inline std::string canonical_string(const ArchSpec& arch) { return arch_to_json(arch).dump(); }

/// 64-bit FNV-1a over the canonical serialization, as 16 hex digits.
inline std::string arch_hash(const ArchSpec& arch) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical_string(arch)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Trainable model description
// ---------------------------------------------------------------------------

/// Generated layers followed by the classification head (flatten if needed,
/// then a dense layer to `num_classes`). The head is not a generated layer.
struct ModelPlan {
  ArchSpec arch;
  int num_classes = 10;
  std::size_t head_inputs = 0;
  bool needs_flatten = false;

  std::string describe() const {
    std::string s;
    for (const auto& l : arch.layers()) s += trlhpo::describe(l) + " -> ";
    if (needs_flatten) s += "flatten(" + std::to_string(head_inputs) + ") -> ";
    s += "FCL(" + std::to_string(num_classes) + ")";
    return s;
  }
};

inline ModelPlan build_model(const ArchSpec& arch, int num_classes) {
  if (num_classes < 2) throw ArchError("build_model: need at least 2 classes");
  // Re-derive shapes so a plan never trusts stale cached shapes.
  ArchSpec checked(arch.input_shape());
  for (std::size_t i = 0; i < arch.size(); ++i) {
    try {
      checked.append(arch.layers()[i]);
    } catch (const ArchError& e) {
      throw ArchError("build_model: layer " + std::to_string(i) + " (" + trlhpo::describe(arch.layers()[i]) +
                      ") failed: " + e.what());
    }
  }
  ModelPlan plan;
  plan.arch = checked;
  plan.num_classes = num_classes;
  const auto out = checked.output_shape();
  plan.head_inputs = out.size();
  plan.needs_flatten = !out.flat;
  return plan;
}

}  // namespace trlhpo

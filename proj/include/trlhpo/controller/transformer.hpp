#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "trlhpo/core/checkpoint.hpp"
#include "trlhpo/core/ops.hpp"
#include "trlhpo/core/random.hpp"

namespace trlhpo::controller {

using core::Tensor;
namespace ops = core::ops;

/// Sinusoidal encoding: PE[pos, 2i] = sin(pos / 10000^(2i/dim)), PE[pos, 2i+1] = cos(...).
inline Tensor positional_encoding(std::size_t seq_len, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw std::invalid_argument("positional_encoding: dim must be even, got " + std::to_string(dim));
  std::vector<double> pe(seq_len * dim);
  for (std::size_t pos = 0; pos < seq_len; ++pos) {
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
      pe[pos * dim + 2 * i] = std::sin(angle);
      pe[pos * dim + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor({seq_len, dim}, std::move(pe));
}

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  Tensor operator()(const Tensor& x) const { return ops::add_bias(ops::matmul(x, weight), bias); }
};

struct MhsaWeights {
  Linear query, key, value, output;
  std::size_t heads = 4;
};

struct MhsaResult {
  Tensor output;                 // [seq, embed]
  std::vector<Tensor> attention; // one [seq, seq] per head
};

/// Multi-head scaled dot-product self-attention over x[seq, embed].
inline MhsaResult mhsa_forward(const MhsaWeights& w, const Tensor& x, bool causal) {
  const std::size_t embed = x.dim(1);
  if (w.heads == 0 || embed % w.heads != 0) {
    throw core::ShapeError("mhsa: embed " + std::to_string(embed) + " not divisible by " + std::to_string(w.heads) + " heads");
  }
  const std::size_t head_dim = embed / w.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const Tensor q = w.query(x);
  const Tensor k = w.key(x);
  const Tensor v = w.value(x);
  MhsaResult r;
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < w.heads; ++h) {
    const std::size_t b = h * head_dim, e = b + head_dim;
    const Tensor scores = ops::scale(ops::matmul(ops::slice_cols(q, b, e), ops::transpose(ops::slice_cols(k, b, e))), inv_sqrt);
    Tensor attn = ops::softmax(scores, causal);
    heads.push_back(ops::matmul(attn, ops::slice_cols(v, b, e)));
    r.attention.push_back(std::move(attn));
  }
  r.output = w.output(ops::concat_cols(heads));
  return r;
}

enum class OutputActivation { Sigmoid, Tanh };

struct TransformerConfig {
  std::size_t input_dim = 64;
  std::size_t embed_dim = 64;
  std::size_t heads = 4;
  std::size_t blocks = 2;
  std::size_t expansion = 4;
  std::size_t seq_len = 6;
  std::size_t output_dim = 4;
  /// Width of an optional trailing token embedded separately (the critic's action).
  std::size_t extra_token_dim = 0;
  OutputActivation output_activation = OutputActivation::Sigmoid;
  double head_init_std = 3e-3;
};

struct NetOutput {
  Tensor value;                  // [1, output_dim]
  std::vector<Tensor> attention; // final block, one [tokens, tokens] per head
};

/// Pre-norm decoder-style transformer with causal self-attention.
class TransformerNet {
 public:
  TransformerNet() = default;

  TransformerNet(const TransformerConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.embed_dim % cfg.heads != 0) throw std::invalid_argument("transformer: embed_dim must be divisible by heads");
    core::Rng rng(seed);
    const std::size_t E = cfg.embed_dim, H = cfg.embed_dim * cfg.expansion;
    in_ = linear("embed", cfg.input_dim, E, rng);
    if (cfg.extra_token_dim > 0) extra_ = linear("embed_extra", cfg.extra_token_dim, E, rng);
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
      const std::string p = "block" + std::to_string(b) + ".";
      Block blk;
      blk.ln1_gain = param(p + "ln1.gain", Tensor::full({E}, 1.0, true));
      blk.ln1_shift = param(p + "ln1.shift", Tensor::zeros({E}, true));
      blk.attn.heads = cfg.heads;
      blk.attn.query = linear(p + "attn.query", E, E, rng);
      blk.attn.key = linear(p + "attn.key", E, E, rng);
      blk.attn.value = linear(p + "attn.value", E, E, rng);
      blk.attn.output = linear(p + "attn.output", E, E, rng);
      blk.ln2_gain = param(p + "ln2.gain", Tensor::full({E}, 1.0, true));
      blk.ln2_shift = param(p + "ln2.shift", Tensor::zeros({E}, true));
      blk.ff1 = linear(p + "ffn.up", E, H, rng);
      blk.ff2 = linear(p + "ffn.down", H, E, rng);
      blocks_.push_back(std::move(blk));
    }
    final_gain_ = param("final_ln.gain", Tensor::full({E}, 1.0, true));
    final_shift_ = param("final_ln.shift", Tensor::zeros({E}, true));
    head_ = linear("head", E, cfg.output_dim, rng, cfg.head_init_std);
    pe_ = positional_encoding(cfg.seq_len + (cfg.extra_token_dim > 0 ? 1 : 0), E);
  }

  TransformerNet(const TransformerNet& other) : TransformerNet(other.cfg_, 0) { copy_values_from(other); }
  TransformerNet& operator=(const TransformerNet& other) {
    if (this != &other) {
      TransformerNet tmp(other);
      *this = std::move(tmp);
    }
    return *this;
  }
  TransformerNet(TransformerNet&&) = default;
  TransformerNet& operator=(TransformerNet&&) = default;

  const TransformerConfig& config() const { return cfg_; }
  const core::ParamList& params() const { return params_; }
  core::ParamList& params() { return params_; }
  std::vector<Tensor> tensors() const { return core::tensors_of(params_); }

  void copy_values_from(const TransformerNet& other) {
    if (other.params_.size() != params_.size()) throw core::ShapeError("transformer: parameter count mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto src = other.params_[i].value.data();
      auto dst = params_[i].value.mutable_data();
      if (src.size() != dst.size()) throw core::ShapeError("transformer: parameter '" + params_[i].name + "' shape mismatch");
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }

  /// tokens[seq_len, input_dim] (+ optional extra[1, extra_token_dim]);
  /// reads the representation at `read_index`.
  NetOutput forward(const Tensor& tokens, const Tensor& extra, std::size_t read_index) const {
    Tensor x = in_(tokens);
    if (cfg_.extra_token_dim > 0) {
      if (!extra.defined()) throw std::invalid_argument("transformer: missing extra token");
      const Tensor parts[] = {x, extra_(extra)};
      x = ops::concat_rows(parts);
    }
    if (x.dim(0) != pe_.dim(0)) {
      throw core::ShapeError("transformer: expected " + std::to_string(pe_.dim(0)) + " tokens, got " + std::to_string(x.dim(0)));
    }
    x = ops::add(x, pe_);
    NetOutput out;
    for (const auto& blk : blocks_) {
      auto attn = mhsa_forward(blk.attn, ops::layer_norm(x, blk.ln1_gain, blk.ln1_shift), true);
      x = ops::add(x, attn.output);
      const Tensor hidden = ops::relu(blk.ff1(ops::layer_norm(x, blk.ln2_gain, blk.ln2_shift)));
      x = ops::add(x, blk.ff2(hidden));
      out.attention = std::move(attn.attention);
    }
    x = ops::layer_norm(x, final_gain_, final_shift_);
    const Tensor y = head_(ops::row(x, read_index));
    out.value = cfg_.output_activation == OutputActivation::Sigmoid ? ops::sigmoid(y) : ops::tanh(y);
    return out;
  }

 private:
  struct Block {
    Tensor ln1_gain, ln1_shift;
    MhsaWeights attn;
    Tensor ln2_gain, ln2_shift;
    Linear ff1, ff2;
  };

  Tensor param(std::string name, Tensor t) {
    params_.push_back({std::move(name), t});
    return t;
  }

  Linear linear(const std::string& name, std::size_t in, std::size_t out, core::Rng& rng, double stddev = 0.0) {
    if (stddev == 0.0) stddev = 1.0 / std::sqrt(static_cast<double>(in));
    Linear l;
    l.weight = param(name + ".weight", core::normal_tensor({in, out}, rng, stddev, true));
    l.bias = param(name + ".bias", Tensor::zeros({out}, true));
    return l;
  }

  TransformerConfig cfg_;
  core::ParamList params_;
  Linear in_, extra_, head_;
  std::vector<Block> blocks_;
  Tensor final_gain_, final_shift_;
  Tensor pe_;
};

/// target <- tau * online + (1 - tau) * target, elementwise.
inline void soft_update(const core::ParamList& online, core::ParamList& target, double tau) {
  if (tau < 0.0 || tau > 1.0) throw std::invalid_argument("soft_update: tau must be in [0,1]");
  if (online.size() != target.size()) throw core::ShapeError("soft_update: parameter count mismatch");
  for (std::size_t i = 0; i < online.size(); ++i) {
    if (online[i].value.shape() != target[i].value.shape()) {
      throw core::ShapeError("soft_update: '" + online[i].name + "' " + core::shape_str(online[i].value.shape()) +
                             " vs " + core::shape_str(target[i].value.shape()));
    }
    const auto src = online[i].value.data();
    auto dst = target[i].value.mutable_data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = tau * src[k] + (1.0 - tau) * dst[k];
  }
}

}  // namespace trlhpo::controller

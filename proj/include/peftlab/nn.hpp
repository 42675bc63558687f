// SPDX-License-Identifier: Apache-2.0
//
// Building blocks shared by the VQA model and the noise predictor.
#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "peftlab/ops.hpp"
#include "peftlab/tensor.hpp"

namespace peftlab {

// Trainable low-rank pair attached to a frozen base weight W0 [d x k]:
// A is [r x k], B is [d x r] and the update is (alpha / r) * B * A.
struct LoraAdapter {
  Parameter a;
  Parameter b;
  std::size_t rank = 0;
  double alpha = 0.0;

  double scale() const { return alpha / static_cast<double>(rank); }
};

// y = x W^T + b, optionally plus a low-rank update. Weight layout is
// [out x in] so it lines up with W0 in d x k form.
class Linear {
 public:
  Linear() = default;

  Linear(std::string name, std::size_t in, std::size_t out, Rng& rng, bool with_bias = true,
         double init_std = -1.0)
      : name_(std::move(name)) {
    const double std_dev = init_std > 0 ? init_std : 1.0 / std::sqrt(static_cast<double>(in));
    weight = Parameter(name_ + ".weight", Tensor::randn({out, in}, std_dev, rng));
    if (with_bias) bias = Parameter(name_ + ".bias", Tensor::zeros({out}));
  }

  Tensor operator()(const Tensor& x) const {
    Tensor y = base_forward(x);
    if (adapter) {
      Tensor low = matmul_nt(matmul_nt(x, adapter->a.tensor), adapter->b.tensor);
      y = add(y, scale(low, adapter->scale()));
    }
    return y;
  }

  // Forward through W0 (and bias) only, ignoring any adapter.
  Tensor base_forward(const Tensor& x) const {
    Tensor y = matmul_nt(x, weight.tensor);
    if (bias) y = add_row(y, bias->tensor);
    return y;
  }

  ParameterList parameters() {
    ParameterList out{&weight};
    if (bias) out.push_back(&*bias);
    if (adapter) {
      out.push_back(&adapter->a);
      out.push_back(&adapter->b);
    }
    return out;
  }

  const std::string& name() const { return name_; }
  std::size_t in_features() const { return weight.tensor.cols(); }
  std::size_t out_features() const { return weight.tensor.rows(); }

  Parameter weight;
  std::optional<Parameter> bias;
  std::optional<LoraAdapter> adapter;

 private:
  std::string name_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t width)
      : gain(name + ".gain", Tensor::full({width}, 1.0)),
        bias(name + ".bias", Tensor::zeros({width})) {}

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain.tensor, bias.tensor); }

  ParameterList parameters() { return {&gain, &bias}; }

  Parameter gain;
  Parameter bias;
};

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(const std::string& name, std::size_t width, std::size_t hidden, Rng& rng)
      : up(name + ".ff_in", width, hidden, rng), down(name + ".ff_out", hidden, width, rng) {}

  Tensor operator()(const Tensor& x) const { return down(gelu(up(x))); }

  ParameterList parameters() {
    auto out = up.parameters();
    append(out, down.parameters());
    return out;
  }

  Linear up;
  Linear down;
};

// Additive mask that hides key positions after each query position.
inline Tensor causal_mask(std::size_t t) {
  constexpr double kHidden = -1e30;
  auto mask = Tensor::zeros({t, t});
  auto d = mask.mutable_data();
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = i + 1; j < t; ++j) d[i * t + j] = kHidden;
  return mask;
}

struct AttentionOutput {
  Tensor output;
  std::vector<Tensor> weights;  // one [T x N] matrix per head, when requested
};

// Multi-head scaled dot-product attention with learned query, key, value
// and output projections. Queries come from q_states, keys and values from
// kv_states; passing the same tensor twice gives self-attention.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, std::size_t width, std::size_t heads, Rng& rng)
      : query(name + ".query", width, width, rng),
        key(name + ".key", width, width, rng),
        value(name + ".value", width, width, rng),
        output(name + ".output", width, width, rng),
        heads_(heads) {
    if (heads == 0 || width % heads != 0) {
      throw ConfigError(name + ": width " + std::to_string(width) + " not divisible by " +
                        std::to_string(heads) + " heads");
    }
  }

  Tensor operator()(const Tensor& q_states, const Tensor& kv_states,
                    const Tensor* mask = nullptr) const {
    return forward(q_states, kv_states, mask, false).output;
  }

  AttentionOutput forward(const Tensor& q_states, const Tensor& kv_states, const Tensor* mask,
                          bool keep_weights) const {
    const std::size_t width = query.in_features();
    if (q_states.cols() != width || kv_states.cols() != width) {
      throw DimensionError("attention: inputs " + shape_str(q_states.shape()) + " and " +
                           shape_str(kv_states.shape()) + " must both have width " +
                           std::to_string(width));
    }
    const Tensor q = query(q_states);
    const Tensor k = key(kv_states);
    const Tensor v = value(kv_states);
    const std::size_t dk = width / heads_;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
    AttentionOutput result;
    std::vector<Tensor> per_head;
    per_head.reserve(heads_);
    for (std::size_t h = 0; h < heads_; ++h) {
      const Tensor qh = heads_ == 1 ? q : slice_cols(q, h * dk, (h + 1) * dk);
      const Tensor kh = heads_ == 1 ? k : slice_cols(k, h * dk, (h + 1) * dk);
      const Tensor vh = heads_ == 1 ? v : slice_cols(v, h * dk, (h + 1) * dk);
      Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt_dk);
      if (mask) scores = add(scores, *mask);
      const Tensor weights = softmax(scores, 1);
      if (keep_weights) result.weights.push_back(weights);
      per_head.push_back(matmul(weights, vh));
    }
    const Tensor merged = heads_ == 1 ? per_head.front() : concat_cols(per_head);
    result.output = output(merged);
    return result;
  }

  std::map<std::string, Linear*> projections() {
    return {{"query", &query}, {"key", &key}, {"value", &value}, {"output", &output}};
  }

  ParameterList parameters() {
    ParameterList out;
    for (auto* l : {&query, &key, &value, &output}) append(out, l->parameters());
    return out;
  }

  std::size_t heads() const { return heads_; }

  Linear query;
  Linear key;
  Linear value;
  Linear output;

 private:
  std::size_t heads_ = 1;
};

inline void freeze_all(const ParameterList& params) {
  for (auto* p : params) p->freeze();
}

}  // namespace peftlab

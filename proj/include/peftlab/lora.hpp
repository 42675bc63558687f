// SPDX-License-Identifier: Apache-2.0
//
// Low-rank adaptation: W = W0 + (alpha / r) B A with W0 frozen.
#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "peftlab/nn.hpp"

namespace peftlab::lora {

struct LoraConfig {
  std::size_t rank = 4;
  double alpha = 4.0;  // alpha == rank keeps the update multiplier at 1
  std::set<std::string> target_projections{"query", "key", "value", "output"};
  double init_std = 0.01;

  double scale() const { return alpha / static_cast<double>(rank); }

  void validate() const {
    if (rank < 1) throw ConfigError("lora: rank must be >= 1");
    if (!(alpha > 0.0)) throw ConfigError("lora: alpha must be > 0");
    if (target_projections.empty()) throw ConfigError("lora: no target projections");
  }
};

inline LoraConfig config_for_rank(std::size_t rank) {
  LoraConfig cfg;
  cfg.rank = rank;
  cfg.alpha = static_cast<double>(rank);
  return cfg;
}

// Wraps one linear layer: W0 (and bias) frozen, A ~ N(0, init_std), B = 0.
inline void attach(Linear& layer, std::size_t rank, double alpha, double init_std, Rng& rng) {
  const std::size_t d = layer.out_features(), k = layer.in_features();
  if (rank < 1 || rank > std::min(d, k)) {
    throw ConfigError("lora: rank " + std::to_string(rank) + " outside [1, min(" +
                      std::to_string(d) + ", " + std::to_string(k) + ")] for " + layer.name());
  }
  if (layer.adapter) throw ConfigError("lora: " + layer.name() + " already adapted");
  layer.weight.freeze();
  if (layer.bias) layer.bias->freeze();
  LoraAdapter adapter;
  adapter.a = Parameter(layer.name() + ".lora_a", Tensor::randn({rank, k}, init_std, rng));
  adapter.b = Parameter(layer.name() + ".lora_b", Tensor::zeros({d, rank}));
  adapter.rank = rank;
  adapter.alpha = alpha;
  layer.adapter = std::move(adapter);
}

// Adapts the configured projections of one named projection set, e.g. the
// query/key/value/output layers of an attention block.
inline void inject(const std::map<std::string, Linear*>& layer, const LoraConfig& cfg, Rng& rng) {
  cfg.validate();
  for (const auto& target : cfg.target_projections) {
    if (!layer.count(target)) {
      std::ostringstream known;
      for (const auto& [name, _] : layer) known << ' ' << name;
      throw ConfigError("lora: unknown projection '" + target + "' (have:" + known.str() + ")");
    }
  }
  for (const auto& target : cfg.target_projections) {
    attach(*layer.at(target), cfg.rank, cfg.alpha, cfg.init_std, rng);
  }
}

// Dense W0 + (alpha / r) B A.
inline Tensor merge(const Linear& layer) {
  const auto w0 = layer.weight.tensor.data();
  std::vector<double> w(w0.begin(), w0.end());
  if (!layer.adapter) return Tensor(layer.weight.tensor.shape(), std::move(w));
  const auto& ad = *layer.adapter;
  const std::size_t d = layer.out_features(), k = layer.in_features(), r = ad.rank;
  const auto a = ad.a.tensor.data();
  const auto b = ad.b.tensor.data();
  const double s = ad.scale();
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < r; ++p) acc += b[i * r + p] * a[p * k + j];
      w[i * k + j] += s * acc;
    }
  }
  return Tensor({d, k}, std::move(w));
}

// Plain linear layer carrying the merged weight and the original bias.
inline Linear merged_copy(const Linear& layer) {
  Linear out = layer;
  out.weight = Parameter(layer.weight.name, merge(layer));
  out.weight.freeze();
  if (layer.bias) {
    out.bias = Parameter(layer.bias->name, layer.bias->tensor.detach());
    out.bias->freeze();
  }
  out.adapter.reset();
  return out;
}

struct ParamCount {
  std::size_t full = 0;   // d k
  std::size_t lora = 0;   // r (d + k)
  double reduction_fraction = 0.0;

  // The adapter is at least as large as the matrix it adapts.
  bool exceeds_full() const { return lora >= full; }
};

inline ParamCount param_count(std::size_t d, std::size_t k, std::size_t r) {
  ParamCount c;
  c.full = d * k;
  c.lora = r * (d + k);
  c.reduction_fraction = 1.0 - static_cast<double>(c.lora) / static_cast<double>(c.full);
  return c;
}

// Σ r (d + k) over every adapted layer in the list.
inline std::size_t expected_trainable(const std::vector<Linear*>& layers) {
  std::size_t total = 0;
  for (const auto* l : layers)
    if (l->adapter) total += param_count(l->out_features(), l->in_features(), l->adapter->rank).lora;
  return total;
}

}  // namespace peftlab::lora

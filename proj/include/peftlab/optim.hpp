// SPDX-License-Identifier: Apache-2.0
//
// AdamW with decoupled weight decay, warmup + cosine learning-rate schedule
// and gradient accumulation.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "peftlab/tensor.hpp"

namespace peftlab::optim {

struct AdamWConfig {
  double learning_rate = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("adamw: learning_rate must be > 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
      throw ConfigError("adamw: betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("adamw: eps must be > 0");
    if (weight_decay < 0.0) throw ConfigError("adamw: weight_decay must be >= 0");
  }
};

struct ScheduleConfig {
  double peak_lr = 2e-5;
  std::size_t warmup_steps = 200;
  std::size_t total_steps = 1000;
  double min_lr = 0.0;

  void validate() const {
    if (warmup_steps >= total_steps) {
      throw ConfigError("schedule: warmup_steps (" + std::to_string(warmup_steps) +
                        ") must be below total_steps (" + std::to_string(total_steps) + ")");
    }
    if (!(peak_lr > 0.0) || min_lr < 0.0 || min_lr > peak_lr)
      throw ConfigError("schedule: need 0 <= min_lr <= peak_lr, peak_lr > 0");
  }
};

// Linear ramp 0 -> peak over the warmup, then half-cosine down to min_lr.
inline double cosine_lr(std::size_t step, const ScheduleConfig& cfg) {
  cfg.validate();
  if (step > cfg.total_steps) {
    throw ContractError("cosine_lr: step " + std::to_string(step) + " beyond total_steps " +
                        std::to_string(cfg.total_steps));
  }
  if (step < cfg.warmup_steps) {
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  const double progress = static_cast<double>(step - cfg.warmup_steps) /
                          static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  return cfg.min_lr +
         (cfg.peak_lr - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * progress)) / 2.0;
}

struct MomentState {
  std::vector<double> m;
  std::vector<double> v;
};

class AdamW {
 public:
  AdamW(ParameterList params, AdamWConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    for (auto* p : params) {
      if (!p->trainable()) continue;
      if (state_.count(p->name)) throw ConfigError("adamw: duplicate parameter name " + p->name);
      params_.push_back(p);
      state_[p->name] = {std::vector<double>(p->tensor.size(), 0.0),
                         std::vector<double>(p->tensor.size(), 0.0)};
    }
  }

  // One update with the given learning rate. Parameters that are frozen or
  // never received a gradient are left untouched.
  void step(double lr) {
    for (auto* p : params_) {
      if (!p->tensor.has_grad()) continue;
      for (double g : p->tensor.grad()) {
        if (!std::isfinite(g)) throw NumericError("adamw: non-finite gradient in " + p->name);
      }
    }
    ++steps_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    for (auto* p : params_) {
      if (p->frozen || !p->tensor.has_grad()) continue;
      auto data = p->tensor.mutable_data();
      auto& st = state_.at(p->name);
      const auto grad = p->tensor.grad();
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double g = grad[i];
        st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g;
        st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g * g;
        const double m_hat = st.m[i] / bc1;
        const double v_hat = st.v[i] / bc2;
        data[i] -= lr * cfg_.weight_decay * data[i];
        data[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
      }
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->tensor.zero_grad();
  }

  std::size_t steps() const { return steps_; }
  const AdamWConfig& config() const { return cfg_; }
  const ParameterList& parameters() const { return params_; }
  const std::map<std::string, MomentState>& state() const { return state_; }

  void restore(std::map<std::string, MomentState> state, std::size_t steps) {
    for (const auto& [name, st] : state_) {
      auto it = state.find(name);
      if (it == state.end() || it->second.m.size() != st.m.size() ||
          it->second.v.size() != st.v.size()) {
        throw InputError("adamw: checkpoint has no matching state for " + name);
      }
    }
    for (auto& [name, st] : state_) st = std::move(state.at(name));
    steps_ = steps;
  }

 private:
  AdamWConfig cfg_;
  ParameterList params_;
  std::map<std::string, MomentState> state_;
  std::size_t steps_ = 0;
};

// Rescales gradients so that the global L2 norm is at most max_norm.
inline double clip_grad_norm(const ParameterList& params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params)
    for (double g : p->tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto* p : params)
      if (p->tensor.has_grad())
        for (auto& g : p->tensor.mutable_grad()) g *= f;
  }
  return norm;
}

// Applies the optimizer once per window of micro-batches. Each micro-batch
// loss is scaled by 1/window before backward, so with mean-reduced losses a
// full window produces the same update as one batch of window times the size.
class GradientAccumulator {
 public:
  GradientAccumulator(AdamW& optimizer, ScheduleConfig schedule, std::size_t accumulation_steps,
                      double clip_norm = 0.0)
      : opt_(optimizer), schedule_(schedule), window_(accumulation_steps), clip_(clip_norm) {
    if (accumulation_steps < 1) throw ConfigError("accumulation_steps must be >= 1");
    schedule_.validate();
  }

  // Backward on one micro-batch loss; returns true when this completed a
  // window and the optimizer stepped.
  bool micro_step(const Tensor& loss) {
    backward(scale(loss, 1.0 / static_cast<double>(window_)));
    if (++pending_ < window_) return false;
    apply();
    return true;
  }

  // Applies a partially filled window, rescaled as if it were full.
  bool flush() {
    if (pending_ == 0) return false;
    if (pending_ < window_) {
      const double f = static_cast<double>(window_) / static_cast<double>(pending_);
      for (auto* p : opt_.parameters())
        if (p->tensor.has_grad())
          for (auto& g : p->tensor.mutable_grad()) g *= f;
    }
    apply();
    return true;
  }

  double current_lr() const {
    return cosine_lr(std::min(opt_.steps() + 1, schedule_.total_steps), schedule_);
  }

  std::size_t pending() const { return pending_; }

 private:
  void apply() {
    if (clip_ > 0.0) clip_grad_norm(opt_.parameters(), clip_);
    opt_.step(current_lr());
    opt_.zero_grad();
    pending_ = 0;
  }

  AdamW& opt_;
  ScheduleConfig schedule_;
  std::size_t window_;
  double clip_;
  std::size_t pending_ = 0;
};

}  // namespace peftlab::optim

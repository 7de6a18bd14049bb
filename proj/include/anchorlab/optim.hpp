// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "anchorlab/tensor.hpp"

namespace anchorlab {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Decoupled (AdamW) decay; 0 gives plain Adam.
  double weight_decay = 0.0;
};

/// Adam with bias correction. Moments are kept per parameter tensor, in the
/// order of the parameter list passed to `step`.
template <typename T>
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(AdamConfig config) : config_(config) {}

  const AdamConfig& config() const noexcept { return config_; }
  std::size_t steps() const noexcept { return step_; }

  /// Updates every parameter in place (replacing its buffer) from the matching
  /// gradient. `lr_scale` multiplies the configured learning rate.
  void step(const std::vector<Tensor<T>*>& params, const std::vector<std::span<const T>>& grads,
            double lr_scale = 1.0) {
    if (params.size() != grads.size()) throw std::invalid_argument("adam: parameter/gradient count mismatch");
    if (m_.empty()) {
      for (const auto* p : params) {
        m_.emplace_back(p->numel(), 0.0);
        v_.emplace_back(p->numel(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw std::invalid_argument("adam: parameter list changed between steps");
    ++step_;
    const double lr = config_.lr * lr_scale;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      const auto g = grads[i];
      if (g.size() != p.numel()) throw std::invalid_argument("adam: gradient size mismatch");
      std::vector<T> next(p.data().begin(), p.data().end());
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < next.size(); ++j) {
        const double gj = static_cast<double>(g[j]);
        m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * gj;
        v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * gj * gj;
        const double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
        double x = static_cast<double>(next[j]);
        x -= lr * config_.weight_decay * x;
        next[j] = static_cast<T>(x - lr * update);
      }
      p = Tensor<T>(p.shape(), std::move(next));
    }
  }

 private:
  AdamConfig config_;
  std::size_t step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace anchorlab

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "s2p/error.hpp"
#include "s2p/nn/layers.hpp"

namespace s2p::nn {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-3;
  /// Folds the decay into the gradient (classic Adam + L2) instead of
  /// decoupling it. Only used to contrast the two update rules.
  bool coupled_l2 = false;
};

/// Adam with decoupled weight decay. Moments are indexed by parameter order,
/// so the same parameter list must be passed to every step().
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const noexcept { return cfg_; }
  std::uint64_t step_count() const noexcept { return t_; }
  const std::vector<Tensor<T>>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor<T>>& second_moments() const noexcept { return v_; }

  /// One update at learning rate `lr`; weight decay scales with the same lr.
  void step(std::span<Parameter<T>* const> params, double lr) {
    if (m_.empty()) {
      for (auto* p : params) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
      }
    }
    if (m_.size() != params.size()) throw StateError("AdamW: parameter list changed between steps");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double decay = 1.0 - lr * cfg_.weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& theta = params[i]->value;
      const auto& grad = params[i]->grad;
      if (theta.shape() != m_[i].shape()) throw ShapeError("AdamW: parameter shape changed");
      for (std::size_t j = 0; j < theta.size(); ++j) {
        double th = static_cast<double>(theta[j]);
        double g = static_cast<double>(grad[j]);
        if (cfg_.coupled_l2) {
          g += cfg_.weight_decay * th;
        } else {
          th *= decay;
        }
        const double m = cfg_.beta1 * static_cast<double>(m_[i][j]) + (1.0 - cfg_.beta1) * g;
        const double v = cfg_.beta2 * static_cast<double>(v_[i][j]) + (1.0 - cfg_.beta2) * g * g;
        m_[i][j] = static_cast<T>(m);
        v_[i][j] = static_cast<T>(v);
        th -= lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
        theta[j] = static_cast<T>(th);
      }
    }
  }

  void step(std::span<Parameter<T>* const> params) { step(params, cfg_.lr); }

 private:
  AdamWConfig cfg_;
  std::vector<Tensor<T>> m_, v_;
  std::uint64_t t_ = 0;
};

/// Cosine annealing with warm restarts, stepped once per epoch.
struct CosineWarmRestarts {
  double eta_max = 1e-3;
  double eta_min = 0.0;
  std::size_t t0 = 20;
  std::size_t t_mult = 2;

  double lr(std::size_t epoch) const {
    std::size_t start = 0, period = t0;
    while (epoch >= start + period) {
      start += period;
      period *= t_mult;
    }
    const double t_cur = static_cast<double>(epoch - start);
    return eta_min + 0.5 * (eta_max - eta_min) * (1.0 + std::cos(std::numbers::pi * t_cur / static_cast<double>(period)));
  }
};

}  // namespace s2p::nn

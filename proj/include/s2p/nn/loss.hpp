#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "s2p/error.hpp"
#include "s2p/nn/tensor.hpp"

namespace s2p::nn {

template <typename T>
struct LossResult {
  T value;
  Tensor<T> grad;  ///< dLoss/dlogits, shape [B, C]
};

namespace detail {

template <typename T>
void check_logits(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("loss: logits must be [B, C]");
  if (logits.dim(0) != labels.size()) throw ShapeError("loss: label count != batch size");
  if (logits.dim(0) == 0) throw ShapeError("loss: empty batch");
  const auto classes = static_cast<int>(logits.dim(1));
  for (int y : labels) {
    if (y < 0 || y >= classes) throw ParameterError("loss: label out of range");
  }
}

/// Row-wise log-softmax with max subtraction.
template <typename T>
std::vector<double> log_softmax_row(const T* z, std::size_t classes) {
  double mx = static_cast<double>(z[0]);
  for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, static_cast<double>(z[j]));
  double sum = 0.0;
  for (std::size_t j = 0; j < classes; ++j) sum += std::exp(static_cast<double>(z[j]) - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(classes);
  for (std::size_t j = 0; j < classes; ++j) out[j] = static_cast<double>(z[j]) - lse;
  return out;
}

}  // namespace detail

/// Mean cross-entropy of softmax(logits) against integer labels.
template <typename T>
LossResult<T> softmax_ce_loss(const Tensor<T>& logits, std::span<const int> labels) {
  detail::check_logits(logits, labels);
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  Tensor<T> grad(logits.shape());
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const auto logp = detail::log_softmax_row(logits.data() + b * classes, classes);
    const auto y = static_cast<std::size_t>(labels[b]);
    total -= logp[y];
    for (std::size_t j = 0; j < classes; ++j) {
      const double p = std::exp(logp[j]);
      grad[b * classes + j] = static_cast<T>((p - (j == y ? 1.0 : 0.0)) / static_cast<double>(batch));
    }
  }
  return {static_cast<T>(total / static_cast<double>(batch)), std::move(grad)};
}

/// Mean focal loss -(1 - p_t)^gamma log p_t, no class weighting.
template <typename T>
LossResult<T> focal_loss(const Tensor<T>& logits, std::span<const int> labels, double gamma = 2.0) {
  detail::check_logits(logits, labels);
  if (gamma < 0.0) throw ParameterError("focal_loss: gamma must be >= 0");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  Tensor<T> grad(logits.shape());
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const auto logp = detail::log_softmax_row(logits.data() + b * classes, classes);
    const auto y = static_cast<std::size_t>(labels[b]);
    const double log_pt = logp[y];
    const double pt = std::exp(log_pt);
    const double q = std::max(0.0, 1.0 - pt);
    const double weight = std::pow(q, gamma);
    total -= weight * log_pt;
    // dL/dz_j = [gamma (1-p_t)^(gamma-1) p_t log p_t - (1-p_t)^gamma] (delta_jy - p_j)
    double coeff = -weight;
    if (gamma != 0.0 && q > 0.0) coeff += gamma * std::pow(q, gamma - 1.0) * pt * log_pt;
    for (std::size_t j = 0; j < classes; ++j) {
      const double p = std::exp(logp[j]);
      const double delta = (j == y ? 1.0 : 0.0) - p;
      grad[b * classes + j] = static_cast<T>(coeff * delta / static_cast<double>(batch));
    }
  }
  return {static_cast<T>(total / static_cast<double>(batch)), std::move(grad)};
}

enum class LossKind { Focal, CrossEntropy };

inline const char* to_string(LossKind k) { return k == LossKind::Focal ? "focal" : "ce"; }

template <typename T>
LossResult<T> compute_loss(LossKind kind, const Tensor<T>& logits, std::span<const int> labels) {
  return kind == LossKind::Focal ? focal_loss(logits, labels, 2.0) : softmax_ce_loss(logits, labels);
}

}  // namespace s2p::nn

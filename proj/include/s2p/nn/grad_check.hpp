#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>

#include "s2p/error.hpp"
#include "s2p/nn/loss.hpp"
#include "s2p/nn/sequential.hpp"

namespace s2p::nn {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// |a - b| / max(|a|, |b|, floor). The floor keeps gradients that are zero in
/// exact arithmetic (e.g. a bias feeding a train-mode BatchNorm) from turning
/// finite-difference round-off into O(1) relative error.
inline double relative_error(double a, double b, double floor = 1e-6) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

/// Compares every parameter's analytic gradient against central differences
/// of `loss(model(input), labels)`. Runs the model in whatever modes its
/// layers are set to; a train-mode Dropout makes the loss stochastic and is rejected.
template <typename T>
GradCheckResult grad_check(Sequential<T>& model, const Tensor<T>& input, std::span<const int> labels,
                           LossKind loss, double h = 1e-5, double floor = 1e-6) {
  if (model.has_stochastic_layer()) {
    throw StateError("grad_check: model contains a train-mode Dropout layer; set it to eval first");
  }
  // BatchNorm running statistics drift with every forward; restore them so
  // the probe passes leave the model as they found it.
  std::vector<Tensor<T>> saved;
  for (auto* b : model.buffers()) saved.push_back(b->value);
  auto restore = [&] {
    auto bufs = model.buffers();
    for (std::size_t i = 0; i < bufs.size(); ++i) bufs[i]->value = saved[i];
  };
  auto eval_loss = [&]() -> double {
    const auto out = model.forward(input, nullptr);
    return static_cast<double>(compute_loss(loss, out, labels).value);
  };

  model.zero_grad();
  {
    const auto out = model.forward(input, nullptr);
    const auto res = compute_loss(loss, out, labels);
    model.backward(res.grad);
  }
  restore();

  GradCheckResult result;
  for (auto* p : model.parameters()) {
    for (std::size_t j = 0; j < p->value.size(); ++j) {
      const T orig = p->value[j];
      p->value[j] = static_cast<T>(static_cast<double>(orig) + h);
      const double up = eval_loss();
      p->value[j] = static_cast<T>(static_cast<double>(orig) - h);
      const double down = eval_loss();
      p->value[j] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(static_cast<double>(p->grad[j]), numeric, floor);
      ++result.checked;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_parameter = p->name;
        result.worst_index = j;
      }
    }
  }
  restore();
  return result;
}

/// Central-difference check of dL/dinput for the same setup.
template <typename T>
double input_grad_check(Sequential<T>& model, const Tensor<T>& input, std::span<const int> labels,
                        LossKind loss, double h = 1e-5, double floor = 1e-6) {
  if (model.has_stochastic_layer()) throw StateError("input_grad_check: stochastic layer present");
  std::vector<Tensor<T>> saved;
  for (auto* b : model.buffers()) saved.push_back(b->value);
  auto restore = [&] {
    auto bufs = model.buffers();
    for (std::size_t i = 0; i < bufs.size(); ++i) bufs[i]->value = saved[i];
  };
  model.zero_grad();
  const auto out = model.forward(input, nullptr);
  const auto dx = model.backward(compute_loss(loss, out, labels).grad);
  restore();
  Tensor<T> probe = input;
  double worst = 0.0;
  for (std::size_t j = 0; j < probe.size(); ++j) {
    const T orig = probe[j];
    probe[j] = static_cast<T>(static_cast<double>(orig) + h);
    const double up = static_cast<double>(compute_loss(loss, model.forward(probe, nullptr), labels).value);
    probe[j] = static_cast<T>(static_cast<double>(orig) - h);
    const double down = static_cast<double>(compute_loss(loss, model.forward(probe, nullptr), labels).value);
    probe[j] = orig;
    worst = std::max(worst, relative_error(static_cast<double>(dx[j]), (up - down) / (2.0 * h), floor));
  }
  restore();
  return worst;
}

}  // namespace s2p::nn

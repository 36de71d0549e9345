#pragma once

#include <cmath>
#include <cstddef>

#include "s2p/error.hpp"
#include "s2p/nn/tensor.hpp"
#include "s2p/rng.hpp"

namespace s2p::nn {

/// Kaiming-normal weights: i.i.d. N(0, 2/fan_in).
template <typename T>
Tensor<T> kaiming_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw ParameterError("kaiming_normal: fan_in must be >= 1");
  Tensor<T> t(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.values()) v = static_cast<T>(rng.normal() * stddev);
  return t;
}

}  // namespace s2p::nn

#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "s2p/error.hpp"
#include "s2p/nn/layers.hpp"

namespace s2p::nn {

/// Ordered layer stack.
template <typename T>
class Sequential {
 public:
  Sequential() = default;
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  std::size_t size() const noexcept { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }

  Tensor<T> forward(const Tensor<T>& x, Rng* rng = nullptr) {
    Tensor<T> h = x;
    for (auto& l : layers_) h = l->forward(h, rng);
    return h;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) {
    Tensor<T> g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  void set_mode(Mode m) {
    for (auto& l : layers_) l->set_mode(m);
  }

  /// Mode of the Dropout layers only (BatchNorm untouched).
  void set_dropout_mode(Mode m) {
    for (auto& l : layers_) {
      if (l->kind() == LayerKind::Dropout) l->set_mode(m);
    }
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& l : layers_) {
      for (auto* p : l->parameters()) out.push_back(p);
    }
    return out;
  }

  std::vector<Buffer<T>*> buffers() {
    std::vector<Buffer<T>*> out;
    for (auto& l : layers_) {
      for (auto* b : l->buffers()) out.push_back(b);
    }
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->grad.fill(T(0));
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->value.size();
    return n;
  }

  /// Trainable count of layer `i` alone.
  std::size_t parameter_count(std::size_t i) {
    std::size_t n = 0;
    for (auto* p : layers_.at(i)->parameters()) n += p->value.size();
    return n;
  }

  bool has_stochastic_layer() const {
    for (const auto& l : layers_) {
      if (l->kind() == LayerKind::Dropout && static_cast<const Dropout<T>&>(*l).stochastic()) return true;
    }
    return false;
  }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

}  // namespace s2p::nn

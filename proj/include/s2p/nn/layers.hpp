#pragma once

// Fixed layer set with explicit forward/backward passes. Every layer caches
// what its backward pass needs during forward; backward consumes the cache.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "s2p/error.hpp"
#include "s2p/nn/init.hpp"
#include "s2p/nn/tensor.hpp"
#include "s2p/rng.hpp"

namespace s2p::nn {

enum class LayerKind { Linear, Conv3x3, BatchNorm, ReLU, Dropout, MaxPool2x2, Flatten };
enum class Mode { Train, Eval };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Linear: return "Linear";
    case LayerKind::Conv3x3: return "Conv3x3";
    case LayerKind::BatchNorm: return "BatchNorm";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::Dropout: return "Dropout";
    case LayerKind::MaxPool2x2: return "MaxPool2x2";
    case LayerKind::Flatten: return "Flatten";
  }
  return "?";
}

/// Trainable tensor with its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
};

/// Non-trainable state that is persisted with the model (BatchNorm running statistics).
template <typename T>
struct Buffer {
  std::string name;
  Tensor<T> value;
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  virtual LayerKind kind() const = 0;
  /// `rng` is only consulted by stochastic layers in train mode.
  virtual Tensor<T> forward(const Tensor<T>& x, Rng* rng) = 0;
  /// Returns dL/dx and accumulates dL/dparam into each Parameter::grad.
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual std::vector<Parameter<T>*> parameters() { return {}; }
  virtual std::vector<Buffer<T>*> buffers() { return {}; }

  const std::string& name() const noexcept { return name_; }
  Mode mode() const noexcept { return mode_; }
  void set_mode(Mode m) noexcept { mode_ = m; }

 protected:
  void require_cache(bool cached) const {
    if (!cached) throw StateError(name_ + ": backward called without a cached forward pass");
  }

 private:
  std::string name_;
  Mode mode_ = Mode::Train;
};

template <typename T>
class Linear final : public Layer<T> {
 public:
  Linear(std::string name, std::size_t in, std::size_t out, Rng& rng)
      : Layer<T>(name),
        weight_(name + ".weight", kaiming_normal<T>({in, out}, in, rng)),
        bias_(name + ".bias", Tensor<T>({out})) {}

  LayerKind kind() const override { return LayerKind::Linear; }
  std::size_t in_features() const { return weight_.value.dim(0); }
  std::size_t out_features() const { return weight_.value.dim(1); }
  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

  Tensor<T> forward(const Tensor<T>& x, Rng*) override {
    const std::size_t n = in_features(), m = out_features();
    if (x.rank() != 2 || x.dim(1) != n) {
      throw ShapeError(this->name() + ": expected [B," + std::to_string(n) + "], got " + shape_str(x.shape()));
    }
    const std::size_t batch = x.dim(0);
    Tensor<T> y({batch, m});
    ConstMatMap<T> X(x.data(), batch, n);
    ConstMatMap<T> W(weight_.value.data(), n, m);
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias_.value.data(), m);
    MatMap<T> Y(y.data(), batch, m);
    Y.noalias() = X * W;
    Y.rowwise() += b;
    input_ = x;
    cached_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    this->require_cache(cached_);
    cached_ = false;
    const std::size_t n = in_features(), m = out_features(), batch = input_.dim(0);
    if (grad_out.rank() != 2 || grad_out.dim(0) != batch || grad_out.dim(1) != m) {
      throw ShapeError(this->name() + ": grad_out shape mismatch");
    }
    ConstMatMap<T> X(input_.data(), batch, n);
    ConstMatMap<T> dY(grad_out.data(), batch, m);
    ConstMatMap<T> W(weight_.value.data(), n, m);
    MatMap<T> dW(weight_.grad.data(), n, m);
    dW.noalias() += X.transpose() * dY;
    // Plain loops: Eigen's vectorised reductions peel by pointer alignment,
    // which would make the summation order (and the bits) allocation-dependent.
    T* db = bias_.grad.data();
    for (std::size_t b = 0; b < batch; ++b) {
      const T* row = grad_out.data() + b * m;
      for (std::size_t j = 0; j < m; ++j) db[j] += row[j];
    }
    Tensor<T> dx({batch, n});
    MatMap<T> dX(dx.data(), batch, n);
    dX.noalias() = dY * W.transpose();
    return dx;
  }

  std::vector<Parameter<T>*> parameters() override { return {&weight_, &bias_}; }

 private:
  Parameter<T> weight_, bias_;
  Tensor<T> input_;
  bool cached_ = false;
};

/// 3x3 cross-correlation, stride 1, zero padding 1, via im2col and GEMM.
template <typename T>
class Conv3x3 final : public Layer<T> {
 public:
  Conv3x3(std::string name, std::size_t in_channels, std::size_t out_channels, Rng& rng)
      : Layer<T>(name),
        weight_(name + ".weight", kaiming_normal<T>({out_channels, in_channels, 3, 3}, in_channels * 9, rng)),
        bias_(name + ".bias", Tensor<T>({out_channels})) {}

  LayerKind kind() const override { return LayerKind::Conv3x3; }
  std::size_t in_channels() const { return weight_.value.dim(1); }
  std::size_t out_channels() const { return weight_.value.dim(0); }
  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

  Tensor<T> forward(const Tensor<T>& x, Rng*) override {
    const std::size_t cin = in_channels(), cout = out_channels();
    if (x.rank() != 4 || x.dim(1) != cin) {
      throw ShapeError(this->name() + ": expected [B," + std::to_string(cin) + ",H,W], got " +
                       shape_str(x.shape()));
    }
    const std::size_t batch = x.dim(0), h = x.dim(2), w = x.dim(3), hw = h * w;
    Tensor<T> y({batch, cout, h, w});
    std::vector<T> col(cin * 9 * hw);
    ConstMatMap<T> K(weight_.value.data(), cout, cin * 9);
    for (std::size_t b = 0; b < batch; ++b) {
      im2col(x.data() + b * cin * hw, cin, h, w, col.data());
      MatMap<T> Y(y.data() + b * cout * hw, cout, hw);
      Y.noalias() = K * ConstMatMap<T>(col.data(), cin * 9, hw);
      for (std::size_t c = 0; c < cout; ++c) Y.row(c).array() += bias_.value[c];
    }
    input_ = x;
    cached_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    this->require_cache(cached_);
    cached_ = false;
    const std::size_t cin = in_channels(), cout = out_channels();
    const std::size_t batch = input_.dim(0), h = input_.dim(2), w = input_.dim(3), hw = h * w;
    if (grad_out.shape() != Shape{batch, cout, h, w}) throw ShapeError(this->name() + ": grad_out shape mismatch");
    Tensor<T> dx(input_.shape());
    std::vector<T> col(cin * 9 * hw), dcol(cin * 9 * hw);
    ConstMatMap<T> K(weight_.value.data(), cout, cin * 9);
    MatMap<T> dK(weight_.grad.data(), cout, cin * 9);
    for (std::size_t b = 0; b < batch; ++b) {
      im2col(input_.data() + b * cin * hw, cin, h, w, col.data());
      ConstMatMap<T> dY(grad_out.data() + b * cout * hw, cout, hw);
      ConstMatMap<T> C(col.data(), cin * 9, hw);
      dK.noalias() += dY * C.transpose();
      for (std::size_t c = 0; c < cout; ++c) {
        const T* row = grad_out.data() + (b * cout + c) * hw;
        T s = T(0);
        for (std::size_t i = 0; i < hw; ++i) s += row[i];
        bias_.grad[c] += s;
      }
      MatMap<T> dC(dcol.data(), cin * 9, hw);
      dC.noalias() = K.transpose() * dY;
      col2im(dcol.data(), cin, h, w, dx.data() + b * cin * hw);
    }
    return dx;
  }

  std::vector<Parameter<T>*> parameters() override { return {&weight_, &bias_}; }

 private:
  // col[(c*9 + ky*3 + kx), (y*w + x)] = in[c, y+ky-1, x+kx-1] (zero outside).
  static void im2col(const T* in, std::size_t cin, std::size_t h, std::size_t w, T* col) {
    for (std::size_t c = 0; c < cin; ++c) {
      const T* plane = in + c * h * w;
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          T* dst = col + (c * 9 + ky * 3 + kx) * h * w;
          for (std::size_t y = 0; y < h; ++y) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
            T* row = dst + y * w;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
              std::fill(row, row + w, T(0));
              continue;
            }
            const T* src = plane + static_cast<std::size_t>(sy) * w;
            for (std::size_t x = 0; x < w; ++x) {
              const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
              row[x] = (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) ? T(0) : src[sx];
            }
          }
        }
      }
    }
  }

  static void col2im(const T* col, std::size_t cin, std::size_t h, std::size_t w, T* out) {
    for (std::size_t c = 0; c < cin; ++c) {
      T* plane = out + c * h * w;
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const T* src = col + (c * 9 + ky * 3 + kx) * h * w;
          for (std::size_t y = 0; y < h; ++y) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
            T* dst = plane + static_cast<std::size_t>(sy) * w;
            const T* row = src + y * w;
            for (std::size_t x = 0; x < w; ++x) {
              const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
              if (sx >= 0 && sx < static_cast<std::ptrdiff_t>(w)) dst[sx] += row[x];
            }
          }
        }
      }
    }
  }

  Parameter<T> weight_, bias_;
  Tensor<T> input_;
  bool cached_ = false;
};

/// Batch normalisation over [B,C] or [B,C,H,W] inputs, statistics per channel.
/// Train mode normalises with biased batch variance and updates running
/// statistics (momentum 0.1, unbiased variance); eval mode uses the running statistics.
template <typename T>
class BatchNorm final : public Layer<T> {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm(std::string name, std::size_t features)
      : Layer<T>(name),
        gamma_(name + ".gamma", Tensor<T>({features}, T(1))),
        beta_(name + ".beta", Tensor<T>({features}, T(0))),
        running_mean_{name + ".running_mean", Tensor<T>({features}, T(0))},
        running_var_{name + ".running_var", Tensor<T>({features}, T(1))} {}

  LayerKind kind() const override { return LayerKind::BatchNorm; }
  std::size_t features() const { return gamma_.value.size(); }
  Parameter<T>& gamma() { return gamma_; }
  Parameter<T>& beta() { return beta_; }
  Buffer<T>& running_mean() { return running_mean_; }
  Buffer<T>& running_var() { return running_var_; }

  Tensor<T> forward(const Tensor<T>& x, Rng*) override {
    const std::size_t C = features();
    if ((x.rank() != 2 && x.rank() != 4) || x.dim(1) != C) {
      throw ShapeError(this->name() + ": expected [B," + std::to_string(C) + "(,H,W)], got " +
                       shape_str(x.shape()));
    }
    const std::size_t batch = x.dim(0);
    const std::size_t spatial = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
    const std::size_t count = batch * spatial;
    Tensor<T> y(x.shape());
    xhat_ = Tensor<T>(x.shape());
    inv_std_.assign(C, 0.0);
    train_cache_ = this->mode() == Mode::Train;

    if (train_cache_ && batch < 2) {
      throw ParameterError(this->name() + ": train-mode batch norm needs a batch of at least 2");
    }
    for (std::size_t c = 0; c < C; ++c) {
      double mean, var;
      if (train_cache_) {
        // Shifted single-pass moments; the shift (first sample) keeps the
        // sum of squares well conditioned.
        const double shift = static_cast<double>(x[c * spatial]);
        double sum = 0.0, sq = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
          const T* p = x.data() + (b * C + c) * spatial;
          for (std::size_t s = 0; s < spatial; ++s) {
            const double d = static_cast<double>(p[s]) - shift;
            sum += d;
            sq += d * d;
          }
        }
        const double cnt = static_cast<double>(count);
        const double dmean = sum / cnt;
        mean = shift + dmean;
        const double m2 = std::max(0.0, sq - sum * dmean);
        var = m2 / cnt;
        const double unbiased = m2 / (cnt - 1.0);
        running_mean_.value[c] =
            static_cast<T>((1.0 - kMomentum) * static_cast<double>(running_mean_.value[c]) + kMomentum * mean);
        running_var_.value[c] =
            static_cast<T>((1.0 - kMomentum) * static_cast<double>(running_var_.value[c]) + kMomentum * unbiased);
      } else {
        mean = static_cast<double>(running_mean_.value[c]);
        var = static_cast<double>(running_var_.value[c]);
      }
      const double inv = 1.0 / std::sqrt(var + kEps);
      inv_std_[c] = inv;
      const double g = static_cast<double>(gamma_.value[c]), bt = static_cast<double>(beta_.value[c]);
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t base = (b * C + c) * spatial;
        for (std::size_t s = 0; s < spatial; ++s) {
          const double xh = (static_cast<double>(x[base + s]) - mean) * inv;
          xhat_[base + s] = static_cast<T>(xh);
          y[base + s] = static_cast<T>(g * xh + bt);
        }
      }
    }
    cached_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    this->require_cache(cached_);
    cached_ = false;
    if (grad_out.shape() != xhat_.shape()) throw ShapeError(this->name() + ": grad_out shape mismatch");
    const std::size_t C = features(), batch = xhat_.dim(0);
    const std::size_t spatial = xhat_.rank() == 4 ? xhat_.dim(2) * xhat_.dim(3) : 1;
    const double n = static_cast<double>(batch * spatial);
    Tensor<T> dx(xhat_.shape());
    for (std::size_t c = 0; c < C; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t base = (b * C + c) * spatial;
        for (std::size_t s = 0; s < spatial; ++s) {
          const double dy = static_cast<double>(grad_out[base + s]);
          sum_dy += dy;
          sum_dy_xhat += dy * static_cast<double>(xhat_[base + s]);
        }
      }
      gamma_.grad[c] += static_cast<T>(sum_dy_xhat);
      beta_.grad[c] += static_cast<T>(sum_dy);
      const double g = static_cast<double>(gamma_.value[c]), inv = inv_std_[c];
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t base = (b * C + c) * spatial;
        for (std::size_t s = 0; s < spatial; ++s) {
          const double dy = static_cast<double>(grad_out[base + s]);
          if (train_cache_) {
            const double xh = static_cast<double>(xhat_[base + s]);
            dx[base + s] = static_cast<T>(g * inv * (dy - sum_dy / n - xh * sum_dy_xhat / n));
          } else {
            dx[base + s] = static_cast<T>(g * inv * dy);
          }
        }
      }
    }
    return dx;
  }

  std::vector<Parameter<T>*> parameters() override { return {&gamma_, &beta_}; }
  std::vector<Buffer<T>*> buffers() override { return {&running_mean_, &running_var_}; }

 private:
  Parameter<T> gamma_, beta_;
  Buffer<T> running_mean_, running_var_;
  Tensor<T> xhat_;
  std::vector<double> inv_std_;
  bool train_cache_ = false;
  bool cached_ = false;
};

template <typename T>
class ReLU final : public Layer<T> {
 public:
  explicit ReLU(std::string name) : Layer<T>(std::move(name)) {}
  LayerKind kind() const override { return LayerKind::ReLU; }

  Tensor<T> forward(const Tensor<T>& x, Rng*) override {
    Tensor<T> y(x.shape());
    active_.resize(x.size());
    const T* in = x.data();
    T* out = y.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const bool on = in[i] > T(0);
      active_[i] = on;
      out[i] = on ? in[i] : T(0);
    }
    shape_ = x.shape();
    cached_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    this->require_cache(cached_);
    cached_ = false;
    if (grad_out.shape() != shape_) throw ShapeError(this->name() + ": grad_out shape mismatch");
    Tensor<T> dx(shape_);
    const T* g = grad_out.data();
    T* out = dx.data();
    for (std::size_t i = 0; i < dx.size(); ++i) out[i] = active_[i] ? g[i] : T(0);
    return dx;
  }

 private:
  std::vector<std::uint8_t> active_;
  Shape shape_;
  bool cached_ = false;
};

/// Inverted dropout: train mode zeroes with probability p and scales the
/// survivors by 1/(1-p); eval mode is the identity.
template <typename T>
class Dropout final : public Layer<T> {
 public:
  Dropout(std::string name, double p) : Layer<T>(std::move(name)), p_(p) {
    if (!(p >= 0.0 && p < 1.0)) throw ParameterError("Dropout: p must lie in [0,1)");
  }
  LayerKind kind() const override { return LayerKind::Dropout; }
  double probability() const noexcept { return p_; }
  /// True when forward draws random numbers.
  bool stochastic() const noexcept { return this->mode() == Mode::Train && p_ > 0.0; }

  Tensor<T> forward(const Tensor<T>& x, Rng* rng) override {
    if (!stochastic()) {
      mask_ = Tensor<T>(x.shape(), T(1));
      cached_ = true;
      return x;
    }
    if (rng == nullptr) throw StateError(this->name() + ": train-mode dropout requires an rng");
    const T scale = static_cast<T>(1.0 / (1.0 - p_));
    mask_ = Tensor<T>(x.shape());
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask_[i] = rng->uniform() < p_ ? T(0) : scale;
      y[i] = x[i] * mask_[i];
    }
    cached_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    this->require_cache(cached_);
    cached_ = false;
    if (grad_out.shape() != mask_.shape()) throw ShapeError(this->name() + ": grad_out shape mismatch");
    Tensor<T> dx(grad_out.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = grad_out[i] * mask_[i];
    return dx;
  }

 private:
  double p_;
  Tensor<T> mask_;
  bool cached_ = false;
};

/// Non-overlapping 2x2 max pooling over [B,C,H,W]; H and W must be even.
template <typename T>
class MaxPool2x2 final : public Layer<T> {
 public:
  explicit MaxPool2x2(std::string name) : Layer<T>(std::move(name)) {}
  LayerKind kind() const override { return LayerKind::MaxPool2x2; }

  Tensor<T> forward(const Tensor<T>& x, Rng*) override {
    if (x.rank() != 4) throw ShapeError(this->name() + ": expected [B,C,H,W]");
    const std::size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0) throw ShapeError(this->name() + ": spatial dims must be even");
    const std::size_t oh = h / 2, ow = w / 2;
    Tensor<T> y({batch, ch, oh, ow});
    argmax_.assign(y.size(), 0);
    for (std::size_t p = 0; p < batch * ch; ++p) {
      const T* in = x.data() + p * h * w;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          std::size_t best = (2 * oy) * w + 2 * ox;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx = (2 * oy + dy) * w + 2 * ox + dx;
              if (in[idx] > in[best]) best = idx;
            }
          }
          const std::size_t o = p * oh * ow + oy * ow + ox;
          y[o] = in[best];
          argmax_[o] = p * h * w + best;
        }
      }
    }
    input_shape_ = x.shape();
    cached_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    this->require_cache(cached_);
    cached_ = false;
    if (grad_out.size() != argmax_.size()) throw ShapeError(this->name() + ": grad_out shape mismatch");
    Tensor<T> dx(input_shape_);
    for (std::size_t o = 0; o < argmax_.size(); ++o) dx[argmax_[o]] += grad_out[o];
    return dx;
  }

 private:
  std::vector<std::size_t> argmax_;
  Shape input_shape_;
  bool cached_ = false;
};

template <typename T>
class Flatten final : public Layer<T> {
 public:
  explicit Flatten(std::string name) : Layer<T>(std::move(name)) {}
  LayerKind kind() const override { return LayerKind::Flatten; }

  Tensor<T> forward(const Tensor<T>& x, Rng*) override {
    if (x.rank() < 2) throw ShapeError(this->name() + ": expected a batched tensor");
    input_shape_ = x.shape();
    Tensor<T> y = x;
    y.reshape({x.dim(0), x.size() / x.dim(0)});
    cached_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    this->require_cache(cached_);
    cached_ = false;
    Tensor<T> dx = grad_out;
    dx.reshape(input_shape_);
    return dx;
  }

 private:
  Shape input_shape_;
  bool cached_ = false;
};

}  // namespace s2p::nn

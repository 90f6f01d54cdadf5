// Copyright 2026 The ptxseg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Core>

#if defined(__F16C__)
#include <immintrin.h>
#endif

#include "ptxseg/nn/half.hpp"
#include "ptxseg/rng.hpp"
#include "ptxseg/tensor.hpp"

namespace ptxseg::nn {

/// Forward-pass switches shared by every layer.
struct Context {
  bool train = false;
  /// Emulated reduced precision: activations and gradients at layer boundaries are rounded to binary16.
  bool half = false;
};

/// A named tensor owned by a layer. `grad` is null for buffers (e.g. running statistics).
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value = nullptr;
  Tensor<T>* grad = nullptr;
};

template <typename T>
using ParamList = std::vector<ParamRef<T>>;

template <typename T>
void round_tensor_to_half(Tensor<T>& t) {
  auto& s = t.storage();
  std::size_t i = 0;
#if defined(__F16C__)
  if constexpr (std::is_same_v<T, float>) {
    // Hardware conversion: round-to-nearest-even, overflow to infinity, subnormals preserved.
    for (; i + 8 <= s.size(); i += 8) {
      const __m128i h = _mm256_cvtps_ph(_mm256_loadu_ps(s.data() + i), _MM_FROUND_TO_NEAREST_INT);
      _mm256_storeu_ps(s.data() + i, _mm256_cvtph_ps(h));
    }
  }
#endif
  for (; i < s.size(); ++i) s[i] = round_to_half(s[i]);
}

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, const Context& ctx) = 0;
  /// Gradient w.r.t. the input of the most recent forward; accumulates parameter gradients.
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual void parameters(ParamList<T>& /*out*/, const std::string& /*prefix*/) {}
};

template <typename T>
using LayerPtr = std::unique_ptr<Layer<T>>;

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
void kaiming_normal(Tensor<T>& w, int fan_in, Rng& rng) {
  const double std = std::sqrt(2.0 / std::max(fan_in, 1));
  for (auto& v : w.storage()) v = static_cast<T>(rng.normal() * std);
}

inline int conv_out_size(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

/// Dense 2-D convolution via im2col + GEMM. Weight layout [cout, cin, k, k].
template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(int cin, int cout, int kernel, int stride, int pad, bool bias, Rng& rng)
      : cin_(cin), cout_(cout), k_(kernel), stride_(stride), pad_(pad), has_bias_(bias),
        weight_(cout, cin, kernel, kernel), weight_grad_(cout, cin, kernel, kernel) {
    kaiming_normal(weight_, cin * kernel * kernel, rng);
    if (bias) {
      bias_ = Tensor<T>(1, cout, 1, 1);
      bias_grad_ = Tensor<T>(1, cout, 1, 1);
    }
  }

  Tensor<T> forward(const Tensor<T>& x, const Context&) override {
    if (x.c() != cin_) {
      throw std::invalid_argument("Conv2d: expected " + std::to_string(cin_) + " channels, got " + x.shape_string());
    }
    input_ = x;
    const int oh = conv_out_size(x.h(), k_, stride_, pad_);
    const int ow = conv_out_size(x.w(), k_, stride_, pad_);
    Tensor<T> y(x.n(), cout_, oh, ow);
    const int kdim = cin_ * k_ * k_;
    const int ohw = oh * ow;
    ConstMatMap<T> w(weight_.data(), cout_, kdim);
    for (int n = 0; n < x.n(); ++n) {
      MatMap<T> out(y.sample(n), cout_, ohw);
      if (pointwise()) {
        out.noalias() = w * ConstMatMap<T>(x.sample(n), cin_, ohw);
      } else {
        im2col(x, n, oh, ow);
        out.noalias() = w * ConstMatMap<T>(col_.data(), kdim, ohw);
      }
      if (has_bias_) {
        for (int c = 0; c < cout_; ++c) out.row(c).array() += bias_.data()[c];
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const Tensor<T>& x = input_;
    Tensor<T> gx(x.n(), x.c(), x.h(), x.w());
    const int oh = gy.h();
    const int ow = gy.w();
    const int kdim = cin_ * k_ * k_;
    const int ohw = oh * ow;
    ConstMatMap<T> w(weight_.data(), cout_, kdim);
    MatMap<T> gw(weight_grad_.data(), cout_, kdim);
    for (int n = 0; n < x.n(); ++n) {
      ConstMatMap<T> g(gy.sample(n), cout_, ohw);
      if (has_bias_) {
        for (int c = 0; c < cout_; ++c) bias_grad_.data()[c] += g.row(c).sum();
      }
      if (pointwise()) {
        gw.noalias() += g * ConstMatMap<T>(x.sample(n), cin_, ohw).transpose();
        MatMap<T>(gx.sample(n), cin_, ohw).noalias() = w.transpose() * g;
      } else {
        im2col(x, n, oh, ow);
        gw.noalias() += g * ConstMatMap<T>(col_.data(), kdim, ohw).transpose();
        MatMap<T> gcol(col_.data(), kdim, ohw);
        gcol.noalias() = w.transpose() * g;
        col2im(gx, n, oh, ow);
      }
    }
    return gx;
  }

  void parameters(ParamList<T>& out, const std::string& prefix) override {
    out.push_back({prefix + "weight", &weight_, &weight_grad_});
    if (has_bias_) out.push_back({prefix + "bias", &bias_, &bias_grad_});
  }

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

 private:
  bool pointwise() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }

  void im2col(const Tensor<T>& x, int n, int oh, int ow) {
    const int h = x.h();
    const int w = x.w();
    col_.assign(static_cast<std::size_t>(cin_) * k_ * k_ * oh * ow, T(0));
    T* dst = col_.data();
    for (int c = 0; c < cin_; ++c) {
      const T* src = x.channel(n, c);
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= h) {
              dst += ow;
              continue;
            }
            const T* row = src + static_cast<std::size_t>(iy) * w;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride_ - pad_ + kx;
              *dst++ = (ix >= 0 && ix < w) ? row[ix] : T(0);
            }
          }
        }
      }
    }
  }

  void col2im(Tensor<T>& gx, int n, int oh, int ow) const {
    const int h = gx.h();
    const int w = gx.w();
    const T* src = col_.data();
    for (int c = 0; c < cin_; ++c) {
      T* dst = gx.channel(n, c);
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= h) {
              src += ow;
              continue;
            }
            T* row = dst + static_cast<std::size_t>(iy) * w;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix >= 0 && ix < w) row[ix] += *src;
              ++src;
            }
          }
        }
      }
    }
  }

  int cin_, cout_, k_, stride_, pad_;
  bool has_bias_;
  Tensor<T> weight_, weight_grad_, bias_, bias_grad_;
  Tensor<T> input_;
  AlignedVector<T> col_;
};

/// Per-channel k x k convolution, no bias. Weight layout [c, 1, k, k].
template <typename T>
class DepthwiseConv2d final : public Layer<T> {
 public:
  DepthwiseConv2d(int channels, int kernel, int stride, Rng& rng)
      : c_(channels), k_(kernel), stride_(stride), pad_(kernel / 2),
        weight_(channels, 1, kernel, kernel), weight_grad_(channels, 1, kernel, kernel) {
    kaiming_normal(weight_, kernel * kernel, rng);
  }

  Tensor<T> forward(const Tensor<T>& x, const Context&) override {
    if (x.c() != c_) throw std::invalid_argument("DepthwiseConv2d: channel mismatch " + x.shape_string());
    input_ = x;
    const int oh = conv_out_size(x.h(), k_, stride_, pad_);
    const int ow = conv_out_size(x.w(), k_, stride_, pad_);
    Tensor<T> y(x.n(), c_, oh, ow);
    for (int n = 0; n < x.n(); ++n) {
      for (int c = 0; c < c_; ++c) {
        const T* src = x.channel(n, c);
        const T* wk = weight_.data() + static_cast<std::size_t>(c) * k_ * k_;
        T* dst = y.channel(n, c);
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            T acc = 0;
            for (int ky = 0; ky < k_; ++ky) {
              const int iy = oy * stride_ - pad_ + ky;
              if (iy < 0 || iy >= x.h()) continue;
              for (int kx = 0; kx < k_; ++kx) {
                const int ix = ox * stride_ - pad_ + kx;
                if (ix < 0 || ix >= x.w()) continue;
                acc += src[iy * x.w() + ix] * wk[ky * k_ + kx];
              }
            }
            dst[oy * ow + ox] = acc;
          }
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const Tensor<T>& x = input_;
    Tensor<T> gx(x.n(), x.c(), x.h(), x.w());
    const int oh = gy.h();
    const int ow = gy.w();
    for (int n = 0; n < x.n(); ++n) {
      for (int c = 0; c < c_; ++c) {
        const T* src = x.channel(n, c);
        const T* g = gy.channel(n, c);
        const T* wk = weight_.data() + static_cast<std::size_t>(c) * k_ * k_;
        T* gw = weight_grad_.data() + static_cast<std::size_t>(c) * k_ * k_;
        T* gsrc = gx.channel(n, c);
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            const T go = g[oy * ow + ox];
            if (go == T(0)) continue;
            for (int ky = 0; ky < k_; ++ky) {
              const int iy = oy * stride_ - pad_ + ky;
              if (iy < 0 || iy >= x.h()) continue;
              for (int kx = 0; kx < k_; ++kx) {
                const int ix = ox * stride_ - pad_ + kx;
                if (ix < 0 || ix >= x.w()) continue;
                gw[ky * k_ + kx] += go * src[iy * x.w() + ix];
                gsrc[iy * x.w() + ix] += go * wk[ky * k_ + kx];
              }
            }
          }
        }
      }
    }
    return gx;
  }

  void parameters(ParamList<T>& out, const std::string& prefix) override {
    out.push_back({prefix + "weight", &weight_, &weight_grad_});
  }

 private:
  int c_, k_, stride_, pad_;
  Tensor<T> weight_, weight_grad_;
  Tensor<T> input_;
};

/// Batch normalization over (N, H, W). Batch statistics in training, running statistics otherwise.
template <typename T>
class BatchNorm2d final : public Layer<T> {
 public:
  explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5)
      : c_(channels), momentum_(momentum), eps_(eps), gamma_(1, channels, 1, 1, T(1)),
        beta_(1, channels, 1, 1), gamma_grad_(1, channels, 1, 1), beta_grad_(1, channels, 1, 1),
        running_mean_(1, channels, 1, 1), running_var_(1, channels, 1, 1, T(1)) {}

  Tensor<T> forward(const Tensor<T>& x, const Context& ctx) override {
    if (x.c() != c_) throw std::invalid_argument("BatchNorm2d: channel mismatch " + x.shape_string());
    train_ = ctx.train;
    Tensor<T> y(x.n(), x.c(), x.h(), x.w());
    const std::size_t plane = x.plane();
    const double count = static_cast<double>(x.n()) * plane;
    xhat_ = Tensor<T>(x.n(), x.c(), x.h(), x.w());
    inv_std_.assign(c_, T(0));
    for (int c = 0; c < c_; ++c) {
      double mean = 0;
      double var = 0;
      if (train_) {
        for (int n = 0; n < x.n(); ++n) {
          const T* p = x.channel(n, c);
          for (std::size_t i = 0; i < plane; ++i) mean += p[i];
        }
        mean /= count;
        for (int n = 0; n < x.n(); ++n) {
          const T* p = x.channel(n, c);
          for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mean) * (p[i] - mean);
        }
        var /= count;
        const double unbiased = count > 1 ? var * count / (count - 1) : var;
        running_mean_.data()[c] = static_cast<T>((1 - momentum_) * running_mean_.data()[c] + momentum_ * mean);
        running_var_.data()[c] = static_cast<T>((1 - momentum_) * running_var_.data()[c] + momentum_ * unbiased);
      } else {
        mean = running_mean_.data()[c];
        var = running_var_.data()[c];
      }
      const T inv = static_cast<T>(1.0 / std::sqrt(var + eps_));
      inv_std_[c] = inv;
      const T g = gamma_.data()[c];
      const T b = beta_.data()[c];
      const T m = static_cast<T>(mean);
      for (int n = 0; n < x.n(); ++n) {
        const T* p = x.channel(n, c);
        T* xh = xhat_.channel(n, c);
        T* q = y.channel(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          xh[i] = (p[i] - m) * inv;
          q[i] = g * xh[i] + b;
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> gx(gy.n(), gy.c(), gy.h(), gy.w());
    const std::size_t plane = gy.plane();
    const double count = static_cast<double>(gy.n()) * plane;
    for (int c = 0; c < c_; ++c) {
      double sum_g = 0;
      double sum_gx = 0;
      for (int n = 0; n < gy.n(); ++n) {
        const T* g = gy.channel(n, c);
        const T* xh = xhat_.channel(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          sum_g += g[i];
          sum_gx += g[i] * xh[i];
        }
      }
      beta_grad_.data()[c] += static_cast<T>(sum_g);
      gamma_grad_.data()[c] += static_cast<T>(sum_gx);
      const T scale = gamma_.data()[c] * inv_std_[c];
      const T mean_g = static_cast<T>(sum_g / count);
      const T mean_gx = static_cast<T>(sum_gx / count);
      for (int n = 0; n < gy.n(); ++n) {
        const T* g = gy.channel(n, c);
        const T* xh = xhat_.channel(n, c);
        T* out = gx.channel(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          out[i] = train_ ? scale * (g[i] - mean_g - xh[i] * mean_gx) : scale * g[i];
        }
      }
    }
    return gx;
  }

  void parameters(ParamList<T>& out, const std::string& prefix) override {
    out.push_back({prefix + "gamma", &gamma_, &gamma_grad_});
    out.push_back({prefix + "beta", &beta_, &beta_grad_});
    out.push_back({prefix + "running_mean", &running_mean_, nullptr});
    out.push_back({prefix + "running_var", &running_var_, nullptr});
  }

 private:
  int c_;
  double momentum_, eps_;
  bool train_ = false;
  Tensor<T> gamma_, beta_, gamma_grad_, beta_grad_, running_mean_, running_var_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

enum class Activation { relu, swish, sigmoid };

template <typename T>
class ActivationLayer final : public Layer<T> {
 public:
  explicit ActivationLayer(Activation kind) : kind_(kind) {}

  Tensor<T> forward(const Tensor<T>& x, const Context&) override {
    input_ = x;
    Tensor<T> y = x;
    for (auto& v : y.storage()) v = apply(v);
    output_ = y;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> gx = gy;
    auto& g = gx.storage();
    const auto& x = input_.storage();
    const auto& y = output_.storage();
    for (std::size_t i = 0; i < g.size(); ++i) {
      switch (kind_) {
        case Activation::relu: g[i] = x[i] > T(0) ? g[i] : T(0); break;
        case Activation::sigmoid: g[i] *= y[i] * (T(1) - y[i]); break;
        case Activation::swish: {
          const T s = sigmoid(x[i]);
          g[i] *= s * (T(1) + x[i] * (T(1) - s));
          break;
        }
      }
    }
    return gx;
  }

  static T sigmoid(T v) {
    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
    const T e = std::exp(v);
    return e / (T(1) + e);
  }

 private:
  T apply(T v) const {
    switch (kind_) {
      case Activation::relu: return v > T(0) ? v : T(0);
      case Activation::sigmoid: return sigmoid(v);
      case Activation::swish: return v * sigmoid(v);
    }
    return v;
  }

  Activation kind_;
  Tensor<T> input_, output_;
};

/// Ordered chain of layers. Applies binary16 rounding between layers when the context asks for it.
template <typename T>
class Sequential final : public Layer<T> {
 public:
  Sequential() = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto p = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *p;
    layers_.push_back(std::move(p));
    return ref;
  }

  void push(LayerPtr<T> layer) { layers_.push_back(std::move(layer)); }

  Tensor<T> forward(const Tensor<T>& x, const Context& ctx) override {
    half_ = ctx.half;
    Tensor<T> h = x;
    for (auto& l : layers_) {
      h = l->forward(h, ctx);
      if (half_) round_tensor_to_half(h);
    }
    return h;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> g = gy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
      g = (*it)->backward(g);
      if (half_) round_tensor_to_half(g);
    }
    return g;
  }

  void parameters(ParamList<T>& out, const std::string& prefix) override {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      layers_[i]->parameters(out, prefix + std::to_string(i) + ".");
    }
  }

  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }

 private:
  std::vector<LayerPtr<T>> layers_;
  bool half_ = false;
};

/// Squeeze-and-excitation gate: x * sigmoid(W2 swish(W1 avgpool(x) + b1) + b2).
template <typename T>
class SqueezeExcite final : public Layer<T> {
 public:
  SqueezeExcite(int channels, int reduced, Rng& rng)
      : c_(channels), r_(reduced), w1_(1, 1, reduced, channels), b1_(1, 1, 1, reduced),
        w2_(1, 1, channels, reduced), b2_(1, 1, 1, channels), gw1_(1, 1, reduced, channels),
        gb1_(1, 1, 1, reduced), gw2_(1, 1, channels, reduced), gb2_(1, 1, 1, channels) {
    kaiming_normal(w1_, channels, rng);
    kaiming_normal(w2_, reduced, rng);
  }

  Tensor<T> forward(const Tensor<T>& x, const Context&) override {
    input_ = x;
    const int n_batch = x.n();
    const std::size_t plane = x.plane();
    pooled_.assign(static_cast<std::size_t>(n_batch) * c_, T(0));
    hidden_pre_.assign(static_cast<std::size_t>(n_batch) * r_, T(0));
    gate_.assign(static_cast<std::size_t>(n_batch) * c_, T(0));
    Tensor<T> y(x.n(), x.c(), x.h(), x.w());
    for (int n = 0; n < n_batch; ++n) {
      T* pool = pooled_.data() + static_cast<std::size_t>(n) * c_;
      for (int c = 0; c < c_; ++c) {
        const T* p = x.channel(n, c);
        T s = 0;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
        pool[c] = s / static_cast<T>(plane);
      }
      T* hp = hidden_pre_.data() + static_cast<std::size_t>(n) * r_;
      for (int j = 0; j < r_; ++j) {
        T s = b1_.data()[j];
        for (int c = 0; c < c_; ++c) s += w1_.data()[j * c_ + c] * pool[c];
        hp[j] = s;
      }
      T* gate = gate_.data() + static_cast<std::size_t>(n) * c_;
      for (int c = 0; c < c_; ++c) {
        T s = b2_.data()[c];
        for (int j = 0; j < r_; ++j) s += w2_.data()[c * r_ + j] * swish(hp[j]);
        gate[c] = ActivationLayer<T>::sigmoid(s);
        const T* p = x.channel(n, c);
        T* q = y.channel(n, c);
        for (std::size_t i = 0; i < plane; ++i) q[i] = p[i] * gate[c];
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const Tensor<T>& x = input_;
    const std::size_t plane = x.plane();
    Tensor<T> gx(x.n(), x.c(), x.h(), x.w());
    std::vector<T> g_gate_pre(c_);
    std::vector<T> g_hidden(r_);
    std::vector<T> g_pool(c_);
    for (int n = 0; n < x.n(); ++n) {
      const T* gate = gate_.data() + static_cast<std::size_t>(n) * c_;
      const T* hp = hidden_pre_.data() + static_cast<std::size_t>(n) * r_;
      const T* pool = pooled_.data() + static_cast<std::size_t>(n) * c_;
      for (int c = 0; c < c_; ++c) {
        const T* g = gy.channel(n, c);
        const T* p = x.channel(n, c);
        T* out = gx.channel(n, c);
        T dot = 0;
        for (std::size_t i = 0; i < plane; ++i) {
          dot += g[i] * p[i];
          out[i] = g[i] * gate[c];
        }
        g_gate_pre[c] = dot * gate[c] * (T(1) - gate[c]);
      }
      std::fill(g_hidden.begin(), g_hidden.end(), T(0));
      for (int c = 0; c < c_; ++c) {
        gb2_.data()[c] += g_gate_pre[c];
        for (int j = 0; j < r_; ++j) {
          gw2_.data()[c * r_ + j] += g_gate_pre[c] * swish(hp[j]);
          g_hidden[j] += g_gate_pre[c] * w2_.data()[c * r_ + j];
        }
      }
      std::fill(g_pool.begin(), g_pool.end(), T(0));
      for (int j = 0; j < r_; ++j) {
        const T s = ActivationLayer<T>::sigmoid(hp[j]);
        const T gh = g_hidden[j] * s * (T(1) + hp[j] * (T(1) - s));
        gb1_.data()[j] += gh;
        for (int c = 0; c < c_; ++c) {
          gw1_.data()[j * c_ + c] += gh * pool[c];
          g_pool[c] += gh * w1_.data()[j * c_ + c];
        }
      }
      for (int c = 0; c < c_; ++c) {
        const T add = g_pool[c] / static_cast<T>(plane);
        T* out = gx.channel(n, c);
        for (std::size_t i = 0; i < plane; ++i) out[i] += add;
      }
    }
    return gx;
  }

  void parameters(ParamList<T>& out, const std::string& prefix) override {
    out.push_back({prefix + "reduce.weight", &w1_, &gw1_});
    out.push_back({prefix + "reduce.bias", &b1_, &gb1_});
    out.push_back({prefix + "expand.weight", &w2_, &gw2_});
    out.push_back({prefix + "expand.bias", &b2_, &gb2_});
  }

 private:
  static T swish(T v) { return v * ActivationLayer<T>::sigmoid(v); }

  int c_, r_;
  Tensor<T> w1_, b1_, w2_, b2_, gw1_, gb1_, gw2_, gb2_;
  Tensor<T> input_;
  std::vector<T> pooled_, hidden_pre_, gate_;
};

/// Nearest-neighbour 2x upsampling.
template <typename T>
class Upsample2x final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, const Context&) override {
    Tensor<T> y(x.n(), x.c(), x.h() * 2, x.w() * 2);
    for (int n = 0; n < x.n(); ++n) {
      for (int c = 0; c < x.c(); ++c) {
        const T* src = x.channel(n, c);
        T* dst = y.channel(n, c);
        for (int yy = 0; yy < y.h(); ++yy) {
          const T* row = src + static_cast<std::size_t>(yy / 2) * x.w();
          for (int xx = 0; xx < y.w(); ++xx) dst[yy * y.w() + xx] = row[xx / 2];
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> gx(gy.n(), gy.c(), gy.h() / 2, gy.w() / 2);
    for (int n = 0; n < gy.n(); ++n) {
      for (int c = 0; c < gy.c(); ++c) {
        const T* src = gy.channel(n, c);
        T* dst = gx.channel(n, c);
        for (int yy = 0; yy < gy.h(); ++yy) {
          for (int xx = 0; xx < gy.w(); ++xx) dst[(yy / 2) * gx.w() + xx / 2] += src[yy * gy.w() + xx];
        }
      }
    }
    return gx;
  }
};

/// 2x2 stride-2 transposed convolution. Weight layout [cin, cout, 2, 2].
template <typename T>
class ConvTranspose2x2 final : public Layer<T> {
 public:
  ConvTranspose2x2(int cin, int cout, Rng& rng)
      : cin_(cin), cout_(cout), weight_(cin, cout, 2, 2), weight_grad_(cin, cout, 2, 2), bias_(1, cout, 1, 1),
        bias_grad_(1, cout, 1, 1) {
    kaiming_normal(weight_, cin, rng);
  }

  Tensor<T> forward(const Tensor<T>& x, const Context&) override {
    if (x.c() != cin_) throw std::invalid_argument("ConvTranspose2x2: channel mismatch " + x.shape_string());
    input_ = x;
    const int hw = x.h() * x.w();
    Tensor<T> y(x.n(), cout_, x.h() * 2, x.w() * 2);
    ConstMatMap<T> w(weight_.data(), cin_, cout_ * 4);
    RowMatrix<T> cols(cout_ * 4, hw);
    for (int n = 0; n < x.n(); ++n) {
      cols.noalias() = w.transpose() * ConstMatMap<T>(x.sample(n), cin_, hw);
      for (int co = 0; co < cout_; ++co) {
        T* dst = y.channel(n, co);
        for (int k = 0; k < 4; ++k) {
          const int dy = k / 2;
          const int dx = k % 2;
          const T* row = cols.data() + static_cast<std::size_t>(co * 4 + k) * hw;
          for (int yy = 0; yy < x.h(); ++yy) {
            for (int xx = 0; xx < x.w(); ++xx) {
              dst[(2 * yy + dy) * y.w() + 2 * xx + dx] = row[yy * x.w() + xx] + bias_.data()[co];
            }
          }
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const Tensor<T>& x = input_;
    const int hw = x.h() * x.w();
    Tensor<T> gx(x.n(), x.c(), x.h(), x.w());
    ConstMatMap<T> w(weight_.data(), cin_, cout_ * 4);
    MatMap<T> gw(weight_grad_.data(), cin_, cout_ * 4);
    RowMatrix<T> gcols(cout_ * 4, hw);
    for (int n = 0; n < x.n(); ++n) {
      for (int co = 0; co < cout_; ++co) {
        const T* src = gy.channel(n, co);
        for (int k = 0; k < 4; ++k) {
          const int dy = k / 2;
          const int dx = k % 2;
          T* row = gcols.data() + static_cast<std::size_t>(co * 4 + k) * hw;
          for (int yy = 0; yy < x.h(); ++yy) {
            for (int xx = 0; xx < x.w(); ++xx) {
              const T g = src[(2 * yy + dy) * gy.w() + 2 * xx + dx];
              row[yy * x.w() + xx] = g;
              bias_grad_.data()[co] += g;
            }
          }
        }
      }
      ConstMatMap<T> xin(x.sample(n), cin_, hw);
      gw.noalias() += xin * gcols.transpose();
      MatMap<T>(gx.sample(n), cin_, hw).noalias() = w * gcols;
    }
    return gx;
  }

  void parameters(ParamList<T>& out, const std::string& prefix) override {
    out.push_back({prefix + "weight", &weight_, &weight_grad_});
    out.push_back({prefix + "bias", &bias_, &bias_grad_});
  }

 private:
  int cin_, cout_;
  Tensor<T> weight_, weight_grad_, bias_, bias_grad_;
  Tensor<T> input_;
};

/// Channel concatenation of two tensors with equal N, H, W.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw std::invalid_argument("concat_channels: " + a.shape_string() + " vs " + b.shape_string());
  }
  Tensor<T> out(a.n(), a.c() + b.c(), a.h(), a.w());
  for (int n = 0; n < a.n(); ++n) {
    std::copy(a.sample(n), a.sample(n) + a.sample_stride(), out.sample(n));
    std::copy(b.sample(n), b.sample(n) + b.sample_stride(), out.sample(n) + a.sample_stride());
  }
  return out;
}

/// Inverse of concat_channels for gradients: splits off the first `first_channels` channels.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& g, int first_channels) {
  Tensor<T> a(g.n(), first_channels, g.h(), g.w());
  Tensor<T> b(g.n(), g.c() - first_channels, g.h(), g.w());
  for (int n = 0; n < g.n(); ++n) {
    std::copy(g.sample(n), g.sample(n) + a.sample_stride(), a.sample(n));
    std::copy(g.sample(n) + a.sample_stride(), g.sample(n) + g.sample_stride(), b.sample(n));
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
void add_inplace(Tensor<T>& acc, const Tensor<T>& x) {
  require_same_shape(acc, x, "add_inplace");
  auto& a = acc.storage();
  const auto& b = x.storage();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace ptxseg::nn

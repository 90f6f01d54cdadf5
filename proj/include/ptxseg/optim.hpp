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

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ptxseg/errors.hpp"
#include "ptxseg/nn/layers.hpp"

namespace ptxseg {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-7;
};

/// Adam with bias correction. Moments are kept per trainable tensor, in parameter-list order.
template <typename T>
class Adam {
 public:
  explicit Adam(const AdamConfig& cfg = {}) : cfg_(cfg) {}

  void step(nn::ParamList<T>& params, double lr) {
    bind(params);
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::size_t k = 0;
    for (auto& p : params) {
      if (!p.grad) continue;
      auto& m = m_[k].storage();
      auto& v = v_[k].storage();
      auto& w = p.value->storage();
      const auto& g = p.grad->storage();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i];
        m[i] = static_cast<T>(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi);
        v[i] = static_cast<T>(cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi);
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        w[i] = static_cast<T>(w[i] - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
      ++k;
    }
  }

  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  const AdamConfig& config() const { return cfg_; }

  /// Moment tensors, one pair per trainable parameter, bound lazily to shapes.
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }

  void bind(const nn::ParamList<T>& params) {
    std::size_t k = 0;
    for (const auto& p : params) {
      if (!p.grad) continue;
      if (k >= m_.size()) {
        const auto& s = p.value->shape();
        m_.emplace_back(s[0], s[1], s[2], s[3]);
        v_.emplace_back(s[0], s[1], s[2], s[3]);
      } else if (!m_[k].same_shape(*p.value)) {
        throw RuntimeFailure("Adam: optimizer state does not match parameter " + p.name);
      }
      ++k;
    }
  }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace ptxseg

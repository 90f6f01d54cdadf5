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
#include <cstdint>
#include <numbers>
#include <string>

#include "ptxseg/errors.hpp"
#include "ptxseg/tensor.hpp"

namespace ptxseg {

struct LossOptions {
  /// Probability clip for the log terms.
  double eps = 1e-7;
  /// Added to numerator and denominator of the soft Dice ratio.
  double smooth = 1.0;
};

template <typename T>
struct LossTerms {
  T bce = 0;
  T dice_loss = 0;
  T combined = 0;
};

namespace detail {

template <typename T>
void check_loss_inputs(const Tensor<T>& probs, const Tensor<T>& targets, const char* what) {
  if (!probs.same_shape(targets)) {
    throw UserError(std::string(what) + ": shape mismatch " + probs.shape_string() + " vs " + targets.shape_string());
  }
  if (probs.empty()) throw UserError(std::string(what) + ": empty input");
}

}  // namespace detail

/// Mean binary cross-entropy over every pixel of the batch.
/// When `grad` is given, dBCE/dp is added into it (zero where p is clipped).
template <typename T>
T bce(const Tensor<T>& probs, const Tensor<T>& targets, const LossOptions& opt = {}, Tensor<T>* grad = nullptr) {
  detail::check_loss_inputs(probs, targets, "bce");
  const auto& p = probs.storage();
  const auto& y = targets.storage();
  const double n = static_cast<double>(p.size());
  const double lo = opt.eps;
  const double hi = 1.0 - opt.eps;
  double sum = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pc = std::clamp(static_cast<double>(p[i]), lo, hi);
    const double yi = y[i];
    sum -= (1.0 - yi) * std::log(1.0 - pc) + yi * std::log(pc);
    if (grad && p[i] >= lo && p[i] <= hi) {
      grad->storage()[i] += static_cast<T>((-yi / pc + (1.0 - yi) / (1.0 - pc)) / n);
    }
  }
  return static_cast<T>(sum / n);
}

/// Soft Dice loss 1 - (2 sum(p y) + s) / (sum(p) + sum(y) + s), per image, averaged over the batch.
template <typename T>
T dice_loss(const Tensor<T>& probs, const Tensor<T>& targets, const LossOptions& opt = {},
            Tensor<T>* grad = nullptr) {
  detail::check_loss_inputs(probs, targets, "dice_loss");
  const int batch = probs.n();
  const std::size_t per = probs.sample_stride();
  const double s = opt.smooth;
  double total = 0;
  for (int b = 0; b < batch; ++b) {
    const T* p = probs.sample(b);
    const T* y = targets.sample(b);
    double inter = 0;
    double denom = s;
    for (std::size_t i = 0; i < per; ++i) {
      inter += static_cast<double>(p[i]) * y[i];
      denom += static_cast<double>(p[i]) + y[i];
    }
    const double num = 2.0 * inter + s;
    total += denom > 0 ? 1.0 - num / denom : 0.0;
    if (grad && denom > 0) {
      T* g = grad->sample(b);
      for (std::size_t i = 0; i < per; ++i) {
        g[i] += static_cast<T>(-(2.0 * y[i] * denom - num) / (denom * denom) / batch);
      }
    }
  }
  return static_cast<T>(total / batch);
}

/// Unweighted sum of bce and dice_loss.
template <typename T>
LossTerms<T> combined_loss(const Tensor<T>& probs, const Tensor<T>& targets, const LossOptions& opt = {},
                           Tensor<T>* grad = nullptr) {
  if (grad) {
    require_same_shape(*grad, probs, "combined_loss gradient");
  }
  LossTerms<T> out;
  out.bce = bce(probs, targets, opt, grad);
  out.dice_loss = dice_loss(probs, targets, opt, grad);
  out.combined = out.bce + out.dice_loss;
  return out;
}

struct ScheduleConfig {
  double lr_max = 1e-4;
  double lr_min = 1e-6;
  std::int64_t total_steps = 1;
};

inline void validate(const ScheduleConfig& c) {
  if (!(c.lr_min > 0.0) || !(c.lr_max > c.lr_min) || !std::isfinite(c.lr_max)) {
    throw UserError("schedule requires 0 < lr_min < lr_max");
  }
  if (c.total_steps < 1) throw UserError("schedule total_steps must be >= 1");
}

/// Single cosine decay from lr_max at step 0 to lr_min at total_steps.
inline double cosine_lr(std::int64_t step, const ScheduleConfig& c) {
  validate(c);
  if (step < 0 || step > c.total_steps) {
    throw UserError("cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(c.total_steps) + "]");
  }
  if (step == 0) return c.lr_max;
  if (step == c.total_steps) return c.lr_min;
  const double t = static_cast<double>(step) / static_cast<double>(c.total_steps);
  const double lr = c.lr_min + 0.5 * (c.lr_max - c.lr_min) * (1.0 + std::cos(std::numbers::pi * t));
  return std::clamp(lr, c.lr_min, c.lr_max);
}

}  // namespace ptxseg

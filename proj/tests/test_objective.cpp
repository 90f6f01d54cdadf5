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

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "ptxseg/objective.hpp"
#include "ptxseg/rng.hpp"

namespace ptxseg {
namespace {

Tensor<double> filled(int n, int h, int w, double v) { return Tensor<double>(n, 1, h, w, v); }

TEST(Bce, PerfectPredictionIsNearZero) {
  Tensor<double> y(1, 1, 4, 4);
  for (std::size_t i = 0; i < y.size(); i += 3) y.data()[i] = 1;
  EXPECT_LE(bce(y, y), 2e-7);
}

TEST(Bce, HalfProbabilityIsLn2) {
  Rng rng(1);
  Tensor<double> y(2, 1, 5, 5);
  for (auto& v : y.storage()) v = rng.uniform() < 0.5;
  EXPECT_NEAR(bce(filled(2, 5, 5, 0.5), y), std::numbers::ln2, 1e-12);
}

TEST(Bce, ClipBoundary) {
  // y = 0, p = 1 clipped to 1 - eps: -ln(eps) = 16.1181
  EXPECT_NEAR(bce(filled(1, 1, 1, 1.0), filled(1, 1, 1, 0.0)), -std::log(1e-7), 1e-6);
  EXPECT_NEAR(-std::log(1e-7), 16.118, 1e-3);
}

TEST(Bce, ShapeMismatch) { EXPECT_THROW(bce(filled(1, 2, 2, 0.5), filled(1, 2, 3, 0.0)), UserError); }

TEST(Dice, IdenticalBinaryIsZero) {
  Tensor<double> y(1, 1, 4, 4);
  y.data()[3] = y.data()[7] = 1;
  EXPECT_NEAR(dice_loss(y, y), 0.0, 1e-12);
}

TEST(Dice, DisjointIsNearOne) {
  Tensor<double> p(1, 1, 16, 16);
  Tensor<double> y(1, 1, 16, 16);
  for (int i = 0; i < 50; ++i) p.data()[i] = 1;
  for (int i = 100; i < 150; ++i) y.data()[i] = 1;
  // 1 - 1 / 101 with smoothing 1
  EXPECT_NEAR(dice_loss(p, y), 1.0 - 1.0 / 101.0, 1e-12);
  EXPECT_NEAR(dice_loss(p, y, {1e-7, 0.0}), 1.0, 1e-12);
}

TEST(Dice, HalfOverlapHandValue) {
  // |A| = |B| = 4, |A n B| = 2.
  Tensor<double> p(1, 1, 1, 6);
  Tensor<double> y(1, 1, 1, 6);
  for (int i : {0, 1, 2, 3}) p.data()[i] = 1;
  for (int i : {2, 3, 4, 5}) y.data()[i] = 1;
  EXPECT_NEAR(dice_loss(p, y, {1e-7, 0.0}), 0.5, 1e-12);
  EXPECT_NEAR(dice_loss(p, y), 1.0 - 5.0 / 9.0, 1e-12);
}

TEST(Dice, SymmetricForBinaryInputs) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    Tensor<double> a(2, 1, 6, 6);
    Tensor<double> b(2, 1, 6, 6);
    for (auto& v : a.storage()) v = rng.uniform() < 0.4;
    for (auto& v : b.storage()) v = rng.uniform() < 0.4;
    EXPECT_DOUBLE_EQ(dice_loss(a, b), dice_loss(b, a));
  }
}

TEST(Dice, AveragesPerImage) {
  Tensor<double> p(2, 1, 1, 4);
  Tensor<double> y(2, 1, 1, 4);
  for (int i = 0; i < 4; ++i) p.sample(0)[i] = y.sample(0)[i] = 1;  // image 0 perfect
  p.sample(1)[0] = 1;                                              // image 1 disjoint
  y.sample(1)[3] = 1;
  const LossOptions exact{1e-7, 0.0};
  EXPECT_NEAR(dice_loss(p, y, exact), 0.5, 1e-12);
}

TEST(Combined, SumsTheTerms) {
  Rng rng(3);
  Tensor<double> p(2, 1, 5, 5);
  Tensor<double> y(2, 1, 5, 5);
  for (auto& v : p.storage()) v = rng.uniform(0.01, 0.99);
  for (auto& v : y.storage()) v = rng.uniform() < 0.3;
  const auto t = combined_loss(p, y);
  EXPECT_DOUBLE_EQ(t.combined, t.bce + t.dice_loss);
  EXPECT_DOUBLE_EQ(t.bce, bce(p, y));
  EXPECT_DOUBLE_EQ(t.dice_loss, dice_loss(p, y));
}

TEST(Combined, PerfectAndHalfOnBackground) {
  Tensor<double> y(1, 1, 8, 8);
  y.data()[10] = 1;
  EXPECT_NEAR(combined_loss(y, y).combined, 0.0, 3e-7);
  const auto half = combined_loss(filled(1, 8, 8, 0.5), Tensor<double>(1, 1, 8, 8));
  // ln 2 + (1 - 1 / (0.5 * 64 + 1))
  EXPECT_NEAR(half.combined, std::numbers::ln2 + 1.0 - 1.0 / 33.0, 1e-12);
}

TEST(Combined, RangesOnRandomInputs) {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    Tensor<double> p(2, 1, 4, 4);
    Tensor<double> y(2, 1, 4, 4);
    for (auto& v : p.storage()) v = rng.uniform();
    for (auto& v : y.storage()) v = rng.uniform() < 0.5;
    const auto l = combined_loss(p, y);
    EXPECT_GE(l.bce, 0.0);
    EXPECT_GE(l.dice_loss, 0.0);
    EXPECT_LE(l.dice_loss, 1.0);
    EXPECT_GE(l.combined, 0.0);
  }
}

/// Central differences of `f` at every pixel of p, compared with the analytic gradient.
template <typename F>
double max_rel_error(F f, Tensor<double> p, const Tensor<double>& analytic) {
  const double h = 1e-6;
  double worst = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p.data()[i];
    p.data()[i] = keep + h;
    const double up = f(p);
    p.data()[i] = keep - h;
    const double down = f(p);
    p.data()[i] = keep;
    const double fd = (up - down) / (2 * h);
    const double an = analytic.data()[i];
    worst = std::max(worst, std::fabs(fd - an) / std::max(1e-8, std::max(std::fabs(fd), std::fabs(an))));
  }
  return worst;
}

TEST(Gradients, MatchCentralDifferences) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> p(1, 1, 8, 8);
    Tensor<double> y(1, 1, 8, 8);
    for (auto& v : p.storage()) v = rng.uniform(0.02, 0.98);
    for (auto& v : y.storage()) v = rng.uniform() < 0.4;
    Tensor<double> gb(1, 1, 8, 8), gd(1, 1, 8, 8), gc(1, 1, 8, 8);
    bce(p, y, {}, &gb);
    dice_loss(p, y, {}, &gd);
    combined_loss(p, y, {}, &gc);
    EXPECT_LT(max_rel_error([&](const Tensor<double>& q) { return bce(q, y); }, p, gb), 1e-3);
    EXPECT_LT(max_rel_error([&](const Tensor<double>& q) { return dice_loss(q, y); }, p, gd), 1e-3);
    EXPECT_LT(max_rel_error([&](const Tensor<double>& q) { return combined_loss(q, y).combined; }, p, gc), 1e-3);
  }
}

TEST(CosineLr, EndpointsAndMidpoint) {
  const ScheduleConfig c{1e-4, 1e-6, 1000};
  EXPECT_EQ(cosine_lr(0, c), 1e-4);
  EXPECT_EQ(cosine_lr(1000, c), 1e-6);
  // lr_min + (lr_max - lr_min) / 2
  EXPECT_NEAR(cosine_lr(500, c), 5.05e-5, 1e-15);
}

TEST(CosineLr, MonotoneNonIncreasing) {
  const ScheduleConfig c{1e-4, 1e-6, 10000};
  double prev = cosine_lr(0, c);
  for (std::int64_t s = 1; s <= c.total_steps; ++s) {
    const double lr = cosine_lr(s, c);
    ASSERT_LE(lr, prev) << s;
    prev = lr;
  }
}

TEST(CosineLr, RejectsOutOfRange) {
  const ScheduleConfig c{1e-4, 1e-6, 10};
  EXPECT_THROW(cosine_lr(-1, c), UserError);
  EXPECT_THROW(cosine_lr(11, c), UserError);
  EXPECT_THROW(cosine_lr(0, ScheduleConfig{1e-6, 1e-4, 10}), UserError);
  EXPECT_THROW(cosine_lr(0, ScheduleConfig{1e-4, 1e-6, 0}), UserError);
}

}  // namespace
}  // namespace ptxseg

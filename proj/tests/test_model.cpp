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

#include "ptxseg/checkpoint.hpp"
#include "ptxseg/model.hpp"
#include "ptxseg/objective.hpp"
#include "test_support.hpp"

namespace ptxseg {
namespace {

template <typename T>
Tensor<T> random_batch(int n, int res, Rng& rng) {
  Tensor<T> t(n, 3, res, res);
  for (auto& v : t.storage()) v = static_cast<T>(rng.uniform());
  return t;
}

TEST(CompoundScaling, B4StageChannels) {
  // round_filters with width 1.4 on the B0 stage outputs (16, 24, 40, 112, 320).
  EXPECT_EQ(round_filters(16, 1.4), 24);
  EXPECT_EQ(round_filters(24, 1.4), 32);
  EXPECT_EQ(round_filters(40, 1.4), 56);
  EXPECT_EQ(round_filters(112, 1.4), 160);
  EXPECT_EQ(round_filters(320, 1.4), 448);
  EXPECT_EQ(round_filters(32, 1.4), 48);
  EXPECT_EQ(round_repeats(3, 1.8), 6);
  EXPECT_EQ(round_repeats(1, 1.8), 2);
  EXPECT_EQ(efficientnet_scale(4).native_resolution, 380);
}

TEST(BuildModel, B4FeatureStridesAndOutput) {
  ModelConfig cfg;  // efficientnet-b4 at 512
  Model model(cfg);
  EXPECT_EQ(model.encoder_contract().stage_channels, (std::array<int, 5>{24, 32, 56, 160, 448}));
  EXPECT_EQ(model.feature_sizes(512), (std::array<int, 5>{256, 128, 64, 32, 16}));
  // Running the encoder at 64 keeps the test fast and exercises the same stride contract.
  Rng rng(1);
  const auto feats = model.encode(random_batch<float>(1, 64, rng));
  ASSERT_EQ(feats.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(feats[i].h(), 64 / EncoderContract::stage_strides[i]);
    EXPECT_EQ(feats[i].c(), model.encoder_contract().stage_channels[i]);
  }
  const auto out = model.forward(random_batch<float>(1, 64, rng));
  EXPECT_EQ(out.shape(), (std::array<int, 4>{1, 1, 64, 64}));
}

TEST(BuildModel, TinyAt64) {
  Model model(ModelConfig::tiny(64));
  EXPECT_LT(model.num_parameters(), 1'000'000u);
  Rng rng(2);
  const auto out = model.forward(random_batch<float>(2, 64, rng));
  EXPECT_EQ(out.shape(), (std::array<int, 4>{2, 1, 64, 64}));
}

TEST(BuildModel, TransposedConvDecoder) {
  auto cfg = ModelConfig::tiny(64);
  cfg.decoder.upsample_mode = UpsampleMode::transposed_conv;
  Model model(cfg);
  Rng rng(3);
  EXPECT_EQ(model.forward(random_batch<float>(1, 64, rng)).h(), 64);
}

TEST(BuildModel, RejectsResolutionNotDivisibleBy32) {
  auto cfg = ModelConfig::tiny(100);
  EXPECT_THROW(Model{cfg}, UserError);
  Model ok(ModelConfig::tiny(64));
  EXPECT_THROW(ok.forward(Tensor<float>(1, 3, 100, 100)), UserError);
  EXPECT_THROW(ok.forward(Tensor<float>(1, 1, 64, 64)), UserError);
}

TEST(BuildModel, UnknownEncoderAndMissingPretrained) {
  auto cfg = ModelConfig::tiny(64);
  cfg.encoder = "resnet-34";
  EXPECT_THROW(Model{cfg}, UserError);
  auto pre = ModelConfig::tiny(64);
  pre.pretrained_source = "/nonexistent/weights.ckpt";
  try {
    build_model(pre);
    FAIL();
  } catch (const UserError& e) {
    EXPECT_NE(std::string(e.what()).find("from-scratch"), std::string::npos);
  }
}

TEST(Forward, SigmoidRangeAndFinite) {
  Model model(ModelConfig::tiny(64));
  const auto zeros = model.forward(Tensor<float>(2, 3, 64, 64));
  for (float v : zeros.storage()) {
    ASSERT_TRUE(std::isfinite(v));
    ASSERT_GT(v, 0.0f);
    ASSERT_LT(v, 1.0f);
  }
  Rng rng(4);
  const auto out = model.forward(random_batch<float>(3, 64, rng));
  for (float v : out.storage()) {
    ASSERT_GT(v, 0.0f);
    ASSERT_LT(v, 1.0f);
  }
}

TEST(Forward, IdenticalImagesGiveIdenticalRowsInInference) {
  Model model(ModelConfig::tiny(64));
  Rng rng(5);
  auto one = random_batch<float>(1, 64, rng);
  Tensor<float> two(2, 3, 64, 64);
  std::copy(one.storage().begin(), one.storage().end(), two.sample(0));
  std::copy(one.storage().begin(), one.storage().end(), two.sample(1));
  const auto out = model.forward(two);
  EXPECT_TRUE(std::equal(out.sample(0), out.sample(0) + out.sample_stride(), out.sample(1)));
  const auto again = model.forward(two);
  EXPECT_EQ(out.storage(), again.storage());
}

TEST(Gradients, EveryParameterReceivesFiniteNonZeroGradient) {
  for (auto mode : {UpsampleMode::nearest_then_conv, UpsampleMode::transposed_conv}) {
    auto cfg = ModelConfig::tiny(64);
    cfg.decoder.upsample_mode = mode;
    Model model(cfg);
    Rng rng(6);
    const auto x = random_batch<float>(2, 64, rng);
    Tensor<float> y(2, 1, 64, 64);
    for (auto& v : y.storage()) v = rng.uniform() < 0.3 ? 1.0f : 0.0f;
    model.zero_grad();
    const auto p = model.forward(x, {true, false});
    Tensor<float> g(p.n(), p.c(), p.h(), p.w());
    combined_loss(p, y, {}, &g);
    model.backward(g);
    for (const auto& prm : model.parameters()) {
      if (!prm.grad) continue;
      double norm = 0;
      for (float v : prm.grad->storage()) {
        ASSERT_TRUE(std::isfinite(v)) << prm.name;
        norm += std::fabs(v);
      }
      EXPECT_GT(norm, 0.0) << prm.name;
    }
  }
}

TEST(Gradients, WholeModelMatchesFiniteDifferencesInDouble) {
  auto cfg = ModelConfig::tiny(32);
  cfg.tiny_channels = {3, 4, 4, 5, 6};
  cfg.decoder.block_channels = {6, 5, 4, 3, 3};
  SegmentationModel<double> model(cfg);
  Rng rng(7);
  const auto x = random_batch<double>(2, 32, rng);
  Tensor<double> y(2, 1, 32, 32);
  for (auto& v : y.storage()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
  const nn::Context ctx{true, false};
  auto loss = [&] { return combined_loss(model.forward(x, ctx), y).combined; };
  model.zero_grad();
  const auto p = model.forward(x, ctx);
  Tensor<double> g(p.n(), p.c(), p.h(), p.w());
  combined_loss(p, y, {}, &g);
  model.backward(g);
  int checked = 0;
  for (auto& prm : model.parameters()) {
    if (!prm.grad) continue;
    const std::size_t i = prm.value->size() / 2;
    double& w = prm.value->data()[i];
    const double keep = w;
    const double h = 1e-5;
    w = keep + h;
    const double up = loss();
    w = keep - h;
    const double down = loss();
    w = keep;
    const double fd = (up - down) / (2 * h);
    const double an = prm.grad->data()[i];
    EXPECT_NEAR(fd, an, 1e-6 + 1e-3 * std::fabs(fd)) << prm.name;
    ++checked;
  }
  EXPECT_GT(checked, 40);
}

TEST(Forward, ReducedPrecisionStaysClose) {
  Model model(ModelConfig::tiny(64));
  Rng rng(8);
  const auto x = random_batch<float>(1, 64, rng);
  const auto full = model.forward(x, {false, false});
  const auto half = model.forward(x, {false, true});
  double max_diff = 0;
  for (std::size_t i = 0; i < full.size(); ++i) {
    max_diff = std::max(max_diff, static_cast<double>(std::fabs(full.data()[i] - half.data()[i])));
  }
  EXPECT_LT(max_diff, 0.02);
  EXPECT_GT(max_diff, 0.0);
}

}  // namespace
}  // namespace ptxseg

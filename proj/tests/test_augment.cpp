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

#include <cstdlib>

#include "ptxseg/augment.hpp"
#include "test_support.hpp"

namespace ptxseg {
namespace {

Image random_image(int h, int w, Rng& rng) {
  Image img(h, w, 3);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

TEST(BuildPipeline, ValIsResizeOnly) {
  const auto p = build_pipeline(AugmentMode::val, 512);
  ASSERT_EQ(p.transforms.size(), 1u);
  EXPECT_EQ(p.transforms[0].kind, TransformKind::resize);
  EXPECT_EQ(p.transforms[0].params.size, 512);
  EXPECT_EQ(p.target_resolution(), 512);
}

TEST(BuildPipeline, TrainHasFiveStepsResizeFirst) {
  const auto p = build_pipeline(AugmentMode::train, 512);
  ASSERT_EQ(p.transforms.size(), 5u);
  const std::vector<TransformKind> order{TransformKind::resize, TransformKind::horizontal_flip, TransformKind::affine,
                                         TransformKind::optical_distortion, TransformKind::brightness_contrast};
  for (std::size_t i = 0; i < order.size(); ++i) EXPECT_EQ(p.transforms[i].kind, order[i]);
  EXPECT_DOUBLE_EQ(p.transforms[1].probability, 0.5);
  EXPECT_DOUBLE_EQ(p.transforms[2].probability, 0.5);
  EXPECT_DOUBLE_EQ(p.transforms[3].probability, 0.3);
  EXPECT_DOUBLE_EQ(p.transforms[4].probability, 0.3);
}

TEST(BuildPipeline, TinyResolutionIsValid) {
  const auto p = build_pipeline(AugmentMode::train, 16);
  EXPECT_EQ(p.target_resolution(), 16);
  Rng rng(1);
  const Image img = random_image(40, 40, rng);
  const Mask m = testing::random_mask(40, 40, 0.3, rng);
  const auto out = apply_paired(p, img, m, 3);
  EXPECT_EQ(out.image.height, 16);
  EXPECT_EQ(out.mask.width, 16);
}

TEST(BuildPipeline, OverridesReplaceByKindAndUnknownKindsFail) {
  TransformSpec flip{TransformKind::horizontal_flip, 1.0, {}};
  const auto p = build_pipeline(AugmentMode::train, 64, std::vector<TransformSpec>{flip});
  EXPECT_DOUBLE_EQ(p.transforms[1].probability, 1.0);
  const nlohmann::json bad = {{"kind", "elastic"}, {"probability", 0.5}};
  EXPECT_THROW(bad.get<TransformSpec>(), UserError);
  const nlohmann::json bad_p = {{"kind", "affine"}, {"probability", 1.5}};
  EXPECT_THROW(bad_p.get<TransformSpec>(), UserError);
}

TEST(BuildPipeline, SpecJsonRoundTrip) {
  for (const auto& t : build_pipeline(AugmentMode::train, 64).transforms) {
    const nlohmann::json j = t;
    const auto back = j.get<TransformSpec>();
    EXPECT_EQ(back.kind, t.kind);
    EXPECT_DOUBLE_EQ(back.probability, t.probability);
    EXPECT_EQ(nlohmann::json(back), j);
  }
}

TEST(ApplyPaired, ForcedFlipMirrorsDeltaInBoth) {
  const int w = 32;
  TransformSpec flip{TransformKind::horizontal_flip, 1.0, {}};
  auto p = with_probabilities(build_pipeline(AugmentMode::train, w, std::vector<TransformSpec>{flip}), 0.0);
  p.transforms[1].probability = 1.0;
  Image img(w, w, 3);
  Mask m(w, w);
  const int r = 5, c = 9;
  for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = 1.0f;
  m.at(r, c) = 1;
  const auto out = apply_paired(p, img, m, 77);
  EXPECT_EQ(out.mask.foreground(), 1u);
  EXPECT_EQ(out.mask.at(r, w - 1 - c), 1);
  EXPECT_FLOAT_EQ(out.image.at(r, w - 1 - c, 0), 1.0f);
  float total = 0;
  for (auto v : out.image.data) total += v;
  EXPECT_FLOAT_EQ(total, 3.0f);
}

TEST(ApplyPaired, ValDownsizesToTarget) {
  Rng rng(3);
  const Image img = random_image(1024, 1024, rng);
  const Mask m = testing::random_mask(1024, 1024, 0.2, rng);
  const auto out = apply_paired(build_pipeline(AugmentMode::val, 512), img, m, 0);
  EXPECT_EQ(out.image.height, 512);
  EXPECT_EQ(out.image.width, 512);
  EXPECT_EQ(out.mask.height, 512);
  for (auto v : out.mask.data) ASSERT_LE(v, 1);
  // 2x downscale at half-pixel centres averages each 2x2 block.
  const float expect = (img.at(0, 0, 0) + img.at(0, 1, 0) + img.at(1, 0, 0) + img.at(1, 1, 0)) / 4.0f;
  EXPECT_NEAR(out.image.at(0, 0, 0), expect, 1e-6);
}

TEST(ApplyPaired, DeterministicForFixedSeed) {
  Rng rng(5);
  const Image img = random_image(48, 48, rng);
  const Mask m = testing::random_mask(48, 48, 0.3, rng);
  const auto p = with_probabilities(build_pipeline(AugmentMode::train, 64), 1.0);
  const auto a = apply_paired(p, img, m, 1234);
  const auto b = apply_paired(p, img, m, 1234);
  EXPECT_EQ(a.image.data, b.image.data);
  EXPECT_EQ(a.mask, b.mask);
  const auto c = apply_paired(p, img, m, 1235);
  EXPECT_NE(a.image.data, c.image.data);
}

TEST(ApplyPaired, ZeroProbabilitiesMatchValPipeline) {
  Rng rng(6);
  const Image img = random_image(40, 40, rng);
  const Mask m = testing::random_mask(40, 40, 0.3, rng);
  const auto off = with_probabilities(build_pipeline(AugmentMode::train, 32), 0.0);
  const auto val = build_pipeline(AugmentMode::val, 32);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = apply_paired(off, img, m, seed);
    const auto b = apply_paired(val, img, m, seed + 100);
    EXPECT_EQ(a.image.data, b.image.data);
    EXPECT_EQ(a.mask, b.mask);
  }
}

TEST(ApplyPaired, MasksStayBinaryAndImagesInRange) {
  Rng rng(7);
  const auto p = with_probabilities(build_pipeline(AugmentMode::train, 32), 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Image img = random_image(32, 32, rng);
    const Mask m = testing::random_mask(32, 32, 0.5, rng);
    const auto out = apply_paired(p, img, m, rng.next());
    for (auto v : out.mask.data) ASSERT_LE(v, 1);
    for (auto v : out.image.data) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
}

TEST(ApplyPaired, IndicatorImageTransformsLikeTheMask) {
  // The image channel goes through bilinear sampling, so compare supports: every mask pixel must
  // land where the transformed indicator is non-zero.
  Rng rng(8);
  const auto p = with_probabilities(build_pipeline(AugmentMode::train, 32), 1.0);
  auto geometric = p;
  geometric.transforms.pop_back();  // photometric changes the background level
  for (int trial = 0; trial < 100; ++trial) {
    const Mask m = testing::random_mask(32, 32, 0.2, rng);
    Image ind(32, 32, 3);
    for (std::size_t i = 0; i < m.data.size(); ++i) {
      for (int ch = 0; ch < 3; ++ch) ind.data[i * 3 + ch] = m.data[i];
    }
    const auto seed = rng.next();
    const auto out = apply_paired(geometric, ind, m, seed);
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        if (out.mask.at(y, x)) {
          ASSERT_GT(out.image.at(y, x, 0), 0.0f);
        }
      }
    }
  }
}

TEST(ApplyPaired, RejectsShapeMismatch) {
  EXPECT_THROW(apply_paired(build_pipeline(AugmentMode::val, 32), Image(32, 32), Mask(32, 31), 0), UserError);
}

}  // namespace
}  // namespace ptxseg

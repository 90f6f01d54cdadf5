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

#include <fstream>
#include <iterator>
#include <set>

#include "ptxseg/dataset.hpp"
#include "test_support.hpp"

namespace ptxseg {
namespace {

using testing::TempDir;

TEST(SplitSizes, FloorOfTrainFraction) {
  // floor(0.85 * 12047) = floor(10239.95) = 10239
  EXPECT_EQ(split_sizes(12047, 0.85), (SplitSizes{10239, 1808}));
  // floor(0.85 * 20) = 17
  EXPECT_EQ(split_sizes(20, 0.85), (SplitSizes{17, 3}));
  EXPECT_EQ(split_sizes(2, 0.5), (SplitSizes{1, 1}));
  // floor(0.85 * 16) = floor(13.6) = 13
  EXPECT_EQ(split_sizes(16, 0.85), (SplitSizes{13, 3}));
}

TEST(SplitSizes, RejectsDegenerateInputs) {
  EXPECT_THROW(split_sizes(1, 0.85), UserError);
  EXPECT_THROW(split_sizes(0, 0.85), UserError);
  EXPECT_THROW(split_sizes(10, 0.0), UserError);
  EXPECT_THROW(split_sizes(10, 1.0), UserError);
}

TEST(SplitSizes, BothSidesNonEmptyForAllSmallN) {
  for (std::size_t n = 2; n < 300; ++n) {
    for (double f : {0.01, 0.5, 0.85, 0.99}) {
      const auto s = split_sizes(n, f);
      EXPECT_EQ(s.train + s.val, n);
      EXPECT_GE(s.train, 1u);
      EXPECT_GE(s.val, 1u);
    }
  }
}

TEST(DecodeMask, ThresholdsAt127) {
  Raster r{1, 6, 1, {0, 127, 128, 200, 255, 0}};
  const Mask m = decode_mask(r);
  EXPECT_EQ(m.data, (std::vector<std::uint8_t>{0, 0, 1, 1, 1, 0}));
}

TEST(DecodeMask, ConstantRasters) {
  Raster zeros{4, 4, 1, std::vector<std::uint8_t>(16, 0)};
  Raster full{4, 4, 1, std::vector<std::uint8_t>(16, 255)};
  EXPECT_EQ(decode_mask(zeros).foreground(), 0u);
  EXPECT_EQ(decode_mask(full).foreground(), 16u);
  Raster mixed{1, 3, 1, {0, 200, 255}};
  EXPECT_EQ(decode_mask(mixed).data, (std::vector<std::uint8_t>{0, 1, 1}));
}

TEST(DecodeMask, RejectsMultiChannel) {
  Raster rgb{2, 2, 3, std::vector<std::uint8_t>(12, 255)};
  EXPECT_THROW(decode_mask(rgb), UserError);
}

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST(Synthetic, WritesBinaryMasksWithAPositive) {
  TempDir dir;
  const auto stems = make_synthetic(dir.path(), 8, 128, 0);
  ASSERT_EQ(stems.size(), 8u);
  std::size_t positives = 0;
  for (const auto& stem : stems) {
    const Raster raw = io::read_raster(dir / ("masks/" + stem + ".png"));
    ASSERT_EQ(raw.channels, 1);
    for (auto v : raw.data) ASSERT_TRUE(v == 0 || v == 255);
    const Image img = io::read_image(dir / ("images/" + stem + ".png"));
    EXPECT_EQ(img.height, 128);
    EXPECT_EQ(img.width, 128);
    positives += decode_mask(raw).foreground() > 0;
  }
  EXPECT_GE(positives, 1u);
}

TEST(Synthetic, ByteIdenticalAcrossRuns) {
  TempDir a, b;
  make_synthetic(a.path(), 1, 32, 0);
  make_synthetic(b.path(), 1, 32, 0);
  for (const char* sub : {"images/synth_00000.png", "masks/synth_00000.png"}) {
    const auto fa = slurp(a / sub);
    ASSERT_FALSE(fa.empty());
    EXPECT_EQ(fa, slurp(b / sub)) << sub;
  }
}

TEST(Synthetic, NegativeFractionControlsEmptyMasks) {
  for (std::uint64_t seed : {0u, 3u, 11u}) {
    TempDir dir;
    const auto stems = make_synthetic(dir.path(), 10, 64, seed, {0.5});
    std::size_t empty = 0;
    for (const auto& stem : stems) empty += read_mask(dir / ("masks/" + stem + ".png")).foreground() == 0;
    EXPECT_EQ(empty, 5u) << "seed " << seed;
  }
}

TEST(Synthetic, RejectsBadArguments) {
  TempDir dir;
  EXPECT_THROW(make_synthetic(dir.path(), 0, 64, 0), UserError);
  EXPECT_THROW(make_synthetic(dir.path(), 2, 16, 0), UserError);
}

TEST(Manifest, DeterministicSplitPartition) {
  TempDir dir;
  make_synthetic(dir.path(), 100, 32, 1);
  const auto m1 = load_dataset(dir.path(), 7);
  const auto m2 = load_dataset(dir.path(), 7);
  EXPECT_EQ(m1.split, m2.split);
  EXPECT_EQ(m1.indices(Split::train).size(), 85u);
  EXPECT_EQ(m1.indices(Split::val).size(), 15u);
  std::set<std::string> stems;
  for (const auto& s : m1.samples) stems.insert(s.stem);
  EXPECT_EQ(stems.size(), 100u);
  EXPECT_TRUE(std::is_sorted(m1.samples.begin(), m1.samples.end(),
                             [](const Sample& a, const Sample& b) { return a.stem < b.stem; }));
  ASSERT_TRUE(m1.counts.has_value());
  EXPECT_EQ(m1.counts->total, 100u);
  EXPECT_EQ(m1.counts->positive + m1.counts->negative, 100u);
  EXPECT_EQ(m1.counts->negative, 25u);

  const auto other = load_dataset(dir.path(), 8);
  EXPECT_NE(m1.split, other.split);
}

TEST(Manifest, LazyConstructionDecodesNothing) {
  TempDir dir;
  make_synthetic(dir.path(), 6, 32, 2);
  const auto m = load_dataset(dir.path(), 0, {0.85, false, false});
  EXPECT_FALSE(m.counts.has_value());
  for (const auto& s : m.samples) EXPECT_FALSE(s.has_positive.has_value());
}

TEST(Manifest, StratifiedSplitBalancesClasses) {
  TempDir dir;
  make_synthetic(dir.path(), 40, 32, 5, {0.5});
  const auto m = load_dataset(dir.path(), 3, {0.85, true, true});
  std::size_t train_pos = 0;
  for (auto i : m.indices(Split::train)) train_pos += *m.samples[i].has_positive;
  EXPECT_EQ(train_pos, split_sizes(20, 0.85).train);
}

TEST(Manifest, MissingMaskNamesTheStem) {
  TempDir dir;
  make_synthetic(dir.path(), 3, 32, 0);
  std::filesystem::remove(dir / "masks/synth_00001.png");
  try {
    load_dataset(dir.path(), 0);
    FAIL() << "expected an error";
  } catch (const UserError& e) {
    EXPECT_NE(std::string(e.what()).find("synth_00001"), std::string::npos);
  }
}

TEST(Manifest, EmptyDirectoriesReportNoSamples) {
  TempDir dir;
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  try {
    load_dataset(dir.path(), 0);
    FAIL() << "expected an error";
  } catch (const UserError& e) {
    EXPECT_NE(std::string(e.what()).find("no samples found"), std::string::npos);
  }
}

TEST(Manifest, UnreadableImageNamesThePath) {
  TempDir dir;
  make_synthetic(dir.path(), 2, 32, 0);
  { std::ofstream(dir / "masks/synth_00000.png") << "not a png"; }
  try {
    load_dataset(dir.path(), 0);
    FAIL() << "expected an error";
  } catch (const UserError& e) {
    EXPECT_NE(std::string(e.what()).find("synth_00000.png"), std::string::npos);
  }
}

TEST(Manifest, CsvRoundTrip) {
  TempDir dir;
  make_synthetic(dir.path(), 12, 32, 4);
  const auto m = load_dataset(dir.path(), 9);
  write_manifest_csv(dir / "manifest.csv", m);
  std::ifstream in(dir / "manifest.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "stem,split,has_positive");
  const auto back = read_manifest_csv(dir / "manifest.csv", dir.path());
  EXPECT_EQ(back.split, m.split);
  ASSERT_EQ(back.samples.size(), m.samples.size());
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    EXPECT_EQ(back.samples[i].stem, m.samples[i].stem);
    EXPECT_EQ(back.samples[i].has_positive, m.samples[i].has_positive);
  }
  EXPECT_EQ(back.counts, m.counts);
}

TEST(LoadSample, ShapesAgree) {
  TempDir dir;
  make_synthetic(dir.path(), 2, 64, 0);
  const auto m = load_dataset(dir.path(), 0);
  const auto s = load_sample(m.samples[0]);
  EXPECT_EQ(s.image.channels, 3);
  EXPECT_EQ(s.image.height, s.mask.height);
  EXPECT_EQ(s.image.width, s.mask.width);
  for (auto v : s.mask.data) EXPECT_LE(v, 1);
}

}  // namespace
}  // namespace ptxseg

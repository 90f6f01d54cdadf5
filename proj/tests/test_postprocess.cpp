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

#include <stack>

#include "ptxseg/postprocess.hpp"
#include "test_support.hpp"

namespace ptxseg {
namespace {

/// Oracle: explicit-stack flood fill; clears components with area < rt.
Mask flood_fill_oracle(const Mask& m, std::uint64_t rt, int connectivity) {
  Mask out = m;
  std::vector<char> seen(m.data.size(), 0);
  for (int y0 = 0; y0 < m.height; ++y0) {
    for (int x0 = 0; x0 < m.width; ++x0) {
      if (!m.at(y0, x0) || seen[y0 * m.width + x0]) continue;
      std::vector<std::pair<int, int>> comp;
      std::stack<std::pair<int, int>> todo;
      todo.push({y0, x0});
      seen[y0 * m.width + x0] = 1;
      while (!todo.empty()) {
        const auto [y, x] = todo.top();
        todo.pop();
        comp.push_back({y, x});
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (dy == 0 && dx == 0) continue;
            if (connectivity == 4 && dy != 0 && dx != 0) continue;
            const int yy = y + dy;
            const int xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= m.height || xx >= m.width) continue;
            if (!m.at(yy, xx) || seen[yy * m.width + xx]) continue;
            seen[yy * m.width + xx] = 1;
            todo.push({yy, xx});
          }
        }
      }
      if (comp.size() < rt) {
        for (const auto& [y, x] : comp) out.at(y, x) = 0;
      }
    }
  }
  return out;
}

TEST(Binarize, StrictThreshold) {
  ProbMap p(2, 2);
  p.data = {0.04f, 0.05f, 0.051f, 0.90f};
  EXPECT_EQ(binarize(p, 0.05).data, (std::vector<std::uint8_t>{0, 0, 1, 1}));
}

TEST(Binarize, Boundaries) {
  ProbMap p(1, 4);
  p.data = {0.0f, 0.3f, 1.0f, 1e-9f};
  EXPECT_EQ(binarize(p, 0.0).data, (std::vector<std::uint8_t>{0, 1, 1, 1}));
  EXPECT_EQ(binarize(p, 1.0).foreground(), 0u);
}

TEST(Binarize, MonotoneInThreshold) {
  Rng rng(1);
  ProbMap p(16, 16);
  for (auto& v : p.data) v = static_cast<float>(rng.uniform());
  for (double a = 0; a <= 1.0; a += 0.05) {
    const auto lo = binarize(p, a);
    const auto hi = binarize(p, a + 0.05);
    for (std::size_t i = 0; i < lo.data.size(); ++i) ASSERT_LE(hi.data[i], lo.data[i]);
  }
}

TEST(RemoveSmall, ZeroThresholdIsIdentity) {
  Rng rng(2);
  const Mask m = testing::random_mask(16, 16, 0.3, rng);
  EXPECT_EQ(remove_small_components(m, 0, 8), m);
  EXPECT_EQ(remove_small_components(m, 0, 4), m);
}

TEST(RemoveSmall, IsolatedPixelRemoved) {
  Mask m(3, 3);
  m.at(1, 1) = 1;
  EXPECT_EQ(remove_small_components(m, 2, 8).foreground(), 0u);
  EXPECT_EQ(remove_small_components(m, 1, 8), m);
}

TEST(RemoveSmall, DiagonalConnectivityMatters) {
  Mask m(3, 3);
  m.at(0, 0) = m.at(1, 1) = m.at(2, 2) = 1;
  EXPECT_EQ(remove_small_components(m, 2, 8), m);
  EXPECT_EQ(remove_small_components(m, 2, 4).foreground(), 0u);
}

TEST(RemoveSmall, ExhaustiveThreeByThree) {
  for (int bits = 0; bits < 512; ++bits) {
    Mask m(3, 3);
    for (int i = 0; i < 9; ++i) m.data[i] = (bits >> i) & 1;
    for (int conn : {4, 8}) {
      for (std::uint64_t rt : {0u, 1u, 2u, 3u, 5u}) {
        ASSERT_EQ(remove_small_components(m, rt, conn), flood_fill_oracle(m, rt, conn))
            << "bits=" << bits << " conn=" << conn << " rt=" << rt;
      }
    }
  }
}

TEST(RemoveSmall, RandomSixteenBySixteen) {
  Rng rng(3);
  for (int t = 0; t < 1000; ++t) {
    const Mask m = testing::random_mask(16, 16, rng.uniform(0.1, 0.7), rng);
    for (int conn : {4, 8}) {
      for (std::uint64_t rt : {0u, 1u, 2u, 3u, 5u}) {
        const auto out = remove_small_components(m, rt, conn);
        ASSERT_EQ(out, flood_fill_oracle(m, rt, conn));
        for (std::size_t i = 0; i < out.data.size(); ++i) ASSERT_LE(out.data[i], m.data[i]);
        ASSERT_EQ(remove_small_components(out, rt, conn), out);
      }
    }
  }
}

TEST(RemoveSmall, SpiralComponentMergesLabels) {
  // U shape: the two arms get different provisional labels and merge at the bottom.
  Mask m(4, 5);
  for (int y = 0; y < 4; ++y) m.at(y, 0) = m.at(y, 4) = 1;
  for (int x = 0; x < 5; ++x) m.at(3, x) = 1;
  const auto cc = label_components(m, 4);
  EXPECT_EQ(cc.areas.size(), 2u);
  EXPECT_EQ(cc.areas[1], 11u);
}

/// Two images: true regions get p = 0.9, a spurious blob gets p = 0.3.
struct SpuriousBlobSet {
  std::vector<ProbMap> probs;
  std::vector<Mask> truths;
};

SpuriousBlobSet spurious_blob_set() {
  SpuriousBlobSet s;
  for (int n = 0; n < 2; ++n) {
    ProbMap p(32, 32, 0.02f);
    Mask t(32, 32);
    for (int y = 4 + n; y < 14 + n; ++y) {
      for (int x = 6; x < 18; ++x) {
        p.at(y, x) = 0.9f;
        t.at(y, x) = 1;
      }
    }
    for (int y = 22; y < 28; ++y) {
      for (int x = 20 + n; x < 26 + n; ++x) p.at(y, x) = 0.3f;
    }
    s.probs.push_back(p);
    s.truths.push_back(t);
  }
  return s;
}

TEST(GridSearch, PerfectPredictionsPickLowestThreshold) {
  Rng rng(4);
  std::vector<ProbMap> probs;
  std::vector<Mask> truths;
  for (int n = 0; n < 3; ++n) {
    Mask t = testing::random_mask(16, 16, 0.3, rng);
    ProbMap p(16, 16);
    for (std::size_t i = 0; i < t.data.size(); ++i) p.data[i] = t.data[i];
    probs.push_back(p);
    truths.push_back(t);
  }
  const auto r = grid_search(probs, truths, default_bt_grid(), {0, 2, 8});
  EXPECT_DOUBLE_EQ(r.best.binarization_threshold, 0.05);
  EXPECT_EQ(r.best.removal_threshold, 0u);
  EXPECT_DOUBLE_EQ(r.best_score, 1.0);
}

TEST(GridSearch, SpuriousBlobSurfaceMatchesExhaustiveRecomputation) {
  const auto s = spurious_blob_set();
  const auto bts = default_bt_grid();
  // Removal thresholds below the blob area (36 px) so only BT can suppress it.
  const std::vector<std::uint64_t> rts{0, 10, 20};
  const auto r = grid_search(s.probs, s.truths, bts, rts);
  double best = -1;
  std::size_t bi_best = 0, ri_best = 0;
  for (std::size_t bi = 0; bi < bts.size(); ++bi) {
    for (std::size_t ri = 0; ri < rts.size(); ++ri) {
      std::vector<Mask> preds;
      for (const auto& p : s.probs) preds.push_back(postprocess(p, {bts[bi], rts[ri], 8}, 32, 32));
      const double iou = evaluate_set(preds, s.truths).iou;
      ASSERT_DOUBLE_EQ(r.surface[bi][ri], iou);
      if (iou > best) {
        best = iou;
        bi_best = bi;
        ri_best = ri;
      }
    }
  }
  EXPECT_DOUBLE_EQ(r.best.binarization_threshold, bts[bi_best]);
  EXPECT_EQ(r.best.removal_threshold, rts[ri_best]);
  EXPECT_GE(r.best.binarization_threshold, 0.3);
  EXPECT_LT(r.best.binarization_threshold, 0.9);
  EXPECT_DOUBLE_EQ(r.best_score, 1.0);
}

TEST(GridSearch, RemovalThresholdCanReplaceHigherBinarization) {
  // RT = 50 deletes the 36 px blob but keeps the 120 px true region, so the lowest BT wins.
  const auto s = spurious_blob_set();
  const auto r = grid_search(s.probs, s.truths, default_bt_grid(), {0, 50});
  EXPECT_DOUBLE_EQ(r.best.binarization_threshold, 0.05);
  EXPECT_EQ(r.best.removal_threshold, 50u);
  EXPECT_DOUBLE_EQ(r.best_score, 1.0);
  EXPECT_LT(r.surface[0][0], 1.0);
}

TEST(GridSearch, ResizesProbabilitiesToTruthResolution) {
  ProbMap p(8, 8, 0.9f);
  Mask t(16, 16, 1);
  const std::vector<ProbMap> probs{p};
  const std::vector<Mask> truths{t};
  const auto r = grid_search(probs, truths, {0.5}, {0});
  EXPECT_DOUBLE_EQ(r.best_score, 1.0);
}

TEST(GridSearch, JsonRoundTripAndErrors) {
  const auto s = spurious_blob_set();
  const auto r = grid_search(s.probs, s.truths, {0.2, 0.5}, {0, 64});
  const nlohmann::json j = r;
  const auto back = j.get<GridSearchResult>();
  EXPECT_EQ(back.surface, r.surface);
  EXPECT_DOUBLE_EQ(back.best.binarization_threshold, r.best.binarization_threshold);
  EXPECT_THROW(grid_search(s.probs, s.truths, {}, {0}), UserError);
  EXPECT_THROW(grid_search(std::span<const ProbMap>(s.probs).first(1), s.truths, {0.5}, {0}), UserError);
}

}  // namespace
}  // namespace ptxseg

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
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptxseg/errors.hpp"
#include "ptxseg/image.hpp"
#include "ptxseg/metrics.hpp"
#include "ptxseg/resample.hpp"

namespace ptxseg {

struct PostprocessParams {
  double binarization_threshold = 0.5;
  std::uint64_t removal_threshold = 0;
  int connectivity = 8;
};

inline void validate(const PostprocessParams& p) {
  if (!(p.binarization_threshold >= 0.0 && p.binarization_threshold <= 1.0)) {
    throw UserError("binarization threshold must be in [0, 1]");
  }
  if (p.connectivity != 4 && p.connectivity != 8) throw UserError("connectivity must be 4 or 8");
}

/// 1 where p > threshold (strict). The comparison runs in the map's float precision so that a
/// stored probability equal to the threshold literal is not counted as foreground.
inline Mask binarize(const ProbMap& probs, double threshold) {
  Mask m(probs.height, probs.width);
  const float t = static_cast<float>(threshold);
  for (std::size_t i = 0; i < probs.data.size(); ++i) m.data[i] = probs.data[i] > t ? 1 : 0;
  return m;
}

/// Connected-component labels (0 = background, 1..k) plus the area of each label.
struct ComponentLabels {
  std::vector<std::uint32_t> labels;
  std::vector<std::uint64_t> areas;  // areas[0] unused
};

/// Two-pass union-find labelling in raster order.
inline ComponentLabels label_components(const Mask& mask, int connectivity) {
  if (connectivity != 4 && connectivity != 8) throw UserError("connectivity must be 4 or 8");
  const int h = mask.height;
  const int w = mask.width;
  std::vector<std::uint32_t> provisional(mask.data.size(), 0);
  std::vector<std::uint32_t> parent{0};
  auto find = [&](std::uint32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  auto unite = [&](std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) {
      parent[b] = a;
    } else {
      parent[a] = b;
    }
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (!mask.data[i]) continue;
      std::uint32_t neighbours[4];
      int k = 0;
      auto look = [&](int yy, int xx) {
        if (yy < 0 || xx < 0 || xx >= w) return;
        const auto l = provisional[static_cast<std::size_t>(yy) * w + xx];
        if (l) neighbours[k++] = l;
      };
      look(y, x - 1);
      look(y - 1, x);
      if (connectivity == 8) {
        look(y - 1, x - 1);
        look(y - 1, x + 1);
      }
      if (k == 0) {
        const auto fresh = static_cast<std::uint32_t>(parent.size());
        parent.push_back(fresh);
        provisional[i] = fresh;
        continue;
      }
      std::uint32_t best = neighbours[0];
      for (int j = 1; j < k; ++j) best = std::min(best, neighbours[j]);
      provisional[i] = best;
      for (int j = 0; j < k; ++j) unite(best, neighbours[j]);
    }
  }
  ComponentLabels out;
  out.labels.assign(mask.data.size(), 0);
  std::vector<std::uint32_t> compact(parent.size(), 0);
  out.areas.push_back(0);
  for (std::size_t i = 0; i < provisional.size(); ++i) {
    if (!provisional[i]) continue;
    const auto root = find(provisional[i]);
    if (!compact[root]) {
      compact[root] = static_cast<std::uint32_t>(out.areas.size());
      out.areas.push_back(0);
    }
    out.labels[i] = compact[root];
    ++out.areas[compact[root]];
  }
  return out;
}

/// Clears every connected component whose area is below `removal_threshold`.
inline Mask remove_small_components(const Mask& mask, std::uint64_t removal_threshold, int connectivity = 8) {
  if (removal_threshold == 0) return mask;
  const auto cc = label_components(mask, connectivity);
  Mask out = mask;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const auto l = cc.labels[i];
    if (l && cc.areas[l] < removal_threshold) out.data[i] = 0;
  }
  return out;
}

/// Resize to the reference resolution, binarize, drop small components.
inline Mask postprocess(const ProbMap& probs, const PostprocessParams& params, int height, int width) {
  validate(params);
  const ProbMap resized = resize_bilinear(probs, height, width);
  return remove_small_components(binarize(resized, params.binarization_threshold), params.removal_threshold,
                                 params.connectivity);
}

inline std::vector<double> default_bt_grid() {
  std::vector<double> g;
  for (int k = 1; k <= 19; ++k) g.push_back(k / 20.0);
  return g;
}

inline std::vector<std::uint64_t> default_rt_grid() { return {0, 128, 256, 512, 1024, 2048, 4096}; }

struct GridSearchResult {
  PostprocessParams best;
  double best_score = 0;
  std::vector<double> bt_grid;
  std::vector<std::uint64_t> rt_grid;
  /// surface[i][j] = pooled IoU at (bt_grid[i], rt_grid[j]).
  std::vector<std::vector<double>> surface;
};

/// Streaming (BT, RT) grid evaluation: each probability map is resized to its truth resolution
/// and labelled once per BT, then pooled counts are updated for every RT. Only the pooled
/// confusion counts per grid cell are retained.
class GridSearchAccumulator {
 public:
  GridSearchAccumulator(std::vector<double> bt_grid, std::vector<std::uint64_t> rt_grid, int connectivity = 8)
      : bt_(std::move(bt_grid)), rt_(std::move(rt_grid)), connectivity_(connectivity) {
    if (bt_.empty() || rt_.empty()) throw UserError("grid_search: grids must be non-empty");
    if (connectivity_ != 4 && connectivity_ != 8) throw UserError("connectivity must be 4 or 8");
    std::sort(bt_.begin(), bt_.end());
    bt_.erase(std::unique(bt_.begin(), bt_.end()), bt_.end());
    std::sort(rt_.begin(), rt_.end());
    rt_.erase(std::unique(rt_.begin(), rt_.end()), rt_.end());
    for (double bt : bt_) validate(PostprocessParams{bt, 0, connectivity_});
    cells_.assign(bt_.size(), std::vector<ConfusionCounts>(rt_.size()));
  }

  void add(const ProbMap& probs, const Mask& truth) {
    if (probs.height <= 0 || probs.width <= 0 || truth.height <= 0 || truth.width <= 0) {
      throw UserError("grid_search: empty probability map or mask");
    }
    const ProbMap resized = resize_bilinear(probs, truth.height, truth.width);
    std::uint64_t truth_fg = 0;
    for (auto v : truth.data) truth_fg += v != 0;
    const std::uint64_t total = truth.data.size();
    for (std::size_t bi = 0; bi < bt_.size(); ++bi) {
      const auto cc = label_components(binarize(resized, bt_[bi]), connectivity_);
      std::vector<std::uint64_t> hits(cc.areas.size(), 0);
      for (std::size_t i = 0; i < truth.data.size(); ++i) {
        if (cc.labels[i] && truth.data[i]) ++hits[cc.labels[i]];
      }
      for (std::size_t ri = 0; ri < rt_.size(); ++ri) {
        ConfusionCounts c;
        for (std::size_t l = 1; l < cc.areas.size(); ++l) {
          if (cc.areas[l] < rt_[ri]) continue;
          c.tp += hits[l];
          c.fp += cc.areas[l] - hits[l];
        }
        c.fn = truth_fg - c.tp;
        c.tn = total - c.tp - c.fp - c.fn;
        cells_[bi][ri] += c;
      }
    }
    ++n_;
  }

  std::size_t size() const { return n_; }

  /// Pooled IoU surface and its argmax; ties go to the lowest BT, then the lowest RT.
  GridSearchResult result() const {
    if (n_ == 0) throw UserError("grid_search: need at least one probability map");
    GridSearchResult r;
    r.bt_grid = bt_;
    r.rt_grid = rt_;
    r.surface.assign(bt_.size(), std::vector<double>(rt_.size(), 0.0));
    bool first = true;
    for (std::size_t bi = 0; bi < bt_.size(); ++bi) {
      for (std::size_t ri = 0; ri < rt_.size(); ++ri) {
        r.surface[bi][ri] = metrics_from_counts(cells_[bi][ri]).iou;
        if (first || r.surface[bi][ri] > r.best_score) {
          first = false;
          r.best_score = r.surface[bi][ri];
          r.best = {bt_[bi], rt_[ri], connectivity_};
        }
      }
    }
    return r;
  }

 private:
  std::vector<double> bt_;
  std::vector<std::uint64_t> rt_;
  int connectivity_;
  std::vector<std::vector<ConfusionCounts>> cells_;
  std::size_t n_ = 0;
};

/// Exhaustive (BT, RT) search maximising pooled IoU over paired probability maps and truths.
inline GridSearchResult grid_search(std::span<const ProbMap> probs, std::span<const Mask> truths,
                                    std::vector<double> bt_grid, std::vector<std::uint64_t> rt_grid,
                                    int connectivity = 8) {
  if (probs.empty() || probs.size() != truths.size()) {
    throw UserError("grid_search: need one probability map per ground-truth mask");
  }
  GridSearchAccumulator acc(std::move(bt_grid), std::move(rt_grid), connectivity);
  for (std::size_t i = 0; i < probs.size(); ++i) acc.add(probs[i], truths[i]);
  return acc.result();
}

inline void to_json(nlohmann::json& j, const PostprocessParams& p) {
  j = {{"binarization_threshold", p.binarization_threshold},
       {"removal_threshold", p.removal_threshold},
       {"connectivity", p.connectivity}};
}

inline void from_json(const nlohmann::json& j, PostprocessParams& p) {
  p.binarization_threshold = j.at("binarization_threshold").get<double>();
  p.removal_threshold = j.at("removal_threshold").get<std::uint64_t>();
  p.connectivity = j.value("connectivity", 8);
  validate(p);
}

inline void to_json(nlohmann::json& j, const GridSearchResult& r) {
  j = {{"best", r.best},
       {"best_score", r.best_score},
       {"bt_grid", r.bt_grid},
       {"rt_grid", r.rt_grid},
       {"surface", r.surface}};
}

inline void from_json(const nlohmann::json& j, GridSearchResult& r) {
  r.best = j.at("best").get<PostprocessParams>();
  r.best_score = j.at("best_score").get<double>();
  r.bt_grid = j.at("bt_grid").get<std::vector<double>>();
  r.rt_grid = j.at("rt_grid").get<std::vector<std::uint64_t>>();
  r.surface = j.at("surface").get<std::vector<std::vector<double>>>();
}

}  // namespace ptxseg

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

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptxseg/errors.hpp"
#include "ptxseg/image.hpp"

namespace ptxseg {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

enum class Aggregation { pooled, mean_per_image };

inline const char* to_string(Aggregation a) { return a == Aggregation::pooled ? "pooled" : "mean_per_image"; }

inline Aggregation aggregation_from_string(const std::string& s) {
  if (s == "pooled") return Aggregation::pooled;
  if (s == "mean_per_image") return Aggregation::mean_per_image;
  throw UserError("unknown aggregation '" + s + "' (expected pooled or mean_per_image)");
}

struct MetricsReport {
  double iou = 0;
  double f1 = 0;
  double accuracy = 0;
  double precision = 0;
  double recall = 0;
  Aggregation aggregation = Aggregation::pooled;
  std::size_t n_images = 0;
  /// Summed pixel counts over every evaluated image.
  ConfusionCounts counts;
};

inline ConfusionCounts confusion(const Mask& pred, const Mask& truth) {
  if (pred.height != truth.height || pred.width != truth.width) {
    throw UserError("confusion: shape mismatch " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                    " vs " + std::to_string(truth.height) + "x" + std::to_string(truth.width));
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0;
    const bool t = truth.data[i] != 0;
    if (p && t) {
      ++c.tp;
    } else if (p) {
      ++c.fp;
    } else if (t) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

/// Ratios from pixel counts. Empty denominators: precision is 1 when the truth is empty too
/// (else 0), recall mirrors that, and IoU/F1 are 1 when both masks are empty.
inline MetricsReport metrics_from_counts(const ConfusionCounts& c) {
  if (c.total() == 0) throw UserError("metrics_from_counts: no pixels evaluated");
  const auto ratio = [](std::uint64_t num, std::uint64_t den) {
    return static_cast<double>(num) / static_cast<double>(den);
  };
  MetricsReport r;
  r.counts = c;
  r.n_images = 1;
  r.accuracy = ratio(c.tp + c.tn, c.total());
  r.precision = c.tp + c.fp > 0 ? ratio(c.tp, c.tp + c.fp) : (c.tp + c.fn == 0 ? 1.0 : 0.0);
  r.recall = c.tp + c.fn > 0 ? ratio(c.tp, c.tp + c.fn) : (c.tp + c.fp == 0 ? 1.0 : 0.0);
  r.f1 = 2 * c.tp + c.fp + c.fn > 0 ? ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn) : 1.0;
  r.iou = c.tp + c.fp + c.fn > 0 ? ratio(c.tp, c.tp + c.fp + c.fn) : 1.0;
  return r;
}

/// Streaming form of evaluate_set: feed one (prediction, truth) pair at a time.
class MetricsAccumulator {
 public:
  void add(const Mask& pred, const Mask& truth) { add(confusion(pred, truth)); }

  void add(const ConfusionCounts& c) {
    pooled_ += c;
    const auto m = metrics_from_counts(c);
    iou_ += m.iou;
    f1_ += m.f1;
    acc_ += m.accuracy;
    prec_ += m.precision;
    rec_ += m.recall;
    ++n_;
  }

  std::size_t size() const { return n_; }
  const ConfusionCounts& pooled_counts() const { return pooled_; }

  MetricsReport report(Aggregation aggregation = Aggregation::pooled) const {
    if (n_ == 0) throw UserError("evaluate_set: empty sample list");
    MetricsReport out;
    if (aggregation == Aggregation::pooled) {
      out = metrics_from_counts(pooled_);
    } else {
      const double n = static_cast<double>(n_);
      out.iou = iou_ / n;
      out.f1 = f1_ / n;
      out.accuracy = acc_ / n;
      out.precision = prec_ / n;
      out.recall = rec_ / n;
      out.counts = pooled_;
    }
    out.aggregation = aggregation;
    out.n_images = n_;
    return out;
  }

 private:
  ConfusionCounts pooled_;
  double iou_ = 0, f1_ = 0, acc_ = 0, prec_ = 0, rec_ = 0;
  std::size_t n_ = 0;
};

inline MetricsReport evaluate_set(std::span<const Mask> preds, std::span<const Mask> truths,
                                  Aggregation aggregation = Aggregation::pooled) {
  if (preds.empty()) throw UserError("evaluate_set: empty sample list");
  if (preds.size() != truths.size()) throw UserError("evaluate_set: prediction and truth counts differ");
  MetricsAccumulator acc;
  for (std::size_t i = 0; i < preds.size(); ++i) acc.add(preds[i], truths[i]);
  return acc.report(aggregation);
}

inline void to_json(nlohmann::json& j, const ConfusionCounts& c) {
  j = {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
}

inline void from_json(const nlohmann::json& j, ConfusionCounts& c) {
  c.tp = j.at("tp").get<std::uint64_t>();
  c.fp = j.at("fp").get<std::uint64_t>();
  c.fn = j.at("fn").get<std::uint64_t>();
  c.tn = j.at("tn").get<std::uint64_t>();
}

inline void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = {{"iou", r.iou},
       {"f1", r.f1},
       {"accuracy", r.accuracy},
       {"precision", r.precision},
       {"recall", r.recall},
       {"aggregation", to_string(r.aggregation)},
       {"n_images", r.n_images},
       {"confusion", r.counts}};
}

inline void from_json(const nlohmann::json& j, MetricsReport& r) {
  r.iou = j.at("iou").get<double>();
  r.f1 = j.at("f1").get<double>();
  r.accuracy = j.at("accuracy").get<double>();
  r.precision = j.at("precision").get<double>();
  r.recall = j.at("recall").get<double>();
  r.aggregation = aggregation_from_string(j.at("aggregation").get<std::string>());
  r.n_images = j.at("n_images").get<std::size_t>();
  r.counts = j.at("confusion").get<ConfusionCounts>();
}

}  // namespace ptxseg

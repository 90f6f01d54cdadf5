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
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "ptxseg/errors.hpp"
#include "ptxseg/image.hpp"
#include "ptxseg/metrics.hpp"
#include "ptxseg/trainer.hpp"

namespace ptxseg::figures {

/// Overlay hues (BGR): ground truth, prediction, and their intersection.
inline const cv::Scalar kTruthColor(80, 200, 60);
inline const cv::Scalar kPredColor(60, 60, 230);
inline const cv::Scalar kBothColor(0, 220, 255);

namespace detail {

inline void save_png(const std::filesystem::path& path, const cv::Mat& img) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (!cv::imwrite(path.string(), img)) throw RuntimeFailure("cannot write figure " + path.string());
}

inline std::string fmt(double v, const char* spec = "%.3g") {
  char buf[32];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

inline void text(cv::Mat& img, const std::string& s, cv::Point at, double scale = 0.45,
                 cv::Scalar color = cv::Scalar(30, 30, 30), int thickness = 1) {
  cv::putText(img, s, at, cv::FONT_HERSHEY_SIMPLEX, scale, color, thickness, cv::LINE_AA);
}

inline cv::Mat to_bgr(const Image& image) {
  cv::Mat out(image.height, image.width, CV_8UC3);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      auto& px = out.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) {
        const float v = image.channels == 3 ? image.at(y, x, 2 - c) : image.at(y, x, 0);
        px[c] = static_cast<std::uint8_t>(std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f);
      }
    }
  }
  return out;
}

}  // namespace detail

/// Validation IoU and F1 (left axis, [0, 1]) and training loss (right axis) against epoch.
inline void plot_training_curves(const std::vector<EpochRecord>& records, const std::filesystem::path& path) {
  const int W = 900, H = 520, left = 70, right = 80, top = 50, bottom = 60;
  cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));
  const int pw = W - left - right, ph = H - top - bottom;
  cv::rectangle(img, {left, top}, {left + pw, top + ph}, cv::Scalar(0, 0, 0), 1);
  detail::text(img, "Validation IoU / F1 and training loss per epoch", {left, 30}, 0.6, cv::Scalar(0, 0, 0), 1);

  const int first = records.empty() ? 1 : records.front().epoch;
  const int last = records.empty() ? 1 : std::max(records.back().epoch, first + 1);
  double loss_max = 1e-9;
  for (const auto& r : records) loss_max = std::max(loss_max, r.train_loss);
  loss_max *= 1.05;
  auto xpix = [&](int epoch) { return left + static_cast<int>(std::lround(double(epoch - first) / (last - first) * pw)); };
  auto ypix = [&](double v, double vmax) { return top + ph - static_cast<int>(std::lround(std::clamp(v / vmax, 0.0, 1.0) * ph)); };

  for (int k = 0; k <= 5; ++k) {
    const int y = top + ph - k * ph / 5;
    cv::line(img, {left, y}, {left + pw, y}, cv::Scalar(225, 225, 225), 1);
    detail::text(img, detail::fmt(k / 5.0, "%.1f"), {left - 35, y + 5});
    detail::text(img, detail::fmt(loss_max * k / 5.0, "%.3f"), {left + pw + 8, y + 5}, 0.4, cv::Scalar(120, 120, 120));
  }
  const int xticks = std::min(10, last - first);
  for (int k = 0; k <= xticks; ++k) {
    const int e = first + (last - first) * k / std::max(1, xticks);
    detail::text(img, std::to_string(e), {xpix(e) - 8, top + ph + 20});
  }
  detail::text(img, "epoch", {left + pw / 2 - 20, H - 15}, 0.5);
  detail::text(img, "score", {10, top - 10}, 0.45);
  detail::text(img, "loss", {left + pw + 8, top - 10}, 0.45, cv::Scalar(120, 120, 120));

  struct Series {
    std::string name;
    cv::Scalar color;
    double (*get)(const EpochRecord&);
    bool loss_axis;
  };
  const std::vector<Series> series{
      {"val IoU", cv::Scalar(200, 90, 20), [](const EpochRecord& r) { return r.val_iou; }, false},
      {"val F1", cv::Scalar(40, 160, 40), [](const EpochRecord& r) { return r.val_f1; }, false},
      {"train loss", cv::Scalar(120, 120, 120), [](const EpochRecord& r) { return r.train_loss; }, true},
  };
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& se = series[s];
    std::vector<cv::Point> pts;
    for (const auto& r : records) pts.emplace_back(xpix(r.epoch), ypix(se.get(r), se.loss_axis ? loss_max : 1.0));
    if (pts.size() == 1) cv::circle(img, pts[0], 3, se.color, cv::FILLED);
    if (pts.size() > 1) cv::polylines(img, pts, false, se.color, 2, cv::LINE_AA);
    const int ly = top + 20 + static_cast<int>(s) * 20;
    cv::line(img, {left + 15, ly - 4}, {left + 40, ly - 4}, se.color, 2);
    detail::text(img, se.name, {left + 48, ly});
  }
  detail::save_png(path, img);
}

/// 2 x 2 pixel confusion matrix (rows: truth, columns: prediction), shaded by row-normalised rate.
inline void plot_confusion_matrix(const ConfusionCounts& c, const std::filesystem::path& path) {
  const int cell = 200, left = 150, top = 90;
  cv::Mat img(top + 2 * cell + 40, left + 2 * cell + 40, CV_8UC3, cv::Scalar(255, 255, 255));
  detail::text(img, "Pixel confusion matrix", {left, 35}, 0.65, cv::Scalar(0, 0, 0));
  detail::text(img, "predicted", {left + cell - 40, top - 35}, 0.5);
  detail::text(img, "background", {left + 45, top - 10}, 0.45);
  detail::text(img, "pneumothorax", {left + cell + 35, top - 10}, 0.45);
  detail::text(img, "truth", {10, top + cell + 5}, 0.5);
  detail::text(img, "background", {55, top + cell / 2 + 5}, 0.4);
  detail::text(img, "pneumothorax", {45, top + cell + cell / 2 + 5}, 0.4);
  const std::uint64_t cells[2][2] = {{c.tn, c.fp}, {c.fn, c.tp}};
  const char* names[2][2] = {{"TN", "FP"}, {"FN", "TP"}};
  for (int r = 0; r < 2; ++r) {
    const double row_total = static_cast<double>(cells[r][0] + cells[r][1]);
    for (int k = 0; k < 2; ++k) {
      const double rate = row_total > 0 ? cells[r][k] / row_total : 0.0;
      const auto shade = static_cast<int>(255 - 180 * rate);
      const cv::Rect rect(left + k * cell, top + r * cell, cell, cell);
      cv::rectangle(img, rect, cv::Scalar(255, shade, shade), cv::FILLED);
      cv::rectangle(img, rect, cv::Scalar(0, 0, 0), 1);
      const cv::Scalar ink = rate > 0.6 ? cv::Scalar(255, 255, 255) : cv::Scalar(0, 0, 0);
      detail::text(img, names[r][k], {rect.x + 10, rect.y + 25}, 0.5, ink);
      detail::text(img, std::to_string(cells[r][k]), {rect.x + 20, rect.y + cell / 2}, 0.6, ink, 2);
      detail::text(img, detail::fmt(100.0 * rate, "%.2f%%"), {rect.x + 20, rect.y + cell / 2 + 30}, 0.5, ink);
    }
  }
  detail::save_png(path, img);
}

/// Colours mask pixels over a BGR image: truth only, prediction only, or both.
inline cv::Mat overlay(const cv::Mat& base, const Mask* truth, const Mask* pred, double alpha = 0.5) {
  cv::Mat out = base.clone();
  for (int y = 0; y < out.rows; ++y) {
    for (int x = 0; x < out.cols; ++x) {
      const bool t = truth && truth->at(y, x);
      const bool p = pred && pred->at(y, x);
      if (!t && !p) continue;
      const cv::Scalar& col = t && p ? kBothColor : (t ? kTruthColor : kPredColor);
      auto& px = out.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) px[c] = cv::saturate_cast<std::uint8_t>((1 - alpha) * px[c] + alpha * col[c]);
    }
  }
  return out;
}

/// Side-by-side panels: image, ground truth, prediction, and the combined comparison.
inline void plot_comparison(const Image& image, const Mask& truth, const Mask& pred, const std::string& title,
                            const std::filesystem::path& path) {
  if (truth.height != image.height || truth.width != image.width || pred.height != image.height ||
      pred.width != image.width) {
    throw UserError("plot_comparison: image and masks differ in size");
  }
  const cv::Mat base = detail::to_bgr(image);
  const std::vector<std::pair<std::string, cv::Mat>> panels{
      {"image", base},
      {"ground truth", overlay(base, &truth, nullptr)},
      {"prediction", overlay(base, nullptr, &pred)},
      {"comparison", overlay(base, &truth, &pred)},
  };
  const int side = 256, pad = 10, head = 50, foot = 30;
  cv::Mat img(head + side + foot, pad + static_cast<int>(panels.size()) * (side + pad), CV_8UC3,
              cv::Scalar(255, 255, 255));
  detail::text(img, title, {pad, 22}, 0.55, cv::Scalar(0, 0, 0));
  for (std::size_t i = 0; i < panels.size(); ++i) {
    cv::Mat scaled;
    cv::resize(panels[i].second, scaled, cv::Size(side, side), 0, 0, cv::INTER_AREA);
    const int x = pad + static_cast<int>(i) * (side + pad);
    scaled.copyTo(img(cv::Rect(x, head, side, side)));
    detail::text(img, panels[i].first, {x, head - 8});
  }
  const int ly = head + side + 20;
  const std::vector<std::pair<std::string, cv::Scalar>> legend{
      {"truth only", kTruthColor}, {"prediction only", kPredColor}, {"intersection", kBothColor}};
  for (std::size_t i = 0; i < legend.size(); ++i) {
    const int x = pad + static_cast<int>(i) * 170;
    cv::rectangle(img, cv::Rect(x, ly - 11, 14, 14), legend[i].second, cv::FILLED);
    detail::text(img, legend[i].first, {x + 20, ly});
  }
  detail::save_png(path, img);
}

}  // namespace ptxseg::figures

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
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "ptxseg/errors.hpp"

namespace ptxseg {

/// H x W x C intensity image, interleaved, values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, int c = 3, float fill = 0.0f)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  float& at(int y, int x, int ch = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + ch]; }
  float at(int y, int x, int ch = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + ch];
  }
};

/// H x W binary mask, values in {0, 1}.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 0) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t foreground() const {
    return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
  }
  bool operator==(const Mask&) const = default;
};

/// H x W probability map.
struct ProbMap {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  ProbMap() = default;
  ProbMap(int h, int w, float fill = 0.0f) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  float& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

/// 8-bit raster as read from disk, any channel count.
struct Raster {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<std::uint8_t> data;
};

namespace io {

inline Raster read_raster(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw UserError("cannot read image: " + path.string());
  if (m.depth() == CV_16U) m.convertTo(m, CV_8U, 1.0 / 257.0);
  if (m.depth() != CV_8U) throw UserError("unsupported pixel depth: " + path.string());
  if (m.channels() == 3) cv::cvtColor(m, m, cv::COLOR_BGR2RGB);
  if (m.channels() == 4) cv::cvtColor(m, m, cv::COLOR_BGRA2RGB);
  Raster r;
  r.height = m.rows;
  r.width = m.cols;
  r.channels = m.channels();
  r.data.resize(static_cast<std::size_t>(m.rows) * m.cols * m.channels());
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    std::copy(row, row + static_cast<std::size_t>(m.cols) * m.channels(),
              r.data.begin() + static_cast<std::ptrdiff_t>(y) * m.cols * m.channels());
  }
  return r;
}

inline void write_raster(const std::filesystem::path& path, const Raster& r) {
  const int type = r.channels == 1 ? CV_8UC1 : CV_8UC3;
  if (r.channels != 1 && r.channels != 3) throw UserError("write_raster: 1 or 3 channels expected");
  cv::Mat m(r.height, r.width, type, const_cast<std::uint8_t*>(r.data.data()));
  cv::Mat out;
  if (r.channels == 3) {
    cv::cvtColor(m, out, cv::COLOR_RGB2BGR);
  } else {
    out = m;
  }
  if (!cv::imwrite(path.string(), out)) throw RuntimeFailure("cannot write image: " + path.string());
}

/// Loads an RGB image scaled to [0, 1]. Grayscale files are replicated to 3 channels.
inline Image read_image(const std::filesystem::path& path) {
  const Raster r = read_raster(path);
  Image img(r.height, r.width, 3);
  for (std::size_t p = 0; p < static_cast<std::size_t>(r.height) * r.width; ++p) {
    for (int ch = 0; ch < 3; ++ch) {
      const int src = r.channels == 1 ? 0 : ch;
      img.data[p * 3 + ch] = static_cast<float>(r.data[p * r.channels + src]) / 255.0f;
    }
  }
  return img;
}

inline void write_image(const std::filesystem::path& path, const Image& img) {
  Raster r{img.height, img.width, img.channels, {}};
  r.data.resize(img.data.size());
  std::transform(img.data.begin(), img.data.end(), r.data.begin(), [](float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
  });
  write_raster(path, r);
}

/// Writes a mask as single-channel 0/255.
inline void write_mask(const std::filesystem::path& path, const Mask& m) {
  Raster r{m.height, m.width, 1, {}};
  r.data.resize(m.data.size());
  std::transform(m.data.begin(), m.data.end(), r.data.begin(),
                 [](std::uint8_t v) { return static_cast<std::uint8_t>(v ? 255 : 0); });
  write_raster(path, r);
}

}  // namespace io
}  // namespace ptxseg

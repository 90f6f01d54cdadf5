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
#include <cstddef>

#include "ptxseg/image.hpp"

namespace ptxseg {

// Pixel centers sit at integer coordinates. Samples outside the frame read as 0.

template <typename Getter>
float sample_bilinear(const Getter& get, int height, int width, double x, double y) {
  if (x <= -1.0 || y <= -1.0 || x >= width || y >= height) return 0.0f;
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const int x0 = static_cast<int>(fx);
  const int y0 = static_cast<int>(fy);
  const double ax = x - fx;
  const double ay = y - fy;
  auto tap = [&](int yy, int xx) -> double {
    if (xx < 0 || yy < 0 || xx >= width || yy >= height) return 0.0;
    return get(yy, xx);
  };
  double v = 0.0;
  if (ax == 0.0 && ay == 0.0) return static_cast<float>(tap(y0, x0));
  v += (1.0 - ax) * (1.0 - ay) * tap(y0, x0);
  v += ax * (1.0 - ay) * tap(y0, x0 + 1);
  v += (1.0 - ax) * ay * tap(y0 + 1, x0);
  v += ax * ay * tap(y0 + 1, x0 + 1);
  return static_cast<float>(v);
}

/// Nearest tap; half-way points round up. Out of frame -> 0.
template <typename Getter>
auto sample_nearest(const Getter& get, int height, int width, double x, double y) -> decltype(get(0, 0)) {
  const auto xi = static_cast<long>(std::floor(x + 0.5));
  const auto yi = static_cast<long>(std::floor(y + 0.5));
  if (xi < 0 || yi < 0 || xi >= width || yi >= height) return decltype(get(0, 0)){0};
  return get(static_cast<int>(yi), static_cast<int>(xi));
}

/// Source coordinate of an output pixel center under an align-corners=false resize.
inline double resize_source(int out_index, int in_size, int out_size) {
  return (out_index + 0.5) * static_cast<double>(in_size) / out_size - 0.5;
}

/// Continuous form of resize_source for an output-frame coordinate.
inline double resize_source_continuous(double out_coord, int in_size, int out_size) {
  return (out_coord + 0.5) * static_cast<double>(in_size) / out_size - 0.5;
}

/// Edge-clamped bilinear resize, used for probability maps (no zero fill at borders).
inline ProbMap resize_bilinear(const ProbMap& in, int height, int width) {
  if (in.height == height && in.width == width) return in;
  ProbMap out(height, width);
  for (int y = 0; y < height; ++y) {
    const double sy = std::clamp(resize_source(y, in.height, height), 0.0, in.height - 1.0);
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, in.height - 1);
    const double ay = sy - y0;
    for (int x = 0; x < width; ++x) {
      const double sx = std::clamp(resize_source(x, in.width, width), 0.0, in.width - 1.0);
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, in.width - 1);
      const double ax = sx - x0;
      const double v = (1 - ay) * ((1 - ax) * in.at(y0, x0) + ax * in.at(y0, x1)) +
                       ay * ((1 - ax) * in.at(y1, x0) + ax * in.at(y1, x1));
      out.at(y, x) = static_cast<float>(v);
    }
  }
  return out;
}

inline Mask resize_nearest(const Mask& in, int height, int width) {
  if (in.height == height && in.width == width) return in;
  Mask out(height, width);
  for (int y = 0; y < height; ++y) {
    const int sy = std::clamp(static_cast<int>(std::floor(resize_source(y, in.height, height) + 0.5)), 0,
                              in.height - 1);
    for (int x = 0; x < width; ++x) {
      const int sx = std::clamp(static_cast<int>(std::floor(resize_source(x, in.width, width) + 0.5)), 0,
                                in.width - 1);
      out.at(y, x) = in.at(sy, sx);
    }
  }
  return out;
}

}  // namespace ptxseg

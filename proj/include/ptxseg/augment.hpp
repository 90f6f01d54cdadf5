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
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptxseg/errors.hpp"
#include "ptxseg/image.hpp"
#include "ptxseg/resample.hpp"
#include "ptxseg/rng.hpp"

namespace ptxseg {

enum class TransformKind { resize, horizontal_flip, affine, optical_distortion, brightness_contrast };

inline const char* to_string(TransformKind k) {
  switch (k) {
    case TransformKind::resize: return "resize";
    case TransformKind::horizontal_flip: return "horizontal_flip";
    case TransformKind::affine: return "affine";
    case TransformKind::optical_distortion: return "optical_distortion";
    case TransformKind::brightness_contrast: return "brightness_contrast";
  }
  return "?";
}

inline TransformKind transform_kind_from_string(const std::string& s) {
  for (auto k : {TransformKind::resize, TransformKind::horizontal_flip, TransformKind::affine,
                 TransformKind::optical_distortion, TransformKind::brightness_contrast}) {
    if (s == to_string(k)) return k;
  }
  throw UserError("unknown transform kind: " + s);
}

/// Ranges are symmetric: a value v means U(-v, v).
struct TransformParams {
  int size = 512;                // resize target
  double shift = 0.10;           // fraction of side length
  double scale = 0.10;           // fraction around 1
  double rotate_degrees = 15.0;
  double distortion = 0.2;       // radial coefficient
  double brightness = 0.2;
  double contrast = 0.2;
};

struct TransformSpec {
  TransformKind kind = TransformKind::resize;
  double probability = 1.0;
  TransformParams params;
};

enum class AugmentMode { train, val };

struct AugmentPipeline {
  std::vector<TransformSpec> transforms;
  AugmentMode mode = AugmentMode::val;

  int target_resolution() const {
    for (const auto& t : transforms) {
      if (t.kind == TransformKind::resize) return t.params.size;
    }
    return 0;
  }
};

inline void validate(const TransformSpec& t) {
  if (!(t.probability >= 0.0 && t.probability <= 1.0)) {
    throw UserError(std::string("transform ") + to_string(t.kind) + ": probability must be in [0, 1]");
  }
  const auto& p = t.params;
  for (double v : {p.shift, p.scale, p.rotate_degrees, p.distortion, p.brightness, p.contrast}) {
    if (!std::isfinite(v) || v < 0.0) {
      throw UserError(std::string("transform ") + to_string(t.kind) + ": ranges must be finite and >= 0");
    }
  }
  if (p.scale >= 1.0) throw UserError("affine scale range must be < 1");
  if (t.kind == TransformKind::resize && p.size <= 0) throw UserError("resize target must be positive");
}

/// val: [resize]. train: [resize, flip, affine, optical_distortion, brightness_contrast];
/// train overrides replace the default step of the same kind.
inline AugmentPipeline build_pipeline(AugmentMode mode, int target_resolution,
                                      const std::optional<std::vector<TransformSpec>>& overrides = std::nullopt) {
  if (target_resolution < 1) throw UserError("target resolution must be positive");
  TransformSpec resize{TransformKind::resize, 1.0, {}};
  resize.params.size = target_resolution;
  AugmentPipeline p;
  p.mode = mode;
  p.transforms.push_back(resize);
  if (mode == AugmentMode::val) return p;

  p.transforms.push_back({TransformKind::horizontal_flip, 0.5, {}});
  p.transforms.push_back({TransformKind::affine, 0.5, {}});
  p.transforms.push_back({TransformKind::optical_distortion, 0.3, {}});
  p.transforms.push_back({TransformKind::brightness_contrast, 0.3, {}});
  if (overrides) {
    for (const auto& o : *overrides) {
      if (o.kind == TransformKind::resize) continue;  // resolution comes from target_resolution
      for (auto& t : p.transforms) {
        if (t.kind == o.kind) t = o;
      }
    }
  }
  for (auto& t : p.transforms) {
    t.params.size = target_resolution;
    validate(t);
  }
  return p;
}

/// Same pipeline with every probability-gated step switched off.
inline AugmentPipeline with_probabilities(AugmentPipeline p, double probability) {
  for (auto& t : p.transforms) {
    if (t.kind != TransformKind::resize) t.probability = probability;
  }
  return p;
}

struct AugmentedPair {
  Image image;
  Mask mask;
};

namespace detail {

struct Point {
  double x;
  double y;
};

/// One sampled geometric step, stored as its backward map in the target frame.
struct GeometricStep {
  TransformKind kind;
  double a = 0, b = 0, c = 0, d = 0, tx = 0, ty = 0;  // affine inverse
  double k = 0;                                       // distortion coefficient
};

inline Point backward(const GeometricStep& s, Point q, double side) {
  const double center = (side - 1.0) / 2.0;
  switch (s.kind) {
    case TransformKind::horizontal_flip:
      return {side - 1.0 - q.x, q.y};
    case TransformKind::affine: {
      const double x = q.x - center - s.tx;
      const double y = q.y - center - s.ty;
      return {s.a * x + s.b * y + center, s.c * x + s.d * y + center};
    }
    case TransformKind::optical_distortion: {
      const double half = std::max(center, 0.5);
      const double u = (q.x - center) / half;
      const double v = (q.y - center) / half;
      const double f = 1.0 + s.k * (u * u + v * v);
      return {center + u * f * half, center + v * f * half};
    }
    default:
      return q;
  }
}

}  // namespace detail

/// Applies the pipeline to an image/mask pair. Geometric steps share one sampled coordinate
/// map (bilinear for the image, nearest for the mask); photometric steps touch the image only.
/// Deterministic in (inputs, seed).
inline AugmentedPair apply_paired(const AugmentPipeline& pipeline, const Image& image, const Mask& mask,
                                  std::uint64_t seed) {
  if (image.height != mask.height || image.width != mask.width) {
    throw UserError("apply_paired: image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                    " and mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                    " differ in size");
  }
  if (image.height <= 0 || image.width <= 0) throw UserError("apply_paired: empty input");
  const int side = pipeline.target_resolution() > 0 ? pipeline.target_resolution() : image.height;
  const int out_h = pipeline.target_resolution() > 0 ? side : image.height;
  const int out_w = pipeline.target_resolution() > 0 ? side : image.width;

  Rng rng(mix_seed(seed));
  std::vector<detail::GeometricStep> steps;
  double alpha = 1.0;
  double beta = 0.0;
  for (const auto& t : pipeline.transforms) {
    // Every step draws its gate and parameters unconditionally so the stream layout
    // does not depend on which steps fire.
    const bool fire = rng.uniform() < t.probability;
    const auto& p = t.params;
    switch (t.kind) {
      case TransformKind::resize:
        break;
      case TransformKind::horizontal_flip:
        if (fire) steps.push_back({TransformKind::horizontal_flip});
        break;
      case TransformKind::affine: {
        const double sx = rng.uniform(-p.shift, p.shift) * out_w;
        const double sy = rng.uniform(-p.shift, p.shift) * out_h;
        const double scale = 1.0 + rng.uniform(-p.scale, p.scale);
        const double angle = rng.uniform(-p.rotate_degrees, p.rotate_degrees) * std::numbers::pi / 180.0;
        if (fire) {
          detail::GeometricStep s{TransformKind::affine};
          const double ca = std::cos(angle) / scale;
          const double sa = std::sin(angle) / scale;
          s.a = ca;
          s.b = sa;
          s.c = -sa;
          s.d = ca;
          s.tx = sx;
          s.ty = sy;
          steps.push_back(s);
        }
        break;
      }
      case TransformKind::optical_distortion: {
        const double k = rng.uniform(-p.distortion, p.distortion);
        if (fire) {
          detail::GeometricStep s{TransformKind::optical_distortion};
          s.k = k;
          steps.push_back(s);
        }
        break;
      }
      case TransformKind::brightness_contrast: {
        const double c = 1.0 + rng.uniform(-p.contrast, p.contrast);
        const double b = rng.uniform(-p.brightness, p.brightness);
        if (fire) {
          alpha *= c;
          beta = beta * c + b;
        }
        break;
      }
    }
  }

  AugmentedPair out{Image(out_h, out_w, image.channels), Mask(out_h, out_w)};
  const double side_d = side;
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      detail::Point q{static_cast<double>(x), static_cast<double>(y)};
      for (auto it = steps.rbegin(); it != steps.rend(); ++it) q = detail::backward(*it, q, side_d);
      const double src_x = resize_source_continuous(q.x, image.width, out_w);
      const double src_y = resize_source_continuous(q.y, image.height, out_h);
      for (int ch = 0; ch < image.channels; ++ch) {
        const float v = sample_bilinear([&](int yy, int xx) { return image.at(yy, xx, ch); }, image.height,
                                        image.width, src_x, src_y);
        out.image.at(y, x, ch) = v;
      }
      out.mask.at(y, x) = sample_nearest([&](int yy, int xx) { return mask.at(yy, xx); }, mask.height, mask.width,
                                         src_x, src_y);
    }
  }
  if (alpha != 1.0 || beta != 0.0) {
    for (auto& v : out.image.data) v = static_cast<float>(v * alpha + beta);
  }
  for (auto& v : out.image.data) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

// JSON form: {"kind": ..., "probability": ..., "parameters": {...}}

inline void to_json(nlohmann::json& j, const TransformSpec& t) {
  const auto& p = t.params;
  nlohmann::json params;
  switch (t.kind) {
    case TransformKind::resize: params = {{"size", p.size}}; break;
    case TransformKind::horizontal_flip: params = nlohmann::json::object(); break;
    case TransformKind::affine:
      params = {{"shift", p.shift}, {"scale", p.scale}, {"rotate_degrees", p.rotate_degrees}};
      break;
    case TransformKind::optical_distortion: params = {{"distortion", p.distortion}}; break;
    case TransformKind::brightness_contrast: params = {{"brightness", p.brightness}, {"contrast", p.contrast}}; break;
  }
  j = {{"kind", to_string(t.kind)}, {"probability", t.probability}, {"parameters", params}};
}

inline void from_json(const nlohmann::json& j, TransformSpec& t) {
  t = TransformSpec{};
  t.kind = transform_kind_from_string(j.at("kind").get<std::string>());
  t.probability = j.value("probability", 1.0);
  if (j.contains("parameters")) {
    const auto& p = j.at("parameters");
    for (const auto& [key, value] : p.items()) {
      if (key == "size") t.params.size = value.get<int>();
      else if (key == "shift") t.params.shift = value.get<double>();
      else if (key == "scale") t.params.scale = value.get<double>();
      else if (key == "rotate_degrees") t.params.rotate_degrees = value.get<double>();
      else if (key == "distortion") t.params.distortion = value.get<double>();
      else if (key == "brightness") t.params.brightness = value.get<double>();
      else if (key == "contrast") t.params.contrast = value.get<double>();
      else throw UserError("unknown parameter '" + key + "' for transform " + to_string(t.kind));
    }
  }
  validate(t);
}

}  // namespace ptxseg

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
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ptxseg/errors.hpp"
#include "ptxseg/image.hpp"
#include "ptxseg/rng.hpp"

namespace ptxseg {

enum class Split { train, val };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "val"; }

struct Sample {
  std::string stem;
  std::filesystem::path image_path;
  std::filesystem::path mask_path;
  /// Unknown until the mask has been decoded (or read from a manifest CSV).
  std::optional<bool> has_positive;
};

struct DatasetCounts {
  std::size_t total = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
  bool operator==(const DatasetCounts&) const = default;
};

struct Manifest {
  std::vector<Sample> samples;  // lexicographic by stem
  std::vector<Split> split;     // parallel to samples
  std::uint64_t seed = 0;
  std::optional<DatasetCounts> counts;

  std::vector<std::size_t> indices(Split which) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < split.size(); ++i) {
      if (split[i] == which) out.push_back(i);
    }
    return out;
  }
};

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  bool operator==(const SplitSizes&) const = default;
};

/// train = floor(fraction * n), remainder to validation; both sides non-empty.
inline SplitSizes split_sizes(std::size_t n, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw UserError("split_sizes: train fraction must be in (0, 1)");
  }
  if (n < 2) throw UserError("split_sizes: need at least 2 samples to form train and val splits");
  // Nudge guards values such as 0.85 * 20 = 16.999999... in binary floating point.
  auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n) + 1e-9));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  return {n_train, n - n_train};
}

/// 8-bit single-channel raster -> {0,1}; values above 127 are foreground.
inline Mask decode_mask(const Raster& raw) {
  if (raw.channels != 1) {
    throw UserError("decode_mask: expected a single-channel mask, got " + std::to_string(raw.channels) +
                    " channels");
  }
  Mask m(raw.height, raw.width);
  std::transform(raw.data.begin(), raw.data.end(), m.data.begin(),
                 [](std::uint8_t v) { return static_cast<std::uint8_t>(v > 127 ? 1 : 0); });
  return m;
}

inline Mask read_mask(const std::filesystem::path& path) { return decode_mask(io::read_raster(path)); }

struct LoadedSample {
  Image image;
  Mask mask;
};

/// Decodes one pair. Re-entrant.
inline LoadedSample load_sample(const Sample& s) {
  LoadedSample out{io::read_image(s.image_path), read_mask(s.mask_path)};
  if (out.image.height != out.mask.height || out.image.width != out.mask.width) {
    throw UserError("image/mask size mismatch for stem " + s.stem);
  }
  return out;
}

struct ManifestOptions {
  double train_fraction = 0.85;
  bool stratify = false;
  /// Decodes every mask to fill has_positive and counts. Forced on by stratify.
  bool compute_counts = true;
};

namespace detail {

inline std::map<std::string, std::filesystem::path> list_pngs(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw UserError("not a directory: " + dir.string());
  std::map<std::string, std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext != ".png") continue;
    out.emplace(entry.path().stem().string(), entry.path());
  }
  return out;
}

inline std::vector<Split> assign_split(std::size_t n, double fraction, Rng& rng) {
  const auto sizes = split_sizes(n, fraction);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order.begin(), order.end());
  std::vector<Split> split(n, Split::val);
  for (std::size_t k = 0; k < sizes.train; ++k) split[order[k]] = Split::train;
  return split;
}

}  // namespace detail

inline DatasetCounts count_positives(Manifest& m) {
  DatasetCounts c;
  for (auto& s : m.samples) {
    if (!s.has_positive) s.has_positive = read_mask(s.mask_path).foreground() > 0;
    ++c.total;
    if (*s.has_positive) {
      ++c.positive;
    } else {
      ++c.negative;
    }
  }
  m.counts = c;
  return c;
}

/// Pairs `<image_dir>/<stem>.png` with `<mask_dir>/<stem>.png` and assigns a seeded split.
inline Manifest load_manifest(const std::filesystem::path& image_dir, const std::filesystem::path& mask_dir,
                              std::uint64_t seed, const ManifestOptions& opt = {}) {
  const auto images = detail::list_pngs(image_dir);
  const auto masks = detail::list_pngs(mask_dir);
  if (images.empty()) throw UserError("no samples found in " + image_dir.string());

  Manifest m;
  m.seed = seed;
  for (const auto& [stem, path] : images) {
    const auto it = masks.find(stem);
    if (it == masks.end()) throw UserError("missing mask for stem: " + stem);
    m.samples.push_back({stem, path, it->second, std::nullopt});
  }
  if (opt.compute_counts || opt.stratify) count_positives(m);

  Rng rng(mix_seed(seed));
  const std::size_t n = m.samples.size();
  if (!opt.stratify) {
    m.split = detail::assign_split(n, opt.train_fraction, rng);
    return m;
  }
  // Stratified: split positives and negatives independently, each by the same rule.
  m.split.assign(n, Split::val);
  for (bool positive : {true, false}) {
    std::vector<std::size_t> group;
    for (std::size_t i = 0; i < n; ++i) {
      if (*m.samples[i].has_positive == positive) group.push_back(i);
    }
    if (group.size() < 2) {
      for (auto i : group) m.split[i] = Split::train;
      continue;
    }
    const auto local = detail::assign_split(group.size(), opt.train_fraction, rng);
    for (std::size_t k = 0; k < group.size(); ++k) m.split[group[k]] = local[k];
  }
  return m;
}

inline Manifest load_dataset(const std::filesystem::path& root, std::uint64_t seed, const ManifestOptions& opt = {}) {
  std::error_code ec;
  if (std::filesystem::is_directory(root, ec) && !std::filesystem::exists(root / "images", ec)) {
    throw UserError("no samples found in " + root.string() + " (expected images/ and masks/ subdirectories)");
  }
  return load_manifest(root / "images", root / "masks", seed, opt);
}

/// CSV with header `stem,split,has_positive`. Unknown has_positive is written as an empty field.
inline void write_manifest_csv(const std::filesystem::path& path, const Manifest& m) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write manifest: " + path.string());
  out << "stem,split,has_positive\n";
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    const auto& s = m.samples[i];
    out << s.stem << ',' << to_string(m.split[i]) << ',';
    if (s.has_positive) out << (*s.has_positive ? 1 : 0);
    out << '\n';
  }
  if (!out) throw RuntimeFailure("failed writing manifest: " + path.string());
}

/// Restores a manifest written by write_manifest_csv against a `<root>/images`, `<root>/masks` layout.
inline Manifest read_manifest_csv(const std::filesystem::path& path, const std::filesystem::path& root,
                                  std::uint64_t seed = 0) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot read manifest: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "stem,split,has_positive") {
    throw UserError("manifest header must be 'stem,split,has_positive': " + path.string());
  }
  Manifest m;
  m.seed = seed;
  DatasetCounts counts;
  bool all_known = true;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 3) throw UserError("manifest line " + std::to_string(lineno) + ": expected 3 fields");
    Sample s{f[0], root / "images" / (f[0] + ".png"), root / "masks" / (f[0] + ".png"), std::nullopt};
    if (f[2] == "1" || f[2] == "0") {
      s.has_positive = f[2] == "1";
      ++counts.total;
      (f[2] == "1" ? counts.positive : counts.negative) += 1;
    } else if (f[2].empty()) {
      all_known = false;
    } else {
      throw UserError("manifest line " + std::to_string(lineno) + ": bad has_positive '" + f[2] + "'");
    }
    if (f[1] == "train") {
      m.split.push_back(Split::train);
    } else if (f[1] == "val") {
      m.split.push_back(Split::val);
    } else {
      throw UserError("manifest line " + std::to_string(lineno) + ": bad split '" + f[1] + "'");
    }
    m.samples.push_back(std::move(s));
  }
  if (m.samples.empty()) throw UserError("no samples found in manifest " + path.string());
  if (all_known) m.counts = counts;
  return m;
}

struct SyntheticOptions {
  double negative_fraction = 0.25;
};

/// Number of empty-mask samples emitted by make_synthetic for n samples.
inline std::size_t synthetic_negative_count(std::size_t n, double negative_fraction) {
  auto k = static_cast<std::size_t>(std::llround(static_cast<double>(n) * std::clamp(negative_fraction, 0.0, 1.0)));
  if (negative_fraction < 1.0 && k >= n && n > 0) k = n - 1;
  return k;
}

/// One synthetic pair: noisy intensity gradient with a brighter rotated ellipse, mask = ellipse.
inline LoadedSample synthesize_pair(int resolution, bool positive, Rng& rng) {
  LoadedSample out{Image(resolution, resolution, 3), Mask(resolution, resolution)};
  const double res = resolution;
  const double gx = rng.uniform(-0.15, 0.15);
  const double gy = rng.uniform(0.05, 0.25);
  const double base = rng.uniform(0.2, 0.35);
  const double cx = rng.uniform(0.25, 0.75) * res;
  const double cy = rng.uniform(0.25, 0.75) * res;
  const double ax = rng.uniform(0.10, 0.22) * res;
  const double ay = rng.uniform(0.06, 0.16) * res;
  const double theta = rng.uniform(0.0, std::numbers::pi);
  const double boost = rng.uniform(0.25, 0.4);
  const double ct = std::cos(theta);
  const double st = std::sin(theta);
  for (int y = 0; y < resolution; ++y) {
    for (int x = 0; x < resolution; ++x) {
      double v = base + gx * (x / res) + gy * (y / res) + 0.04 * rng.normal();
      if (positive) {
        const double dx = x + 0.5 - cx;
        const double dy = y + 0.5 - cy;
        const double u = (ct * dx + st * dy) / ax;
        const double w = (-st * dx + ct * dy) / ay;
        if (u * u + w * w <= 1.0) {
          v += boost;
          out.mask.at(y, x) = 1;
        }
      }
      const float q = static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0f;
      for (int ch = 0; ch < 3; ++ch) out.image.at(y, x, ch) = q;
    }
  }
  return out;
}

/// Writes n pairs under `<root>/images` and `<root>/masks`. Returns the stems written.
inline std::vector<std::string> make_synthetic(const std::filesystem::path& root, std::size_t n, int resolution,
                                               std::uint64_t seed, const SyntheticOptions& opt = {}) {
  if (n < 1) throw UserError("make_synthetic: n must be >= 1");
  if (resolution < 32) throw UserError("make_synthetic: resolution must be >= 32");
  std::error_code ec;
  std::filesystem::create_directories(root / "images", ec);
  std::filesystem::create_directories(root / "masks", ec);
  if (ec || !std::filesystem::is_directory(root / "images") || !std::filesystem::is_directory(root / "masks")) {
    throw UserError("cannot create output directory under " + root.string());
  }
  Rng pick(mix_seed(seed ^ 0x5eedULL));
  std::vector<char> negative(n, 0);
  const auto k = synthetic_negative_count(n, opt.negative_fraction);
  std::fill(negative.begin(), negative.begin() + static_cast<std::ptrdiff_t>(k), 1);
  pick.shuffle(negative.begin(), negative.end());

  std::vector<std::string> stems;
  for (std::size_t i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "synth_%05zu", i);
    Rng rng(sample_seed(seed, 0, i));
    const auto pair = synthesize_pair(resolution, !negative[i], rng);
    io::write_image(root / "images" / (std::string(buf) + ".png"), pair.image);
    io::write_mask(root / "masks" / (std::string(buf) + ".png"), pair.mask);
    stems.emplace_back(buf);
  }
  return stems;
}

}  // namespace ptxseg

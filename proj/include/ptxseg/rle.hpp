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
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ptxseg/errors.hpp"
#include "ptxseg/image.hpp"

namespace ptxseg {

/// Foreground runs over the row-major flattened mask. Starts are 1-indexed.
struct RleMask {
  struct Run {
    std::uint64_t start = 1;
    std::uint64_t length = 0;
    bool operator==(const Run&) const = default;
  };

  int width = 0;
  int height = 0;
  std::vector<Run> runs;

  bool operator==(const RleMask&) const = default;
};

inline RleMask rle_encode(const Mask& mask) {
  RleMask rle{mask.width, mask.height, {}};
  const std::size_t n = mask.data.size();
  std::size_t i = 0;
  while (i < n) {
    if (mask.data[i] == 0) {
      ++i;
      continue;
    }
    const std::size_t begin = i;
    while (i < n && mask.data[i] != 0) ++i;
    rle.runs.push_back({begin + 1, i - begin});
  }
  return rle;
}

inline Mask rle_decode(const RleMask& rle) {
  if (rle.width < 0 || rle.height < 0) throw UserError("rle_decode: negative dimensions");
  Mask mask(rle.height, rle.width);
  const std::uint64_t total = static_cast<std::uint64_t>(rle.width) * rle.height;
  std::uint64_t next_free = 1;
  for (const auto& run : rle.runs) {
    if (run.start < 1) throw UserError("rle_decode: run start must be >= 1");
    if (run.start < next_free) throw UserError("rle_decode: runs overlap or are unsorted");
    if (run.length > total || run.start - 1 > total - run.length) {
      throw UserError("rle_decode: run " + std::to_string(run.start) + "+" + std::to_string(run.length) +
                      " exceeds mask size " + std::to_string(total));
    }
    for (std::uint64_t k = 0; k < run.length; ++k) mask.data[run.start - 1 + k] = 1;
    next_free = run.start + run.length;
  }
  return mask;
}

/// "start length start length ..."; the empty mask is the empty string.
inline std::string rle_to_string(const RleMask& rle) {
  std::string out;
  for (const auto& run : rle.runs) {
    if (!out.empty()) out += ' ';
    out += std::to_string(run.start);
    out += ' ';
    out += std::to_string(run.length);
  }
  return out;
}

inline RleMask rle_from_string(std::string_view text, int width, int height) {
  RleMask rle{width, height, {}};
  std::istringstream in{std::string(text)};
  std::string a;
  std::string b;
  while (in >> a) {
    if (!(in >> b)) throw UserError("rle text: odd number of fields");
    if (a.find_first_not_of("0123456789") != std::string::npos ||
        b.find_first_not_of("0123456789") != std::string::npos) {
      throw UserError("rle text: not an integer pair: '" + a + " " + b + "'");
    }
    try {
      std::size_t pa = 0;
      std::size_t pb = 0;
      const auto start = std::stoull(a, &pa);
      const auto length = std::stoull(b, &pb);
      if (pa != a.size() || pb != b.size()) throw std::invalid_argument("trailing");
      rle.runs.push_back({start, length});
    } catch (const std::exception&) {
      throw UserError("rle text: not an integer pair: '" + a + " " + b + "'");
    }
  }
  return rle;
}

}  // namespace ptxseg

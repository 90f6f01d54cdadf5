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

#include <cmath>
#include <limits>

namespace ptxseg::nn {

/// Rounds a value to the nearest IEEE binary16 value (ties to even), returned in T.
/// Magnitudes that round past the largest half (65504) become infinity.
template <typename T>
T round_to_half(T v) {
  if (!std::isfinite(v) || v == T(0)) return v;
  const T a = std::fabs(v);
  if (a >= T(65520)) return std::copysign(std::numeric_limits<T>::infinity(), v);
  int e = 0;
  std::frexp(a, &e);  // a = m * 2^e, m in [0.5, 1)
  const int lead = e - 1;
  const int quantum_exp = lead < -14 ? -24 : lead - 10;
  const T q = std::ldexp(T(1), quantum_exp);
  return std::copysign(std::nearbyint(a / q) * q, v);
}

}  // namespace ptxseg::nn

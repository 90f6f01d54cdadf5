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
#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <new>
#include <vector>

namespace ptxseg {

/// Cache-line aligned allocator. Vectorised kernels peel a data-dependent number of leading
/// elements when a buffer is misaligned, which changes rounding; fixing the alignment makes
/// results bit-reproducible from run to run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense NCHW tensor. Owns its storage; copies are deep.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w, T fill = T(0))
      : shape_{n, c, h, w}, data_(static_cast<std::size_t>(n) * c * h * w, fill) {
    if (n < 0 || c < 0 || h < 0 || w < 0) throw std::invalid_argument("Tensor: negative dimension");
  }

  int n() const { return shape_[0]; }
  int c() const { return shape_[1]; }
  int h() const { return shape_[2]; }
  int w() const { return shape_[3]; }
  const std::array<int, 4>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t plane() const { return static_cast<std::size_t>(shape_[2]) * shape_[3]; }
  std::size_t sample_stride() const { return plane() * shape_[1]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  AlignedVector<T>& storage() { return data_; }
  const AlignedVector<T>& storage() const { return data_; }

  T* sample(int i) { return data_.data() + i * sample_stride(); }
  const T* sample(int i) const { return data_.data() + i * sample_stride(); }
  T* channel(int i, int ch) { return sample(i) + ch * plane(); }
  const T* channel(int i, int ch) const { return sample(i) + ch * plane(); }

  T& at(int i, int ch, int y, int x) { return data_[index(i, ch, y, x)]; }
  const T& at(int i, int ch, int y, int x) const { return data_[index(i, ch, y, x)]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  std::string shape_string() const {
    return "[" + std::to_string(shape_[0]) + "," + std::to_string(shape_[1]) + "," +
           std::to_string(shape_[2]) + "," + std::to_string(shape_[3]) + "]";
  }

 private:
  std::size_t index(int i, int ch, int y, int x) const {
    return ((static_cast<std::size_t>(i) * shape_[1] + ch) * shape_[2] + y) * shape_[3] + x;
  }

  std::array<int, 4> shape_{0, 0, 0, 0};
  AlignedVector<T> data_;
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_string() +
                                " vs " + b.shape_string());
  }
}

}  // namespace ptxseg

/*
 * Copyright 2026 The cmrsynth Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cmr/error.hpp"

namespace cmr {

/// Dense 3D volume indexed (slice, row, col) with col fastest, matching the
/// on-disk voxel order of the volume container.
template <typename T>
class Volume {
 public:
  using value_type = T;

  Volume() = default;
  Volume(int slices, int rows, int cols, T fill = T{})
      : slices_(slices), rows_(rows), cols_(cols),
        data_(static_cast<std::size_t>(slices) * rows * cols, fill) {
    if (slices < 0 || rows < 0 || cols < 0) {
      throw InvalidArgumentError("Volume: negative dimension");
    }
  }

  int slices() const { return slices_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  std::size_t plane_size() const { return static_cast<std::size_t>(rows_) * cols_; }
  bool empty() const { return data_.empty(); }

  T& operator()(int s, int r, int c) { return data_[index(s, r, c)]; }
  const T& operator()(int s, int r, int c) const { return data_[index(s, r, c)]; }

  std::span<T> slice(int s) { return {data_.data() + s * plane_size(), plane_size()}; }
  std::span<const T> slice(int s) const {
    return {data_.data() + s * plane_size(), plane_size()};
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  template <typename U>
  bool same_shape(const Volume<U>& other) const {
    return slices_ == other.slices() && rows_ == other.rows() && cols_ == other.cols();
  }

  bool operator==(const Volume& other) const = default;

 private:
  std::size_t index(int s, int r, int c) const {
    return (static_cast<std::size_t>(s) * rows_ + r) * cols_ + c;
  }

  int slices_ = 0;
  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

using ImageVolume = Volume<float>;
using LabelVolume = Volume<std::uint8_t>;

}  // namespace cmr

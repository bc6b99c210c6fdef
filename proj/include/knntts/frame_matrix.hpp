// Copyright 2026 The knn-tts Authors
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
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "knntts/error.hpp"

namespace knntts {

/// Dense row-major matrix of 32-bit floats; one row per frame.
class FrameMatrix {
 public:
  FrameMatrix() = default;
  FrameMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}
  FrameMatrix(std::size_t rows, std::size_t cols, std::vector<float> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      Fail(ErrorCode::kSizeMismatch, "matrix data size does not match shape");
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const float> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }
  std::span<float> row(std::size_t i) noexcept {
    return {data_.data() + i * cols_, cols_};
  }

  float operator()(std::size_t i, std::size_t j) const noexcept {
    return data_[i * cols_ + j];
  }
  float& operator()(std::size_t i, std::size_t j) noexcept {
    return data_[i * cols_ + j];
  }

  std::span<const float> data() const noexcept { return data_; }
  std::span<float> data() noexcept { return data_; }

  /// Appends one row; the first append on an empty 0x0 matrix fixes `cols`.
  void append_row(std::span<const float> values) {
    if (rows_ == 0 && cols_ == 0) cols_ = values.size();
    if (values.size() != cols_) {
      Fail(ErrorCode::kDimensionMismatch, "dimension mismatch: row has " +
                                              std::to_string(values.size()) +
                                              " values, expected " +
                                              std::to_string(cols_));
    }
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
  }

  void reserve_rows(std::size_t n) { data_.reserve(n * cols_); }

  bool all_finite() const noexcept {
    for (float v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const FrameMatrix&, const FrameMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

// Dot product with eight interleaved float accumulators (lane = d % 8)
// reduced into a double in fixed lane order. Every caller, tiled or not,
// gets the same bits for the same pair of vectors.
inline constexpr std::size_t kDotLanes = 8;

inline double Dot(std::span<const float> a, std::span<const float> b) noexcept {
  const std::size_t n = a.size();
  const std::size_t body = n - n % kDotLanes;
  float acc[kDotLanes] = {};
  for (std::size_t d = 0; d < body; d += kDotLanes) {
    for (std::size_t l = 0; l < kDotLanes; ++l) acc[l] += a[d + l] * b[d + l];
  }
  for (std::size_t d = body; d < n; ++d) acc[d - body] += a[d] * b[d];
  double sum = 0.0;
  for (float v : acc) sum += static_cast<double>(v);
  return sum;
}

inline double Norm(std::span<const float> a) noexcept {
  return std::sqrt(Dot(a, a));
}

}  // namespace knntts

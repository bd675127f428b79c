// Copyright 2026 The kdlab Authors.
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
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "kdlab/core/errors.hpp"

namespace kdlab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major tensor. Image batches use NCHW, matrices use [rows x cols].
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != shape_numel(shape_))
      throw ShapeError("tensor data has " + std::to_string(data_.size()) + " values, shape " + shape_string(shape_) +
                       " needs " + std::to_string(shape_numel(shape_)));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  /// Number of elements per leading-axis slice (one sample of a batch).
  std::size_t stride0() const noexcept { return shape_.empty() || shape_[0] == 0 ? 0 : data_.size() / shape_[0]; }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size())
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    return Tensor(std::move(shape), data_);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }
  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  void require_same_shape(const Tensor& other, std::string_view what) const {
    if (other.shape_ != shape_)
      throw ShapeError(std::string(what) + ": expected shape " + shape_string(shape_) + ", got " +
                       shape_string(other.shape_));
  }

  /// Copy of samples [begin, end) along the leading axis.
  Tensor slice0(std::size_t begin, std::size_t end) const {
    Shape s = shape_;
    s[0] = end - begin;
    const std::size_t st = stride0();
    return Tensor(std::move(s), std::vector<T>(data_.begin() + begin * st, data_.begin() + end * st));
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  Shape shape_;
  std::vector<T> data_;
};

inline void require_shape(const Shape& expected, const Shape& actual, std::string_view what) {
  if (expected != actual)
    throw ShapeError(std::string(what) + ": expected " + shape_string(expected) + ", got " + shape_string(actual));
}

/// Concatenate along the leading axis.
template <typename T>
Tensor<T> concat0(std::span<const Tensor<T>> parts) {
  if (parts.empty()) return {};
  Shape s = parts.front().shape();
  s[0] = 0;
  std::vector<T> values;
  for (const auto& p : parts) {
    Shape tail(p.shape().begin() + 1, p.shape().end());
    Shape expected(s.begin() + 1, s.end());
    require_shape(expected, tail, "concat0");
    s[0] += p.dim(0);
    values.insert(values.end(), p.values().begin(), p.values().end());
  }
  return Tensor<T>(std::move(s), std::move(values));
}

}  // namespace kdlab

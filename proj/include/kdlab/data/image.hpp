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

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "kdlab/core/tensor.hpp"

namespace kdlab::data {

inline constexpr std::size_t kChannels = 3;
inline constexpr std::size_t kSide = 32;
inline constexpr std::size_t kImageBytes = kChannels * kSide * kSide;

/// Per-channel CIFAR10 training-set statistics on [0, 1] pixel values.
inline constexpr std::array<float, 3> kCifarMean = {0.4914f, 0.4822f, 0.4465f};
inline constexpr std::array<float, 3> kCifarStd = {0.2470f, 0.2435f, 0.2616f};

/// 8-bit planar (CHW) RGB image.
struct Image8 {
  std::size_t height = kSide;
  std::size_t width = kSide;
  std::vector<std::uint8_t> pixels;

  Image8() : pixels(kImageBytes, 0) {}
  Image8(std::size_t h, std::size_t w) : height(h), width(w), pixels(kChannels * h * w, 0) {}
  Image8(std::size_t h, std::size_t w, std::span<const std::uint8_t> chw)
      : height(h), width(w), pixels(chw.begin(), chw.end()) {
    if (pixels.size() != kChannels * h * w) throw ShapeError("image: pixel count does not match 3 x h x w");
  }

  std::uint8_t& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  std::uint8_t at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }
  friend bool operator==(const Image8&, const Image8&) = default;
};

/// Images of one fixed size with optional labels (empty for unlabeled sets).
struct ImageDataset {
  std::size_t height = kSide;
  std::size_t width = kSide;
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;
  std::size_t num_classes = 10;

  std::size_t image_bytes() const { return kChannels * height * width; }
  std::size_t size() const { return image_bytes() ? pixels.size() / image_bytes() : 0; }
  bool empty() const { return size() == 0; }
  bool labeled() const { return !labels.empty(); }

  std::span<const std::uint8_t> view(std::size_t i) const {
    return std::span<const std::uint8_t>(pixels).subspan(i * image_bytes(), image_bytes());
  }
  Image8 image(std::size_t i) const { return Image8(height, width, view(i)); }

  void push_back(std::span<const std::uint8_t> chw, int label = -1) {
    if (chw.size() != image_bytes()) throw ShapeError("dataset: image has the wrong pixel count");
    pixels.insert(pixels.end(), chw.begin(), chw.end());
    if (label >= 0) labels.push_back(label);
  }
};

/// [0, 255] bytes to a [3 x H x W] float tensor on [0, 1].
inline Tensor<float> to_unit(const Image8& img) {
  Tensor<float> t({kChannels, img.height, img.width});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = static_cast<float>(img.pixels[i]) / 255.0f;
  return t;
}

inline void require_image(const Tensor<float>& image, std::string_view what) {
  if (image.rank() != 3 || image.dim(0) != kChannels)
    throw ShapeError(std::string(what) + ": expected a [3 x H x W] image, got " + shape_string(image.shape()));
}

/// (x - mean_c) / std_c per channel.
inline Tensor<float> normalize(const Tensor<float>& image) {
  require_image(image, "normalize");
  Tensor<float> out(image.shape());
  const std::size_t plane = image.dim(1) * image.dim(2);
  for (std::size_t c = 0; c < kChannels; ++c)
    for (std::size_t i = 0; i < plane; ++i)
      out[c * plane + i] = (image[c * plane + i] - kCifarMean[c]) / kCifarStd[c];
  return out;
}

inline Tensor<float> denormalize(const Tensor<float>& image) {
  require_image(image, "denormalize");
  Tensor<float> out(image.shape());
  const std::size_t plane = image.dim(1) * image.dim(2);
  for (std::size_t c = 0; c < kChannels; ++c)
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = image[c * plane + i] * kCifarStd[c] + kCifarMean[c];
  return out;
}

/// Evaluation-time transform: normalization only.
inline Tensor<float> validation_transform(const Tensor<float>& image) { return normalize(image); }
inline Tensor<float> validation_transform(const Image8& image) { return normalize(to_unit(image)); }

}  // namespace kdlab::data

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

#include <cmath>
#include <fstream>

#include "kdlab/data/datasets.hpp"

// Procedural stand-in for CIFAR-10 / STL-10 when the published archives are
// unavailable. Ten classes = five shapes x two colour families, drawn at a
// random position and size over a noisy background with clutter. All shapes
// are mirror-symmetric so horizontal flips preserve the class. Useful for
// exercising the pipelines end to end; accuracies on it say nothing about
// CIFAR-10.

namespace kdlab::data {

struct SyntheticSizes {
  std::size_t train = 10000;
  std::size_t test = 2000;
  std::size_t stl = 2000;
};

namespace detail {

inline double clamp255(double v) { return std::clamp(v, 0.0, 255.0); }

inline Image8 draw_synthetic(std::size_t side, int label, Rng& rng) {
  Image8 img(side, side);
  const double s = static_cast<double>(side);
  double bg[3], gx[3], gy[3];
  for (int c = 0; c < 3; ++c) {
    bg[c] = uniform(rng, 40, 160);
    gx[c] = uniform(rng, -40, 40);
    gy[c] = uniform(rng, -40, 40);
  }
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double u = static_cast<double>(x) / s - 0.5, v = static_cast<double>(y) / s - 0.5;
        img.at(c, y, x) = static_cast<std::uint8_t>(clamp255(bg[c] + gx[c] * u + gy[c] * v + 18 * standard_normal(rng)));
      }

  auto paint_rect = [&](double x0, double y0, double x1, double y1, const double* col) {
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) {
        const double u = (static_cast<double>(x) + 0.5) / s, v = (static_cast<double>(y) + 0.5) / s;
        if (u >= x0 && u <= x1 && v >= y0 && v <= y1)
          for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<std::uint8_t>(clamp255(col[c]));
      }
  };
  const auto clutter = uniform_index(rng, 4);
  for (std::uint64_t k = 0; k < clutter; ++k) {
    const double col[3] = {uniform(rng, 0, 255), uniform(rng, 0, 255), uniform(rng, 0, 255)};
    const double x0 = uniform01(rng), y0 = uniform01(rng), w = uniform(rng, 0.04, 0.12), h = uniform(rng, 0.04, 0.12);
    paint_rect(x0, y0, x0 + w, y0 + h, col);
  }

  const int shape = label % 5;
  const bool warm = label < 5;
  double col[3];
  const double hi = uniform(rng, 170, 255), lo = uniform(rng, 0, 90), mid = uniform(rng, 40, 200);
  col[0] = warm ? hi : lo;
  col[1] = mid;
  col[2] = warm ? lo : hi;
  const double cx = uniform(rng, 0.3, 0.7), cy = uniform(rng, 0.3, 0.7), r = uniform(rng, 0.16, 0.28);
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / s - cx, v = (static_cast<double>(y) + 0.5) / s - cy;
      const double d = std::sqrt(u * u + v * v);
      bool in = false;
      switch (shape) {
        case 0: in = d <= r; break;
        case 1: in = std::abs(u) <= 0.8 * r && std::abs(v) <= 0.8 * r; break;
        case 2: in = d <= r && d >= 0.6 * r; break;
        case 3: in = (std::abs(u) <= 0.25 * r && std::abs(v) <= r) || (std::abs(v) <= 0.25 * r && std::abs(u) <= r); break;
        case 4: in = v <= 0.8 * r && v >= -r && std::abs(u) <= (v + r) * 0.6; break;
      }
      if (in)
        for (std::size_t c = 0; c < 3; ++c)
          img.at(c, y, x) = static_cast<std::uint8_t>(clamp255(col[c] + 12 * standard_normal(rng)));
    }
  return img;
}

inline ImageDataset synthetic_split(std::size_t count, std::uint64_t seed, std::uint64_t stream) {
  ImageDataset ds;
  Rng rng = make_rng(seed, 0x5917, stream);
  for (std::size_t i = 0; i < count; ++i) {
    const int label = static_cast<int>(i % 10);
    ds.push_back(draw_synthetic(kSide, label, rng).pixels, label);
  }
  return ds;
}

}  // namespace detail

/// Writes a synthetic dataset under `root` in the CIFAR-10 and STL-10 binary
/// layouts, plus a SYNTHETIC marker file.
inline void write_synthetic_dataset(const fs::path& root, const SyntheticSizes& sizes, std::uint64_t seed) {
  if (sizes.train < 10 || sizes.test < 10) throw ConfigError("synthetic dataset needs at least 10 images per split");
  const ImageDataset train = detail::synthetic_split(sizes.train, seed, 0);
  const fs::path cifar = root / kCifarDir;
  const std::size_t per_file = (sizes.train + 4) / 5;
  for (std::size_t f = 0; f < 5; ++f) {
    const std::size_t begin = std::min(f * per_file, train.size()), end = std::min(begin + per_file, train.size());
    write_cifar_file(cifar / ("data_batch_" + std::to_string(f + 1) + ".bin"), train, begin, end);
  }
  const ImageDataset test = detail::synthetic_split(sizes.test, seed, 1);
  write_cifar_file(cifar / "test_batch.bin", test, 0, test.size());
  {
    std::ofstream meta(cifar / "batches.meta.txt");
    for (const char* n : {"disc-warm", "square-warm", "ring-warm", "cross-warm", "triangle-warm", "disc-cool",
                          "square-cool", "ring-cool", "cross-cool", "triangle-cool"})
      meta << n << "\n";
  }
  std::vector<Image8> stl;
  Rng rng = make_rng(seed, 0x5917, 2);
  for (std::size_t i = 0; i < sizes.stl; ++i)
    stl.push_back(detail::draw_synthetic(kStlSide, static_cast<int>(uniform_index(rng, 10)), rng));
  write_stl_file(stl_unlabeled_file(root), stl);
  std::ofstream(root / "SYNTHETIC") << "procedurally generated stand-in; not CIFAR-10 or STL-10\nseed " << seed << "\n";
}

}  // namespace kdlab::data

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
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "kdlab/core/random.hpp"
#include "kdlab/data/image.hpp"

namespace kdlab::data {

enum class AugmentKind { standard, randaugment };

inline std::string_view to_string(AugmentKind k) { return k == AugmentKind::standard ? "standard" : "randaugment"; }

inline AugmentKind parse_augment_kind(std::string_view s) {
  if (s == "standard") return AugmentKind::standard;
  if (s == "randaugment") return AugmentKind::randaugment;
  throw ConfigError("augment.kind: unknown value '" + std::string(s) + "'");
}

inline constexpr int kMaxMagnitude = 30;

struct AugmentPolicy {
  AugmentKind kind = AugmentKind::standard;
  int n_ops = 2;
  int magnitude = 10;

  void validate() const {
    if (kind == AugmentKind::standard) return;
    if (n_ops < 0) throw ConfigError("augment.n_ops must be non-negative, got " + std::to_string(n_ops));
    if (magnitude < 0 || magnitude > kMaxMagnitude)
      throw ConfigError("augment.magnitude must lie in [0, 30], got " + std::to_string(magnitude));
  }
};

// ---------------------------------------------------------------------------
// Standard augmentation: normalize, random horizontal flip, zero-pad 4, random 32x32 crop.

inline constexpr std::size_t kPad = 4;

/// Random choices of one standard augmentation. Crop offsets index the
/// padded 40x40 image, so (4, 4) is the centre crop.
struct StandardDraw {
  bool flip = false;
  std::size_t top = kPad;
  std::size_t left = kPad;
};

inline StandardDraw draw_standard(Rng& rng) {
  StandardDraw d;
  d.flip = uniform_index(rng, 2) == 1;
  d.top = uniform_index(rng, 2 * kPad + 1);
  d.left = uniform_index(rng, 2 * kPad + 1);
  return d;
}

/// `image` holds [0, 1] pixel values, shape [3 x 32 x 32].
inline Tensor<float> standard_augment(const Tensor<float>& image, const StandardDraw& d) {
  require_shape({kChannels, kSide, kSide}, image.shape(), "standard_augment");
  if (d.top > 2 * kPad || d.left > 2 * kPad) throw DomainError("standard_augment: crop offset outside the padding");
  const Tensor<float> norm = normalize(image);
  Tensor<float> out(image.shape());
  for (std::size_t c = 0; c < kChannels; ++c)
    for (std::size_t y = 0; y < kSide; ++y) {
      const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + d.top) - static_cast<std::ptrdiff_t>(kPad);
      if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(kSide)) continue;
      for (std::size_t x = 0; x < kSide; ++x) {
        const std::ptrdiff_t px = static_cast<std::ptrdiff_t>(x + d.left) - static_cast<std::ptrdiff_t>(kPad);
        if (px < 0 || px >= static_cast<std::ptrdiff_t>(kSide)) continue;
        const std::size_t sx = d.flip ? kSide - 1 - static_cast<std::size_t>(px) : static_cast<std::size_t>(px);
        out[(c * kSide + y) * kSide + x] = norm[(c * kSide + static_cast<std::size_t>(sy)) * kSide + sx];
      }
    }
  return out;
}

inline Tensor<float> standard_augment(const Tensor<float>& image, Rng& rng) {
  return standard_augment(image, draw_standard(rng));
}

// ---------------------------------------------------------------------------
// RandAugment on 8-bit images. Magnitudes follow the common 31-bin
// parameterization: geometric ops and color factors scale linearly with
// magnitude / 30, and the signed ops flip sign with probability 1/2.

enum class RandOp {
  identity,
  shear_x,
  shear_y,
  translate_x,
  translate_y,
  rotate,
  brightness,
  color,
  contrast,
  sharpness,
  posterize,
  solarize,
  autocontrast,
  equalize,
};

inline constexpr std::array<RandOp, 14> kRandOps = {
    RandOp::identity,   RandOp::shear_x,    RandOp::shear_y,  RandOp::translate_x, RandOp::translate_y,
    RandOp::rotate,     RandOp::brightness, RandOp::color,    RandOp::contrast,    RandOp::sharpness,
    RandOp::posterize,  RandOp::solarize,   RandOp::autocontrast, RandOp::equalize,
};

inline bool is_signed(RandOp op) {
  switch (op) {
    case RandOp::shear_x:
    case RandOp::shear_y:
    case RandOp::translate_x:
    case RandOp::translate_y:
    case RandOp::rotate:
    case RandOp::brightness:
    case RandOp::color:
    case RandOp::contrast:
    case RandOp::sharpness: return true;
    default: return false;
  }
}

/// Op strength at `magnitude` before any sign flip.
inline double op_strength(RandOp op, int magnitude, std::size_t width = kSide) {
  const double f = static_cast<double>(magnitude) / kMaxMagnitude;
  switch (op) {
    case RandOp::shear_x:
    case RandOp::shear_y: return 0.3 * f;
    case RandOp::translate_x:
    case RandOp::translate_y: return std::trunc(150.0 / 331.0 * static_cast<double>(width) * f);
    case RandOp::rotate: return 30.0 * f;
    case RandOp::brightness:
    case RandOp::color:
    case RandOp::contrast:
    case RandOp::sharpness: return 0.9 * f;
    case RandOp::posterize: return 8.0 - std::nearbyint(static_cast<double>(magnitude) / 7.5);
    case RandOp::solarize: return 255.0 * (1.0 - f);
    default: return 0.0;
  }
}

namespace detail {

inline std::uint8_t to_byte_trunc(double v) { return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0)); }

/// Nearest-neighbour resampling through an output-to-source map; fill 0.
template <typename Map>
Image8 resample(const Image8& img, Map&& source_of) {
  Image8 out(img.height, img.width);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      auto [fx, fy] = source_of(static_cast<double>(x), static_cast<double>(y));
      const double rx = std::nearbyint(fx), ry = std::nearbyint(fy);
      if (rx < 0 || ry < 0 || rx >= static_cast<double>(img.width) || ry >= static_cast<double>(img.height)) continue;
      for (std::size_t c = 0; c < kChannels; ++c)
        out.at(c, y, x) = img.at(c, static_cast<std::size_t>(ry), static_cast<std::size_t>(rx));
    }
  return out;
}

inline Image8 grayscale(const Image8& img) {
  Image8 g(img.height, img.width);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const auto l = to_byte_trunc(0.2989 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x));
      for (std::size_t c = 0; c < kChannels; ++c) g.at(c, y, x) = l;
    }
  return g;
}

/// factor * a + (1 - factor) * b, clamped and truncated to bytes.
inline Image8 blend(const Image8& a, const Image8& b, double factor) {
  Image8 out(a.height, a.width);
  for (std::size_t i = 0; i < a.pixels.size(); ++i)
    out.pixels[i] = to_byte_trunc(factor * a.pixels[i] + (1 - factor) * b.pixels[i]);
  return out;
}

inline Image8 blend_constant(const Image8& a, double constant, double factor) {
  Image8 out(a.height, a.width);
  for (std::size_t i = 0; i < a.pixels.size(); ++i)
    out.pixels[i] = to_byte_trunc(factor * a.pixels[i] + (1 - factor) * constant);
  return out;
}

inline Image8 smoothed(const Image8& img) {
  Image8 out = img;
  if (img.height < 3 || img.width < 3) return out;
  for (std::size_t c = 0; c < kChannels; ++c)
    for (std::size_t y = 1; y + 1 < img.height; ++y)
      for (std::size_t x = 1; x + 1 < img.width; ++x) {
        double s = 4.0 * img.at(c, y, x);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            s += img.at(c, static_cast<std::size_t>(static_cast<int>(y) + dy), static_cast<std::size_t>(static_cast<int>(x) + dx));
        out.at(c, y, x) = static_cast<std::uint8_t>(std::clamp(std::nearbyint(s / 13.0), 0.0, 255.0));
      }
  return out;
}

inline Image8 equalize(const Image8& img) {
  Image8 out = img;
  const std::size_t plane = img.height * img.width;
  for (std::size_t c = 0; c < kChannels; ++c) {
    std::array<std::size_t, 256> hist{};
    for (std::size_t i = 0; i < plane; ++i) ++hist[img.pixels[c * plane + i]];
    std::size_t last = 0;
    for (std::size_t v = 0; v < 256; ++v)
      if (hist[v]) last = v;
    const std::size_t step = (plane - hist[last]) / 255;
    if (step == 0) continue;
    std::array<std::uint8_t, 256> lut{};
    std::size_t cum = 0;
    for (std::size_t v = 0; v < 256; ++v) {
      lut[v] = static_cast<std::uint8_t>(std::min<std::size_t>((cum + step / 2) / step, 255));
      cum += hist[v];
    }
    for (std::size_t i = 0; i < plane; ++i) out.pixels[c * plane + i] = lut[img.pixels[c * plane + i]];
  }
  return out;
}

}  // namespace detail

/// Applies one RandAugment op with a given (possibly negated) strength.
inline Image8 apply_op(const Image8& img, RandOp op, double v) {
  const double cx = (static_cast<double>(img.width) - 1) / 2, cy = (static_cast<double>(img.height) - 1) / 2;
  switch (op) {
    case RandOp::identity: return img;
    case RandOp::shear_x:
      return detail::resample(img, [v](double x, double y) { return std::pair{x + v * y, y}; });
    case RandOp::shear_y:
      return detail::resample(img, [v](double x, double y) { return std::pair{x, y + v * x}; });
    case RandOp::translate_x:
      return detail::resample(img, [v](double x, double y) { return std::pair{x - v, y}; });
    case RandOp::translate_y:
      return detail::resample(img, [v](double x, double y) { return std::pair{x, y - v}; });
    case RandOp::rotate: {
      // Counter-clockwise on screen (y axis pointing down).
      const double t = v * std::numbers::pi / 180.0, c = std::cos(t), s = std::sin(t);
      return detail::resample(img, [=](double x, double y) {
        const double dx = x - cx, dy = y - cy;
        return std::pair{cx + c * dx - s * dy, cy + s * dx + c * dy};
      });
    }
    case RandOp::brightness: return detail::blend_constant(img, 0.0, 1 + v);
    case RandOp::color: return detail::blend(img, detail::grayscale(img), 1 + v);
    case RandOp::contrast: {
      const Image8 g = detail::grayscale(img);
      const std::size_t plane = img.height * img.width;
      double mean = 0;
      for (std::size_t i = 0; i < plane; ++i) mean += g.pixels[i];
      return detail::blend_constant(img, mean / static_cast<double>(plane), 1 + v);
    }
    case RandOp::sharpness: return detail::blend(img, detail::smoothed(img), 1 + v);
    case RandOp::posterize: {
      const int bits = std::clamp(static_cast<int>(v), 0, 8);
      const auto mask = static_cast<std::uint8_t>(0xFF << (8 - bits));
      Image8 out = img;
      for (auto& p : out.pixels) p &= mask;
      return out;
    }
    case RandOp::solarize: {
      Image8 out = img;
      for (auto& p : out.pixels)
        if (p >= v) p = static_cast<std::uint8_t>(255 - p);
      return out;
    }
    case RandOp::autocontrast: {
      Image8 out = img;
      const std::size_t plane = img.height * img.width;
      for (std::size_t c = 0; c < kChannels; ++c) {
        auto first = img.pixels.begin() + static_cast<std::ptrdiff_t>(c * plane);
        const auto [lo, hi] = std::minmax_element(first, first + static_cast<std::ptrdiff_t>(plane));
        if (*lo == *hi) continue;
        const double scale = 255.0 / (*hi - *lo);
        for (std::size_t i = 0; i < plane; ++i)
          out.pixels[c * plane + i] = detail::to_byte_trunc((img.pixels[c * plane + i] - *lo) * scale);
      }
      return out;
    }
    case RandOp::equalize: return detail::equalize(img);
  }
  return img;
}

/// `n_ops` ops drawn uniformly with replacement from kRandOps.
inline Image8 randaugment(const Image8& img, const AugmentPolicy& policy, Rng& rng) {
  if (policy.kind != AugmentKind::randaugment) throw ConfigError("randaugment: policy kind must be randaugment");
  policy.validate();
  Image8 out = img;
  for (int i = 0; i < policy.n_ops; ++i) {
    const RandOp op = kRandOps[uniform_index(rng, kRandOps.size())];
    double v = op_strength(op, policy.magnitude, img.width);
    if (is_signed(op) && uniform_index(rng, 2) == 1) v = -v;
    out = apply_op(out, op, v);
  }
  return out;
}

/// Augmented view under `policy`: RandAugment (when selected) on the raw
/// bytes, followed by the standard normalize/flip/pad/crop.
inline Tensor<float> augment_view(const Image8& img, const AugmentPolicy& policy, Rng& rng) {
  if (policy.kind == AugmentKind::randaugment) return standard_augment(to_unit(randaugment(img, policy, rng)), rng);
  return standard_augment(to_unit(img), rng);
}

}  // namespace kdlab::data

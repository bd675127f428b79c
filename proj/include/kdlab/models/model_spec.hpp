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

#include <cctype>
#include <charconv>
#include <string>
#include <string_view>
#include <vector>

#include "kdlab/core/errors.hpp"

namespace kdlab {

enum class Family { resnet_3stage, resnet_4stage, wide_resnet };
enum class Shortcut { projection, identity_pad };

inline std::string_view to_string(Family f) {
  switch (f) {
    case Family::resnet_3stage: return "resnet-3stage";
    case Family::resnet_4stage: return "resnet-4stage";
    case Family::wide_resnet: return "wide-resnet";
  }
  return "?";
}

inline std::string_view to_string(Shortcut s) { return s == Shortcut::projection ? "projection" : "identity-pad"; }

inline Family parse_family(std::string_view s) {
  if (s == "resnet-3stage") return Family::resnet_3stage;
  if (s == "resnet-4stage") return Family::resnet_4stage;
  if (s == "wide-resnet") return Family::wide_resnet;
  throw ConfigError("family: unknown value '" + std::string(s) + "'");
}

inline Shortcut parse_shortcut(std::string_view s) {
  if (s == "projection") return Shortcut::projection;
  if (s == "identity-pad") return Shortcut::identity_pad;
  throw ConfigError("shortcut: unknown value '" + std::string(s) + "'");
}

/// Declarative description of a residual network.
///
/// resnet-3stage: CIFAR ResNet with stage widths 16/32/64 and depth = 6n+2.
///   With projection shortcuts the stem is 64 wide and the classifier reads a
///   2x2 average-pooled map (256 inputs); with identity-pad shortcuts the stem
///   is 16 wide and pooling is global (64 inputs).
/// resnet-4stage: ImageNet-style basic-block ResNet adapted to 32x32 input,
///   widths 64/128/256/512, depth 10 or 18.
/// wide-resnet: pre-activation WRN, depth = 6n+4, widths 16k/32k/64k.
struct ModelSpec {
  Family family = Family::resnet_3stage;
  int depth = 8;
  int width_multiplier = 1;
  int num_classes = 10;
  Shortcut shortcut = Shortcut::projection;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;

  int stage_count() const { return family == Family::resnet_4stage ? 4 : 3; }

  std::vector<int> blocks_per_stage() const {
    switch (family) {
      case Family::resnet_3stage: {
        const int n = (depth - 2) / 6;
        return {n, n, n};
      }
      case Family::resnet_4stage:
        return depth == 10 ? std::vector<int>{1, 1, 1, 1} : std::vector<int>{2, 2, 2, 2};
      case Family::wide_resnet: {
        const int n = (depth - 4) / 6;
        return {n, n, n};
      }
    }
    return {};
  }

  /// Throws ConfigError naming the offending field.
  void validate() const {
    if (num_classes <= 0) throw ConfigError("num_classes: must be positive, got " + std::to_string(num_classes));
    if (depth <= 0) throw ConfigError("depth: must be positive, got " + std::to_string(depth));
    switch (family) {
      case Family::resnet_3stage:
        if (depth < 8 || (depth - 2) % 6 != 0)
          throw ConfigError("depth: resnet-3stage needs depth = 6n+2 (8, 14, 20, 26, ...), got " +
                            std::to_string(depth));
        if (width_multiplier != 1) throw ConfigError("width_multiplier: only meaningful for wide-resnet");
        break;
      case Family::resnet_4stage:
        if (depth != 10 && depth != 18)
          throw ConfigError("depth: resnet-4stage supports depth 10 or 18, got " + std::to_string(depth));
        if (shortcut != Shortcut::projection)
          throw ConfigError("shortcut: resnet-4stage supports projection shortcuts only");
        if (width_multiplier != 1) throw ConfigError("width_multiplier: only meaningful for wide-resnet");
        break;
      case Family::wide_resnet:
        if (depth < 10 || (depth - 4) % 6 != 0)
          throw ConfigError("depth: wide-resnet needs depth = 6n+4 (10, 16, 22, ...), got " + std::to_string(depth));
        if (width_multiplier <= 0)
          throw ConfigError("width_multiplier: must be positive, got " + std::to_string(width_multiplier));
        if (shortcut != Shortcut::projection)
          throw ConfigError("shortcut: wide-resnet supports projection shortcuts only");
        break;
    }
  }

  /// Short name: resnet8, resnet20-pad, resnet18, wrn16-4.
  std::string name() const {
    std::string base;
    switch (family) {
      case Family::resnet_3stage:
      case Family::resnet_4stage: base = "resnet" + std::to_string(depth); break;
      case Family::wide_resnet: base = "wrn" + std::to_string(depth) + "-" + std::to_string(width_multiplier); break;
    }
    if (shortcut == Shortcut::identity_pad) base += "-pad";
    if (num_classes != 10) base += "@" + std::to_string(num_classes);
    return base;
  }
};

namespace detail {
inline int parse_positive(std::string_view s, std::string_view what) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || v <= 0)
    throw ConfigError(std::string(what) + ": cannot parse '" + std::string(s) + "'");
  return v;
}
}  // namespace detail

/// Inverse of ModelSpec::name(). resnet10 and resnet18 select the 4-stage family.
inline ModelSpec parse_model_name(std::string_view text) {
  std::string_view s = text;
  ModelSpec spec;
  if (auto at = s.find('@'); at != std::string_view::npos) {
    spec.num_classes = detail::parse_positive(s.substr(at + 1), "num_classes");
    s = s.substr(0, at);
  }
  if (s.size() > 4 && s.substr(s.size() - 4) == "-pad") {
    spec.shortcut = Shortcut::identity_pad;
    s = s.substr(0, s.size() - 4);
  }
  if (s.rfind("resnet", 0) == 0) {
    spec.depth = detail::parse_positive(s.substr(6), "depth");
    spec.family = (spec.depth == 10 || spec.depth == 18) ? Family::resnet_4stage : Family::resnet_3stage;
  } else if (s.rfind("wrn", 0) == 0) {
    const auto dash = s.find('-');
    if (dash == std::string_view::npos) throw ConfigError("model: expected wrn<depth>-<width>, got '" + std::string(text) + "'");
    spec.family = Family::wide_resnet;
    spec.depth = detail::parse_positive(s.substr(3, dash - 3), "depth");
    spec.width_multiplier = detail::parse_positive(s.substr(dash + 1), "width_multiplier");
  } else {
    throw ConfigError("model: unknown architecture '" + std::string(text) + "'");
  }
  spec.validate();
  return spec;
}

}  // namespace kdlab

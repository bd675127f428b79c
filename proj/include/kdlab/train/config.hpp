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
#include <optional>
#include <string>
#include <vector>

#include "kdlab/data/augment.hpp"
#include "kdlab/losses/feature.hpp"
#include "kdlab/losses/relational.hpp"
#include "kdlab/models/model_spec.hpp"

namespace kdlab::train {

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 128;
  double lr0 = 0.1;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  std::string device = "cpu";
  double dataset_scale = 1.0;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;

  void validate() const {
    if (epochs == 0) throw ConfigError("train.epochs: must be positive");
    if (batch_size == 0) throw ConfigError("train.batch_size: must be positive");
    if (!(lr0 > 0)) throw ConfigError("train.lr0: must be positive, got " + std::to_string(lr0));
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train.momentum: must lie in [0, 1), got " + std::to_string(momentum));
    if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay: must be non-negative");
    if (!(dataset_scale > 0 && dataset_scale <= 1))
      throw ConfigError("train.dataset_scale: must lie in (0, 1], got " + std::to_string(dataset_scale));
  }
};

/// Step schedule: lr0 until floor(0.33 E), lr0/10 until floor(0.66 E), lr0/100 after.
inline double lr_at_epoch(const TrainConfig& config, std::size_t epoch) {
  if (epoch >= config.epochs)
    throw DomainError("lr_at_epoch: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(config.epochs) + ")");
  // Integer arithmetic: 0.33 * 200 is 66.000000000000014 in binary floating point.
  const std::size_t first = 33 * config.epochs / 100, second = 66 * config.epochs / 100;
  if (epoch < first) return config.lr0;
  if (epoch < second) return config.lr0 * 0.1;
  return config.lr0 * 0.01;
}

enum class Method { nokd, kd, sfd, oh, ab, rkd, mkd, takd, uda_cifar, stl_mix, dual, unsup_stl };

inline constexpr Method kAllMethods[] = {Method::nokd, Method::kd,   Method::sfd,       Method::oh,
                                         Method::ab,   Method::rkd,  Method::mkd,       Method::takd,
                                         Method::uda_cifar, Method::stl_mix, Method::dual, Method::unsup_stl};

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::nokd: return "nokd";
    case Method::kd: return "kd";
    case Method::sfd: return "sfd";
    case Method::oh: return "oh";
    case Method::ab: return "ab";
    case Method::rkd: return "rkd";
    case Method::mkd: return "mkd";
    case Method::takd: return "takd";
    case Method::uda_cifar: return "uda_cifar";
    case Method::stl_mix: return "stl_mix";
    case Method::dual: return "dual";
    case Method::unsup_stl: return "unsup_stl";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  for (Method m : kAllMethods)
    if (to_string(m) == s) return m;
  throw ConfigError("method: unknown value '" + std::string(s) + "'");
}

struct MethodConfig {
  Method method = Method::kd;
  losses::KDParams<double> kd_params;
  std::optional<losses::RKDWeights<double>> rkd_weights;
  std::optional<losses::MatchStrategy> match;
  std::optional<double> feature_weight;
  std::vector<ModelSpec> teacher_specs;
  std::optional<ModelSpec> ta_spec;
  double phase_split = 0.6;
  /// Only read by sfd.
  losses::FeatureLossKind feature_loss = losses::FeatureLossKind::mse;
  /// Activation-boundary margin, only read by ab.
  double ab_margin = 1.0;
  /// Augmented-view policy for uda_cifar, stl_mix and unsup_stl.
  data::AugmentPolicy augment{data::AugmentKind::randaugment, 2, 10};
  /// Accuracy lead that freezes the teacher in dual training.
  double dual_gap = 0.02;

  bool uses_teacher_checkpoints() const {
    return method != Method::nokd && method != Method::dual && method != Method::takd;
  }

  /// Checks that the optional fields are present exactly when the method needs them.
  void validate() const {
    const std::string m(to_string(method));
    auto need = [&](bool present, const char* field) {
      if (!present) throw ConfigError("method " + m + " requires " + field);
    };
    auto forbid = [&](bool present, const char* field) {
      if (present) throw ConfigError(std::string(field) + " is not used by method " + m);
    };
    const bool feature = method == Method::sfd || method == Method::oh || method == Method::ab;
    need(!feature || match.has_value(), "match.kind");
    forbid(!feature && match.has_value(), "match.kind");
    const bool weighted = method == Method::sfd || method == Method::oh;
    need(!weighted || feature_weight.has_value(), "feature_weight");
    forbid(!weighted && feature_weight.has_value(), "feature_weight");
    need(method != Method::rkd || rkd_weights.has_value(), "rkd_weights");
    forbid(method != Method::rkd && rkd_weights.has_value(), "rkd_weights");
    need(method != Method::takd || ta_spec.has_value(), "ta (teacher-assistant spec)");
    forbid(method != Method::takd && ta_spec.has_value(), "ta");

    if (method == Method::nokd) {
      forbid(!teacher_specs.empty(), "teachers");
    } else if (method == Method::mkd) {
      if (teacher_specs.size() < 2) throw ConfigError("method mkd requires at least 2 teachers, got " + std::to_string(teacher_specs.size()));
    } else if (teacher_specs.size() != 1) {
      throw ConfigError("method " + m + " requires exactly 1 teacher, got " + std::to_string(teacher_specs.size()));
    }
    for (const auto& t : teacher_specs) t.validate();
    if (ta_spec) ta_spec->validate();
    try {
      kd_params.validate();
      if (rkd_weights) rkd_weights->validate();
    } catch (const DomainError& e) {
      throw ConfigError(e.what());
    }
    if (match && match->kind != losses::MatchKind::all && match->n == 0) throw ConfigError("match.n: must be positive");
    if (feature_weight && !(*feature_weight >= 0)) throw ConfigError("feature_weight: must be non-negative");
    if (!(phase_split > 0 && phase_split < 1)) throw ConfigError("phase_split: must lie in (0, 1), got " + std::to_string(phase_split));
    if (!(ab_margin > 0)) throw ConfigError("ab_margin: must be positive");
    if (!(dual_gap >= 0 && dual_gap < 1)) throw ConfigError("dual.gap: must lie in [0, 1)");
    augment.validate();
  }

  losses::KDParams<float> kd_float() const {
    return {static_cast<float>(kd_params.alpha), static_cast<float>(kd_params.temperature)};
  }
};

}  // namespace kdlab::train

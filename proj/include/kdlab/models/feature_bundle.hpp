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

#include <cstddef>
#include <vector>

#include "kdlab/core/tensor.hpp"

namespace kdlab {

/// Where a feature map was captured: stage index (0-based), channel count
/// and spatial size.
struct TapDescriptor {
  std::size_t stage = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  friend bool operator==(const TapDescriptor&, const TapDescriptor&) = default;
};

/// Outputs of one forward pass: logits [N x classes] and one pre-ReLU
/// feature map per stage, shallowest first.
template <typename T>
struct FeatureBundle {
  Tensor<T> logits;
  std::vector<Tensor<T>> features;
  std::vector<TapDescriptor> taps;
};

}  // namespace kdlab

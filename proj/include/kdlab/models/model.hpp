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

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "kdlab/core/random.hpp"
#include "kdlab/models/resnet.hpp"

namespace kdlab {

struct ParameterCount {
  std::size_t total = 0;
  std::size_t trainable = 0;
};

inline constexpr std::uint64_t kInitStream = 0x1A17;

/// An instrumented classifier built from a ModelSpec. Forward passes return
/// logits together with the per-stage pre-ReLU feature maps; a train-mode
/// forward keeps the activations needed by `backward`.
///
/// A model has a single writer. Eval-mode forward does not mutate the model,
/// so a frozen teacher may serve several readers at once.
template <typename T>
class Model {
 public:
  explicit Model(const ModelSpec& spec, std::uint64_t seed = 0) : spec_(spec), net_(make_net(spec)) {
    reinitialize(seed);
  }

  const ModelSpec& spec() const { return spec_; }

  void reinitialize(std::uint64_t seed) {
    Rng rng = make_rng(seed, kInitStream);
    std::visit([&](auto& net) { net.init(rng); }, net_);
    zero_grad();
  }

  FeatureBundle<T> forward(const Tensor<T>& batch, nn::Mode mode) {
    if (batch.rank() != 4 || batch.dim(1) != 3 || batch.dim(2) != 32 || batch.dim(3) != 32)
      throw ShapeError("model input: expected [N x 3 x 32 x 32], got " + shape_string(batch.shape()));
    return std::visit([&](auto& net) { return net.forward(batch, mode); }, net_);
  }

  /// Backpropagates from the logits and, optionally, from per-stage feature
  /// gradients (an empty tensor means no gradient at that stage). Parameter
  /// gradients accumulate until `zero_grad`.
  void backward(const Tensor<T>& grad_logits, std::span<const Tensor<T>> grad_features = {}) {
    std::visit([&](auto& net) { net.backward(grad_logits, grad_features); }, net_);
  }

  std::vector<nn::Parameter<T>*> parameters() {
    std::vector<nn::Parameter<T>*> out;
    std::visit([&](auto& net) { net.collect(out); }, net_);
    return out;
  }

  std::vector<nn::Buffer<T>> buffers() {
    std::vector<nn::Buffer<T>> out;
    std::visit([&](auto& net) { net.collect_buffers(out); }, net_);
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->grad.fill(T(0));
  }

  LayerNode layer_tree() const {
    return std::visit([](const auto& net) { return net.tree(); }, net_);
  }

 private:
  using Net = std::variant<ResNet<T>, WideResNet<T>>;

  static Net make_net(const ModelSpec& spec) {
    spec.validate();
    if (spec.family == Family::wide_resnet) return WideResNet<T>(spec);
    return ResNet<T>(spec);
  }

  ModelSpec spec_;
  Net net_;
};

template <typename T = float>
Model<T> build_model(const ModelSpec& spec, std::uint64_t seed = 0) {
  return Model<T>(spec, seed);
}

/// Exact element count over all parameter tensors. Every parameter is
/// trainable; running statistics are buffers, not parameters.
template <typename T>
ParameterCount count_parameters(Model<T>& model) {
  ParameterCount count;
  for (const auto* p : model.parameters()) count.total += p->value.size();
  count.trainable = count.total;
  return count;
}

/// Number of nodes in the module hierarchy, containers included.
template <typename T>
std::size_t count_layers(const Model<T>& model) {
  return model.layer_tree().count();
}

/// Evaluation-mode forward pass: a pure function of (parameters, batch).
template <typename T>
FeatureBundle<T> forward_with_features(Model<T>& model, const Tensor<T>& batch) {
  return model.forward(batch, nn::Mode::eval);
}

}  // namespace kdlab

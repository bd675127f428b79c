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

#include <functional>
#include <vector>

#include "kdlab/nn/layers.hpp"

namespace kdlab::train {

struct SGDOptions {
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 5e-4;
};

/// SGD with momentum, following the PyTorch update:
///   g = grad + wd * w;  v = mu * v + g (v = g on the first step);
///   w -= lr * (nesterov ? g + mu * v : v).
/// Weight decay skips parameters whose `decay` flag is off.
template <typename T>
class SGD {
 public:
  SGD(std::vector<nn::Parameter<T>*> params, SGDOptions options) : params_(std::move(params)), options_(options) {
    velocity_.resize(params_.size());
  }

  void add_parameters(const std::vector<nn::Parameter<T>*>& more) {
    params_.insert(params_.end(), more.begin(), more.end());
    velocity_.resize(params_.size());
  }

  /// Parameters for which `frozen` returns true are left untouched, velocity included.
  void step(double lr, const std::function<bool(const nn::Parameter<T>&)>& frozen = {}) {
    const T mu = static_cast<T>(options_.momentum), wd = static_cast<T>(options_.weight_decay), rate = static_cast<T>(lr);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      nn::Parameter<T>& p = *params_[k];
      if (frozen && frozen(p)) continue;
      std::vector<T>& v = velocity_[k];
      const bool first = v.empty();
      if (first) v.resize(p.value.size());
      T* w = p.value.data();
      const T* g = p.grad.data();
      const T decay = p.decay ? wd : T(0);
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const T d = g[i] + decay * w[i];
        v[i] = first ? d : mu * v[i] + d;
        w[i] -= rate * (options_.nesterov ? d + mu * v[i] : v[i]);
      }
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->grad.fill(T(0));
  }

 private:
  std::vector<nn::Parameter<T>*> params_;
  SGDOptions options_;
  std::vector<std::vector<T>> velocity_;
};

}  // namespace kdlab::train

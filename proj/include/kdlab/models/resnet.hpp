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

#include <span>
#include <string>
#include <vector>

#include "kdlab/models/feature_bundle.hpp"
#include "kdlab/models/model_spec.hpp"
#include "kdlab/nn/layers.hpp"

namespace kdlab {

/// One node of the module hierarchy. Containers and parameter-free modules
/// (activations, empty shortcut sequences) are nodes too, so `count()` is the
/// "layers" figure reported next to parameter counts.
struct LayerNode {
  std::string name;
  std::string kind;
  std::vector<LayerNode> children;

  std::size_t count() const {
    std::size_t n = 1;
    for (const auto& c : children) n += c.count();
    return n;
  }
};

namespace detail {

inline LayerNode leaf(std::string name, std::string kind) { return {std::move(name), std::move(kind), {}}; }

template <typename T>
const Tensor<T>* tap_gradient(std::span<const Tensor<T>> grads, std::size_t stage) {
  if (stage >= grads.size() || grads[stage].empty()) return nullptr;
  return &grads[stage];
}

}  // namespace detail

/// Post-activation basic block: relu(bn2(conv2(relu(bn1(conv1 x)))) + shortcut x).
template <typename T>
class BasicBlock {
 public:
  BasicBlock(const std::string& prefix, std::size_t in, std::size_t planes, std::size_t stride, Shortcut shortcut)
      : in_(in),
        planes_(planes),
        stride_(stride),
        conv1_(prefix + ".conv1", in, planes, 3, stride, 1),
        bn1_(prefix + ".bn1", planes),
        conv2_(prefix + ".conv2", planes, planes, 3, 1, 1),
        bn2_(prefix + ".bn2", planes) {
    const bool reshape = stride != 1 || in != planes;
    projection_ = reshape && shortcut == Shortcut::projection;
    pad_ = reshape && shortcut == Shortcut::identity_pad;
    if (pad_ && planes < in) throw ConfigError("shortcut: identity-pad cannot reduce channels");
    if (projection_) {
      sc_conv_ = nn::Conv2d<T>(prefix + ".shortcut.0", in, planes, 1, stride, 0);
      sc_bn_ = nn::BatchNorm2d<T>(prefix + ".shortcut.1", planes);
    }
  }

  void init(Rng& rng) {
    conv1_.init(rng);
    conv2_.init(rng);
    bn1_.init();
    bn2_.init();
    if (projection_) {
      sc_conv_.init(rng);
      sc_bn_.init();
    }
  }

  Tensor<T> forward(const Tensor<T>& x, nn::Mode mode, Tensor<T>* pre_relu) {
    Tensor<T> h = relu1_.forward(bn1_.forward(conv1_.forward(x, mode), mode), mode);
    Tensor<T> out = bn2_.forward(conv2_.forward(h, mode), mode);
    out += shortcut_forward(x, mode);
    if (pre_relu) *pre_relu = out;
    return relu2_.forward(out, mode);
  }

  Tensor<T> backward(const Tensor<T>& grad_out, const Tensor<T>* grad_pre_relu) {
    Tensor<T> g = relu2_.backward(grad_out);
    if (grad_pre_relu) g += *grad_pre_relu;
    Tensor<T> gx = bn2_.backward(g);
    gx = conv2_.backward(gx);
    gx = relu1_.backward(gx);
    gx = bn1_.backward(gx);
    gx = conv1_.backward(gx);
    gx += shortcut_backward(g);
    return gx;
  }

  void collect(std::vector<nn::Parameter<T>*>& out) {
    conv1_.collect(out);
    bn1_.collect(out);
    conv2_.collect(out);
    bn2_.collect(out);
    if (projection_) {
      sc_conv_.collect(out);
      sc_bn_.collect(out);
    }
  }
  void collect_buffers(std::vector<nn::Buffer<T>>& out) {
    bn1_.collect_buffers(out);
    bn2_.collect_buffers(out);
    if (projection_) sc_bn_.collect_buffers(out);
  }

  LayerNode tree(const std::string& name) const {
    LayerNode shortcut{"shortcut", projection_ ? "Sequential" : (pad_ ? "LambdaLayer" : "Sequential"), {}};
    if (projection_) shortcut.children = {detail::leaf("0", "Conv2d"), detail::leaf("1", "BatchNorm2d")};
    return {name,
            "BasicBlock",
            {detail::leaf("conv1", "Conv2d"), detail::leaf("bn1", "BatchNorm2d"), detail::leaf("conv2", "Conv2d"),
             detail::leaf("bn2", "BatchNorm2d"), shortcut}};
  }

 private:
  Tensor<T> shortcut_forward(const Tensor<T>& x, nn::Mode mode) {
    if (projection_) return sc_bn_.forward(sc_conv_.forward(x, mode), mode);
    if (!pad_) return x;
    input_shape_ = x.shape();
    const std::size_t n = x.dim(0), h = (x.dim(2) + stride_ - 1) / stride_, w = (x.dim(3) + stride_ - 1) / stride_;
    const std::size_t front = (planes_ - in_) / 2;
    Tensor<T> y({n, planes_, h, w});
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t c = 0; c < in_; ++c)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j) y.at(s, c + front, i, j) = x.at(s, c, i * stride_, j * stride_);
    return y;
  }

  Tensor<T> shortcut_backward(const Tensor<T>& g) {
    if (projection_) return sc_conv_.backward(sc_bn_.backward(g));
    if (!pad_) return g;
    Tensor<T> dx(input_shape_);
    const std::size_t front = (planes_ - in_) / 2;
    for (std::size_t s = 0; s < g.dim(0); ++s)
      for (std::size_t c = 0; c < in_; ++c)
        for (std::size_t i = 0; i < g.dim(2); ++i)
          for (std::size_t j = 0; j < g.dim(3); ++j) dx.at(s, c, i * stride_, j * stride_) = g.at(s, c + front, i, j);
    return dx;
  }

  std::size_t in_, planes_, stride_;
  bool projection_ = false, pad_ = false;
  nn::Conv2d<T> conv1_;
  nn::BatchNorm2d<T> bn1_;
  nn::Relu<T> relu1_;
  nn::Conv2d<T> conv2_;
  nn::BatchNorm2d<T> bn2_;
  nn::Relu<T> relu2_;
  nn::Conv2d<T> sc_conv_;
  nn::BatchNorm2d<T> sc_bn_;
  Shape input_shape_;
};

/// CIFAR residual networks built from BasicBlock (3-stage and 4-stage).
/// Taps are the pre-ReLU outputs of each stage's final block.
template <typename T>
class ResNet {
 public:
  explicit ResNet(const ModelSpec& spec) : spec_(spec) {
    const bool four = spec.family == Family::resnet_4stage;
    const bool wide_stem = four || spec.shortcut == Shortcut::projection;
    const std::vector<std::size_t> widths = four ? std::vector<std::size_t>{64, 128, 256, 512}
                                                 : std::vector<std::size_t>{16, 32, 64};
    std::size_t in = wide_stem ? 64 : 16;
    conv1_ = nn::Conv2d<T>("conv1", 3, in, 3, 1, 1);
    bn1_ = nn::BatchNorm2d<T>("bn1", in);
    const auto blocks = spec.blocks_per_stage();
    for (std::size_t s = 0; s < widths.size(); ++s) {
      std::vector<BasicBlock<T>> stage;
      for (int b = 0; b < blocks[s]; ++b) {
        const std::size_t stride = (b == 0 && s > 0) ? 2 : 1;
        stage.emplace_back("layer" + std::to_string(s + 1) + "." + std::to_string(b), in, widths[s], stride,
                           spec.shortcut);
        in = widths[s];
      }
      stages_.push_back(std::move(stage));
    }
    // 3-stage maps end at 8x8, 4-stage at 4x4.
    pool_ = (!four && spec.shortcut == Shortcut::identity_pad) ? 8 : 4;
    const std::size_t side = (four ? 4 : 8) / pool_;
    linear_ = nn::Linear<T>("linear", in * side * side, static_cast<std::size_t>(spec.num_classes));
  }

  void init(Rng& rng) {
    conv1_.init(rng);
    bn1_.init();
    for (auto& stage : stages_)
      for (auto& b : stage) b.init(rng);
    linear_.init(rng);
  }

  FeatureBundle<T> forward(const Tensor<T>& x, nn::Mode mode) {
    FeatureBundle<T> out;
    Tensor<T> h = stem_relu_.forward(bn1_.forward(conv1_.forward(x, mode), mode), mode);
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      for (std::size_t b = 0; b < stages_[s].size(); ++b) {
        const bool last = b + 1 == stages_[s].size();
        Tensor<T> tap;
        h = stages_[s][b].forward(h, mode, last ? &tap : nullptr);
        if (last) {
          out.taps.push_back({s, tap.dim(1), tap.dim(2), tap.dim(3)});
          out.features.push_back(std::move(tap));
        }
      }
    }
    pooled_shape_ = h.shape();
    Tensor<T> pooled = nn::avg_pool(h, pool_);
    const std::size_t n = pooled.dim(0);
    out.logits = linear_.forward(pooled.reshaped({n, pooled.size() / n}), mode);
    return out;
  }

  void backward(const Tensor<T>& grad_logits, std::span<const Tensor<T>> grad_features) {
    Tensor<T> g = linear_.backward(grad_logits);
    const std::size_t n = grad_logits.dim(0);
    g = nn::avg_pool_backward(g.reshaped({n, pooled_shape_[1], pooled_shape_[2] / pool_, pooled_shape_[3] / pool_}),
                              pooled_shape_, pool_);
    for (std::size_t s = stages_.size(); s-- > 0;)
      for (std::size_t b = stages_[s].size(); b-- > 0;) {
        const bool last = b + 1 == stages_[s].size();
        g = stages_[s][b].backward(g, last ? detail::tap_gradient(grad_features, s) : nullptr);
      }
    conv1_.backward(bn1_.backward(stem_relu_.backward(g)));
  }

  void collect(std::vector<nn::Parameter<T>*>& out) {
    conv1_.collect(out);
    bn1_.collect(out);
    for (auto& stage : stages_)
      for (auto& b : stage) b.collect(out);
    linear_.collect(out);
  }
  void collect_buffers(std::vector<nn::Buffer<T>>& out) {
    bn1_.collect_buffers(out);
    for (auto& stage : stages_)
      for (auto& b : stage) b.collect_buffers(out);
  }

  LayerNode tree() const {
    LayerNode root{"", "ResNet", {detail::leaf("conv1", "Conv2d"), detail::leaf("bn1", "BatchNorm2d")}};
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      LayerNode layer{"layer" + std::to_string(s + 1), "Sequential", {}};
      for (std::size_t b = 0; b < stages_[s].size(); ++b) layer.children.push_back(stages_[s][b].tree(std::to_string(b)));
      root.children.push_back(std::move(layer));
    }
    root.children.push_back(detail::leaf("linear", "Linear"));
    return root;
  }

 private:
  ModelSpec spec_;
  nn::Conv2d<T> conv1_;
  nn::BatchNorm2d<T> bn1_;
  nn::Relu<T> stem_relu_;
  std::vector<std::vector<BasicBlock<T>>> stages_;
  nn::Linear<T> linear_;
  std::size_t pool_ = 4;
  Shape pooled_shape_;
};

/// Pre-activation wide block: shortcut + conv2(relu(bn2(conv1(relu(bn1 x))))).
/// When the channel count changes, the shortcut is a 1x1 convolution of the
/// activated input.
template <typename T>
class WideBlock {
 public:
  WideBlock(const std::string& prefix, std::size_t in, std::size_t out, std::size_t stride)
      : equal_(in == out),
        bn1_(prefix + ".bn1", in),
        conv1_(prefix + ".conv1", in, out, 3, stride, 1),
        bn2_(prefix + ".bn2", out),
        conv2_(prefix + ".conv2", out, out, 3, 1, 1) {
    if (!equal_) shortcut_ = nn::Conv2d<T>(prefix + ".convShortcut", in, out, 1, stride, 0);
  }

  void init(Rng& rng) {
    bn1_.init();
    bn2_.init();
    conv1_.init(rng);
    conv2_.init(rng);
    if (!equal_) shortcut_.init(rng);
  }

  /// `bn1_out` receives the pre-ReLU normalized input when non-null.
  Tensor<T> forward(const Tensor<T>& x, nn::Mode mode, Tensor<T>* bn1_out) {
    Tensor<T> t = bn1_.forward(x, mode);
    if (bn1_out) *bn1_out = t;
    Tensor<T> a = relu1_.forward(t, mode);
    Tensor<T> h = relu2_.forward(bn2_.forward(conv1_.forward(a, mode), mode), mode);
    Tensor<T> out = conv2_.forward(h, mode);
    out += equal_ ? x : shortcut_.forward(a, mode);
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out, const Tensor<T>* grad_bn1_out) {
    Tensor<T> ga = conv2_.backward(grad_out);
    ga = relu2_.backward(ga);
    ga = bn2_.backward(ga);
    ga = conv1_.backward(ga);
    if (!equal_) ga += shortcut_.backward(grad_out);
    Tensor<T> gt = relu1_.backward(ga);
    if (grad_bn1_out) gt += *grad_bn1_out;
    Tensor<T> gx = bn1_.backward(gt);
    if (equal_) gx += grad_out;
    return gx;
  }

  void collect(std::vector<nn::Parameter<T>*>& out) {
    bn1_.collect(out);
    conv1_.collect(out);
    bn2_.collect(out);
    conv2_.collect(out);
    if (!equal_) shortcut_.collect(out);
  }
  void collect_buffers(std::vector<nn::Buffer<T>>& out) {
    bn1_.collect_buffers(out);
    bn2_.collect_buffers(out);
  }

  LayerNode tree(const std::string& name) const {
    LayerNode node{name,
                   "BasicBlock",
                   {detail::leaf("bn1", "BatchNorm2d"), detail::leaf("relu1", "ReLU"), detail::leaf("conv1", "Conv2d"),
                    detail::leaf("bn2", "BatchNorm2d"), detail::leaf("relu2", "ReLU"), detail::leaf("conv2", "Conv2d")}};
    if (!equal_) node.children.push_back(detail::leaf("convShortcut", "Conv2d"));
    return node;
  }

 private:
  bool equal_;
  nn::BatchNorm2d<T> bn1_;
  nn::Relu<T> relu1_;
  nn::Conv2d<T> conv1_;
  nn::BatchNorm2d<T> bn2_;
  nn::Relu<T> relu2_;
  nn::Conv2d<T> conv2_;
  nn::Conv2d<T> shortcut_;
};

/// Wide residual network. Stage s's tap is the pre-ReLU bn1 output of the
/// first block of stage s+1; the last stage's tap is the final BN output.
template <typename T>
class WideResNet {
 public:
  explicit WideResNet(const ModelSpec& spec) : spec_(spec) {
    const auto k = static_cast<std::size_t>(spec.width_multiplier);
    const std::vector<std::size_t> widths{16 * k, 32 * k, 64 * k};
    conv1_ = nn::Conv2d<T>("conv1", 3, 16, 3, 1, 1);
    std::size_t in = 16;
    const auto blocks = spec.blocks_per_stage();
    for (std::size_t s = 0; s < widths.size(); ++s) {
      std::vector<WideBlock<T>> stage;
      for (int b = 0; b < blocks[s]; ++b) {
        const std::size_t stride = (b == 0 && s > 0) ? 2 : 1;
        stage.emplace_back("block" + std::to_string(s + 1) + ".layer." + std::to_string(b), in, widths[s], stride);
        in = widths[s];
      }
      stages_.push_back(std::move(stage));
    }
    bn_ = nn::BatchNorm2d<T>("bn1", in);
    fc_ = nn::Linear<T>("fc", in, static_cast<std::size_t>(spec.num_classes));
  }

  void init(Rng& rng) {
    conv1_.init(rng);
    for (auto& stage : stages_)
      for (auto& b : stage) b.init(rng);
    bn_.init();
    fc_.init(rng);
  }

  FeatureBundle<T> forward(const Tensor<T>& x, nn::Mode mode) {
    FeatureBundle<T> out;
    Tensor<T> h = conv1_.forward(x, mode);
    for (std::size_t s = 0; s < stages_.size(); ++s)
      for (std::size_t b = 0; b < stages_[s].size(); ++b) {
        Tensor<T> tap;
        const bool capture = b == 0 && s > 0;
        h = stages_[s][b].forward(h, mode, capture ? &tap : nullptr);
        if (capture) push_tap(out, s - 1, std::move(tap));
      }
    Tensor<T> t = bn_.forward(h, mode);
    push_tap(out, stages_.size() - 1, t);
    Tensor<T> a = relu_.forward(t, mode);
    pooled_shape_ = a.shape();
    Tensor<T> pooled = nn::avg_pool(a, a.dim(2));
    out.logits = fc_.forward(pooled.reshaped({pooled.dim(0), pooled.dim(1)}), mode);
    return out;
  }

  void backward(const Tensor<T>& grad_logits, std::span<const Tensor<T>> grad_features) {
    Tensor<T> g = fc_.backward(grad_logits);
    const std::size_t k = pooled_shape_[2];
    g = nn::avg_pool_backward(g.reshaped({pooled_shape_[0], pooled_shape_[1], 1, 1}), pooled_shape_, k);
    g = relu_.backward(g);
    if (auto* tg = detail::tap_gradient(grad_features, stages_.size() - 1)) g += *tg;
    g = bn_.backward(g);
    for (std::size_t s = stages_.size(); s-- > 0;)
      for (std::size_t b = stages_[s].size(); b-- > 0;) {
        const Tensor<T>* tg = (b == 0 && s > 0) ? detail::tap_gradient(grad_features, s - 1) : nullptr;
        g = stages_[s][b].backward(g, tg);
      }
    conv1_.backward(g);
  }

  void collect(std::vector<nn::Parameter<T>*>& out) {
    conv1_.collect(out);
    for (auto& stage : stages_)
      for (auto& b : stage) b.collect(out);
    bn_.collect(out);
    fc_.collect(out);
  }
  void collect_buffers(std::vector<nn::Buffer<T>>& out) {
    for (auto& stage : stages_)
      for (auto& b : stage) b.collect_buffers(out);
    bn_.collect_buffers(out);
  }

  LayerNode tree() const {
    LayerNode root{"", "WideResNet", {detail::leaf("conv1", "Conv2d")}};
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      LayerNode seq{"layer", "Sequential", {}};
      for (std::size_t b = 0; b < stages_[s].size(); ++b) seq.children.push_back(stages_[s][b].tree(std::to_string(b)));
      root.children.push_back({"block" + std::to_string(s + 1), "NetworkBlock", {std::move(seq)}});
    }
    root.children.push_back(detail::leaf("bn1", "BatchNorm2d"));
    root.children.push_back(detail::leaf("relu", "ReLU"));
    root.children.push_back(detail::leaf("fc", "Linear"));
    return root;
  }

 private:
  static void push_tap(FeatureBundle<T>& out, std::size_t stage, Tensor<T> tap) {
    out.taps.push_back({stage, tap.dim(1), tap.dim(2), tap.dim(3)});
    out.features.push_back(std::move(tap));
  }

  ModelSpec spec_;
  nn::Conv2d<T> conv1_;
  std::vector<std::vector<WideBlock<T>>> stages_;
  nn::BatchNorm2d<T> bn_;
  nn::Relu<T> relu_;
  nn::Linear<T> fc_;
  Shape pooled_shape_;
};

}  // namespace kdlab

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

#include <Eigen/Core>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "kdlab/core/random.hpp"
#include "kdlab/core/tensor.hpp"

namespace kdlab::nn {

enum class Mode { train, eval };

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  /// Normalization parameters and biases are excluded from weight decay.
  bool decay = true;

  Parameter() = default;
  Parameter(std::string n, Shape shape, bool apply_decay)
      : name(std::move(n)), value(shape), grad(shape), decay(apply_decay) {}
};

/// Non-trainable state that still belongs in a checkpoint (BN running stats).
template <typename T>
struct Buffer {
  std::string name;
  Tensor<T>* tensor;
};

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

}  // namespace detail

/// 2-D convolution, square kernel, NCHW. Lowered to GEMM through im2col one
/// sample at a time so the column buffer stays small.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         std::size_t stride, std::size_t padding, bool bias = false)
      : in_(in_channels),
        out_(out_channels),
        kernel_(kernel),
        stride_(stride),
        padding_(padding),
        weight_(name + ".weight", {out_channels, in_channels, kernel, kernel}, true) {
    if (bias) bias_ = Parameter<T>(name + ".bias", {out_channels}, false);
  }

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  std::size_t parameter_count() const { return weight_.value.size() + bias_.value.size(); }

  /// He normal initialization with fan-out scaling.
  void init(Rng& rng) {
    const double std = std::sqrt(2.0 / static_cast<double>(out_ * kernel_ * kernel_));
    for (auto& w : weight_.value.values()) w = static_cast<T>(std * standard_normal(rng));
    bias_.value.fill(T(0));
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    check_input(x);
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = out_size(h), ow = out_size(w);
    Tensor<T> y({n, out_, oh, ow});
    const std::size_t cols = oh * ow, rows = in_ * kernel_ * kernel_;
    detail::ConstMatrixMap<T> wmat(weight_.value.data(), out_, rows);
    std::vector<T> column(is_pointwise() ? 0 : rows * cols);
    for (std::size_t s = 0; s < n; ++s) {
      const T* src = x.data() + s * x.stride0();
      detail::MatrixMap<T> ymat(y.data() + s * y.stride0(), out_, cols);
      if (is_pointwise()) {
        ymat.noalias() = wmat * detail::ConstMatrixMap<T>(src, rows, cols);
      } else {
        im2col(src, column.data(), h, w, oh, ow);
        ymat.noalias() = wmat * detail::ConstMatrixMap<T>(column.data(), rows, cols);
      }
      if (!bias_.value.empty()) ymat.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(
                                                      bias_.value.data(), static_cast<Eigen::Index>(out_));
    }
    if (mode == Mode::train) input_ = x;
    return y;
  }

  /// Accumulates weight gradients; returns the gradient w.r.t. the input.
  Tensor<T> backward(const Tensor<T>& grad_out) {
    const Tensor<T>& x = input_;
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = out_size(h), ow = out_size(w);
    require_shape({n, out_, oh, ow}, grad_out.shape(), "conv backward");
    const std::size_t cols = oh * ow, rows = in_ * kernel_ * kernel_;
    Tensor<T> dx(x.shape());
    detail::ConstMatrixMap<T> wmat(weight_.value.data(), out_, rows);
    detail::MatrixMap<T> dw(weight_.grad.data(), out_, rows);
    std::vector<T> dcol(rows * cols), column(is_pointwise() ? 0 : rows * cols);
    for (std::size_t s = 0; s < n; ++s) {
      const T* src = x.data() + s * x.stride0();
      detail::ConstMatrixMap<T> gy(grad_out.data() + s * grad_out.stride0(), out_, cols);
      if (!bias_.value.empty())
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias_.grad.data(), static_cast<Eigen::Index>(out_)) +=
            gy.rowwise().sum();
      if (is_pointwise()) {
        dw.noalias() += gy * detail::ConstMatrixMap<T>(src, rows, cols).transpose();
        detail::MatrixMap<T>(dx.data() + s * dx.stride0(), rows, cols).noalias() = wmat.transpose() * gy;
      } else {
        im2col(src, column.data(), h, w, oh, ow);
        dw.noalias() += gy * detail::ConstMatrixMap<T>(column.data(), rows, cols).transpose();
        detail::MatrixMap<T>(dcol.data(), rows, cols).noalias() = wmat.transpose() * gy;
        col2im(dcol.data(), dx.data() + s * dx.stride0(), h, w, oh, ow);
      }
    }
    input_ = Tensor<T>();
    return dx;
  }

  void collect(std::vector<Parameter<T>*>& out) {
    out.push_back(&weight_);
    if (!bias_.value.empty()) out.push_back(&bias_);
  }

  Parameter<T>& weight() { return weight_; }

 private:
  bool is_pointwise() const { return kernel_ == 1 && stride_ == 1 && padding_ == 0; }
  std::size_t out_size(std::size_t in) const { return (in + 2 * padding_ - kernel_) / stride_ + 1; }

  void check_input(const Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != in_)
      throw ShapeError("conv input: expected [N x " + std::to_string(in_) + " x H x W], got " +
                       shape_string(x.shape()));
  }

  void im2col(const T* src, T* dst, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow) const {
    for (std::size_t c = 0; c < in_; ++c)
      for (std::size_t ki = 0; ki < kernel_; ++ki)
        for (std::size_t kj = 0; kj < kernel_; ++kj)
          for (std::size_t y = 0; y < oh; ++y) {
            const long iy = static_cast<long>(y * stride_ + ki) - static_cast<long>(padding_);
            if (iy < 0 || iy >= static_cast<long>(h)) {
              std::fill(dst, dst + ow, T(0));
              dst += ow;
              continue;
            }
            const T* row = src + (c * h + static_cast<std::size_t>(iy)) * w;
            for (std::size_t x = 0; x < ow; ++x) {
              const long ix = static_cast<long>(x * stride_ + kj) - static_cast<long>(padding_);
              *dst++ = (ix < 0 || ix >= static_cast<long>(w)) ? T(0) : row[ix];
            }
          }
  }

  void col2im(const T* col, T* dst, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow) const {
    for (std::size_t c = 0; c < in_; ++c)
      for (std::size_t ki = 0; ki < kernel_; ++ki)
        for (std::size_t kj = 0; kj < kernel_; ++kj)
          for (std::size_t y = 0; y < oh; ++y) {
            const long iy = static_cast<long>(y * stride_ + ki) - static_cast<long>(padding_);
            if (iy < 0 || iy >= static_cast<long>(h)) {
              col += ow;
              continue;
            }
            T* row = dst + (c * h + static_cast<std::size_t>(iy)) * w;
            for (std::size_t x = 0; x < ow; ++x, ++col) {
              const long ix = static_cast<long>(x * stride_ + kj) - static_cast<long>(padding_);
              if (ix >= 0 && ix < static_cast<long>(w)) row[ix] += *col;
            }
          }
  }

  std::size_t in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1, padding_ = 0;
  Parameter<T> weight_, bias_;
  Tensor<T> input_;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, std::size_t channels, double momentum = 0.1, double eps = 1e-5)
      : channels_(channels),
        momentum_(momentum),
        eps_(eps),
        gamma_(name + ".weight", {channels}, false),
        beta_(name + ".bias", {channels}, false),
        running_mean_({channels}, T(0)),
        running_var_({channels}, T(1)),
        name_(name) {
    gamma_.value.fill(T(1));
  }

  std::size_t parameter_count() const { return 2 * channels_; }

  void init() {
    gamma_.value.fill(T(1));
    beta_.value.fill(T(0));
    running_mean_.fill(T(0));
    running_var_.fill(T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    if (x.rank() != 4 || x.dim(1) != channels_)
      throw ShapeError("batchnorm input: expected " + std::to_string(channels_) + " channels, got " +
                       shape_string(x.shape()));
    const std::size_t n = x.dim(0), plane = x.dim(2) * x.dim(3);
    const double count = static_cast<double>(n * plane);
    Tensor<T> y(x.shape());
    std::vector<T> mean(channels_), inv_std(channels_);
    for (std::size_t c = 0; c < channels_; ++c) {
      if (mode == Mode::train) {
        double sum = 0, sq = 0;
        for (std::size_t s = 0; s < n; ++s) {
          const T* p = x.data() + (s * channels_ + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) sum += p[i];
        }
        const double mu = sum / count;
        for (std::size_t s = 0; s < n; ++s) {
          const T* p = x.data() + (s * channels_ + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mu) * (p[i] - mu);
        }
        const double var = sq / count;
        mean[c] = static_cast<T>(mu);
        inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + eps_));
        const double unbiased = count > 1 ? var * count / (count - 1) : var;
        running_mean_[c] = static_cast<T>((1 - momentum_) * running_mean_[c] + momentum_ * mu);
        running_var_[c] = static_cast<T>((1 - momentum_) * running_var_[c] + momentum_ * unbiased);
      } else {
        mean[c] = running_mean_[c];
        inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var_[c]) + eps_));
      }
    }
    Tensor<T> xhat(mode == Mode::train ? x.shape() : Shape{});
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t c = 0; c < channels_; ++c) {
        const std::size_t off = (s * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const T v = (x[off + i] - mean[c]) * inv_std[c];
          if (mode == Mode::train) xhat[off + i] = v;
          y[off + i] = gamma_.value[c] * v + beta_.value[c];
        }
      }
    if (mode == Mode::train) {
      xhat_ = std::move(xhat);
      inv_std_ = std::move(inv_std);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) {
    xhat_.require_same_shape(grad_out, "batchnorm backward");
    const std::size_t n = grad_out.dim(0), plane = grad_out.dim(2) * grad_out.dim(3);
    const T count = static_cast<T>(n * plane);
    Tensor<T> dx(grad_out.shape());
    for (std::size_t c = 0; c < channels_; ++c) {
      T dgamma = 0, dbeta = 0;
      for (std::size_t s = 0; s < n; ++s) {
        const std::size_t off = (s * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          dgamma += grad_out[off + i] * xhat_[off + i];
          dbeta += grad_out[off + i];
        }
      }
      gamma_.grad[c] += dgamma;
      beta_.grad[c] += dbeta;
      const T scale = gamma_.value[c] * inv_std_[c] / count;
      for (std::size_t s = 0; s < n; ++s) {
        const std::size_t off = (s * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i)
          dx[off + i] = scale * (count * grad_out[off + i] - dbeta - xhat_[off + i] * dgamma);
      }
    }
    xhat_ = Tensor<T>();
    return dx;
  }

  void collect(std::vector<Parameter<T>*>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }
  void collect_buffers(std::vector<Buffer<T>>& out) {
    out.push_back({name_ + ".running_mean", &running_mean_});
    out.push_back({name_ + ".running_var", &running_var_});
  }

 private:
  std::size_t channels_ = 0;
  double momentum_ = 0.1, eps_ = 1e-5;
  Parameter<T> gamma_, beta_;
  Tensor<T> running_mean_, running_var_;
  std::string name_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out)
      : in_(in), out_(out), weight_(name + ".weight", {out, in}, true), bias_(name + ".bias", {out}, false) {}

  std::size_t parameter_count() const { return weight_.value.size() + bias_.value.size(); }

  /// Uniform(-1/sqrt(in), 1/sqrt(in)) for weight and bias.
  void init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
    for (auto& w : weight_.value.values()) w = static_cast<T>(uniform(rng, -bound, bound));
    for (auto& b : bias_.value.values()) b = static_cast<T>(uniform(rng, -bound, bound));
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    if (x.rank() != 2 || x.dim(1) != in_)
      throw ShapeError("linear input: expected [N x " + std::to_string(in_) + "], got " + shape_string(x.shape()));
    const std::size_t n = x.dim(0);
    Tensor<T> y({n, out_});
    detail::MatrixMap<T> ym(y.data(), n, out_);
    ym.noalias() = detail::ConstMatrixMap<T>(x.data(), n, in_) *
                   detail::ConstMatrixMap<T>(weight_.value.data(), out_, in_).transpose();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < out_; ++c) y.at(r, c) += bias_.value[c];
    if (mode == Mode::train) input_ = x;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) {
    const std::size_t n = input_.dim(0);
    require_shape({n, out_}, grad_out.shape(), "linear backward");
    detail::ConstMatrixMap<T> gy(grad_out.data(), n, out_);
    detail::MatrixMap<T>(weight_.grad.data(), out_, in_).noalias() +=
        gy.transpose() * detail::ConstMatrixMap<T>(input_.data(), n, in_);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < out_; ++c) bias_.grad[c] += grad_out.at(r, c);
    Tensor<T> dx({n, in_});
    detail::MatrixMap<T>(dx.data(), n, in_).noalias() =
        gy * detail::ConstMatrixMap<T>(weight_.value.data(), out_, in_);
    input_ = Tensor<T>();
    return dx;
  }

  void collect(std::vector<Parameter<T>*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  std::size_t in_ = 0, out_ = 0;
  Parameter<T> weight_, bias_;
  Tensor<T> input_;
};

/// ReLU that remembers its output for the backward mask.
template <typename T>
class Relu {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    Tensor<T> y = x;
    for (auto& v : y.values()) v = v > T(0) ? v : T(0);
    if (mode == Mode::train) output_ = y;
    return y;
  }
  Tensor<T> backward(const Tensor<T>& grad_out) {
    output_.require_same_shape(grad_out, "relu backward");
    Tensor<T> dx = grad_out;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (!(output_[i] > T(0))) dx[i] = T(0);
    output_ = Tensor<T>();
    return dx;
  }

 private:
  Tensor<T> output_;
};

/// Non-overlapping average pooling with a square window.
template <typename T>
Tensor<T> avg_pool(const Tensor<T>& x, std::size_t k) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2) / k, w = x.dim(3) / k;
  Tensor<T> y({n, c, h, w});
  const T scale = T(1) / static_cast<T>(k * k);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          T acc = 0;
          for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b) acc += x.at(s, ch, i * k + a, j * k + b);
          y.at(s, ch, i, j) = acc * scale;
        }
  return y;
}

template <typename T>
Tensor<T> avg_pool_backward(const Tensor<T>& grad_out, const Shape& input_shape, std::size_t k) {
  Tensor<T> dx(input_shape);
  const T scale = T(1) / static_cast<T>(k * k);
  for (std::size_t s = 0; s < grad_out.dim(0); ++s)
    for (std::size_t ch = 0; ch < grad_out.dim(1); ++ch)
      for (std::size_t i = 0; i < grad_out.dim(2); ++i)
        for (std::size_t j = 0; j < grad_out.dim(3); ++j) {
          const T g = grad_out.at(s, ch, i, j) * scale;
          for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b) dx.at(s, ch, i * k + a, j * k + b) = g;
        }
  return dx;
}

}  // namespace kdlab::nn

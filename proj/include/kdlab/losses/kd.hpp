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
#include <span>
#include <string>
#include <vector>

#include "kdlab/core/tensor.hpp"

namespace kdlab::losses {

/// A scalar loss and its gradient with respect to the student-side input.
/// Teacher-side inputs are constants: no gradient is ever produced for them.
template <typename T>
struct LossValue {
  T value = 0;
  Tensor<T> grad;
};

template <typename T>
struct KDParams {
  T alpha = T(0.5);
  T temperature = T(5);

  void validate() const {
    if (!(alpha >= 0 && alpha <= 1)) throw DomainError("kd alpha must lie in [0, 1], got " + std::to_string(alpha));
    if (!(temperature > 0)) throw DomainError("kd temperature must be positive, got " + std::to_string(temperature));
  }
};

/// Temperature-softened distributions of a logit matrix [batch x classes].
template <typename T>
struct SoftTargets {
  Tensor<T> probabilities;
  Tensor<T> log_probabilities;
  T temperature = 1;
};

namespace detail {

inline void require_matrix(const Shape& s, std::string_view what) {
  if (s.size() != 2 || s[0] == 0 || s[1] == 0)
    throw ShapeError(std::string(what) + ": expected a non-empty [batch x classes] matrix, got " + shape_string(s));
}

template <typename T>
void require_labels(std::span<const int> labels, const Shape& logits_shape) {
  if (labels.size() != logits_shape[0])
    throw ShapeError("labels: expected " + std::to_string(logits_shape[0]) + " labels, got " +
                     std::to_string(labels.size()));
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= logits_shape[1])
      throw DomainError("label " + std::to_string(y) + " outside [0, " + std::to_string(logits_shape[1]) + ")");
}

}  // namespace detail

/// Row-wise softmax and log-softmax of logits / T, max-subtracted.
template <typename T>
SoftTargets<T> soften(const Tensor<T>& logits, T temperature) {
  if (!(temperature > 0)) throw DomainError("temperature must be positive, got " + std::to_string(temperature));
  detail::require_matrix(logits.shape(), "soften");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  SoftTargets<T> out{Tensor<T>(logits.shape()), Tensor<T>(logits.shape()), temperature};
  for (std::size_t r = 0; r < rows; ++r) {
    T mx = logits.at(r, 0) / temperature;
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, logits.at(r, c) / temperature);
    T sum = 0;
    for (std::size_t c = 0; c < cols; ++c) sum += std::exp(logits.at(r, c) / temperature - mx);
    const T log_z = mx + std::log(sum);
    for (std::size_t c = 0; c < cols; ++c) {
      const T lp = logits.at(r, c) / temperature - log_z;
      out.log_probabilities.at(r, c) = lp;
      out.probabilities.at(r, c) = std::exp(lp);
    }
  }
  return out;
}

/// Vector-Jacobian product of `soften`: maps upstream gradients on the
/// probabilities and/or log-probabilities back to the logits. Either
/// upstream may be null.
template <typename T>
Tensor<T> soften_backward(const SoftTargets<T>& st, const Tensor<T>* grad_probabilities,
                          const Tensor<T>* grad_log_probabilities) {
  const Tensor<T>& p = st.probabilities;
  Tensor<T> g(p.shape());
  const std::size_t rows = p.dim(0), cols = p.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    if (grad_log_probabilities) {
      T total = 0;
      for (std::size_t c = 0; c < cols; ++c) total += grad_log_probabilities->at(r, c);
      for (std::size_t c = 0; c < cols; ++c) g.at(r, c) += grad_log_probabilities->at(r, c) - p.at(r, c) * total;
    }
    if (grad_probabilities) {
      T dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += grad_probabilities->at(r, c) * p.at(r, c);
      for (std::size_t c = 0; c < cols; ++c) g.at(r, c) += p.at(r, c) * (grad_probabilities->at(r, c) - dot);
    }
  }
  g *= T(1) / st.temperature;
  return g;
}

/// KL(teacher || student) summed over classes and divided by the batch size
/// (never by the element count). The gradient is w.r.t. the student
/// log-probabilities.
template <typename T>
LossValue<T> batchmean_kl(const SoftTargets<T>& teacher, const SoftTargets<T>& student) {
  teacher.probabilities.require_same_shape(student.probabilities, "batchmean_kl");
  if (teacher.temperature != student.temperature)
    throw DomainError("batchmean_kl: teacher and student softened at different temperatures");
  const std::size_t rows = teacher.probabilities.dim(0);
  const T inv_batch = T(1) / static_cast<T>(rows);
  LossValue<T> out{0, Tensor<T>(student.log_probabilities.shape())};
  for (std::size_t i = 0; i < teacher.probabilities.size(); ++i) {
    const T pt = teacher.probabilities[i];
    if (pt > 0) out.value += pt * (teacher.log_probabilities[i] - student.log_probabilities[i]);
    out.grad[i] = -pt * inv_batch;
  }
  out.value *= inv_batch;
  return out;
}

/// Mean cross-entropy at temperature 1; gradient w.r.t. the logits.
template <typename T>
LossValue<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  detail::require_matrix(logits.shape(), "cross_entropy");
  detail::require_labels<T>(labels, logits.shape());
  const auto st = soften(logits, T(1));
  const std::size_t rows = logits.dim(0);
  const T inv_batch = T(1) / static_cast<T>(rows);
  LossValue<T> out{0, st.probabilities};
  for (std::size_t r = 0; r < rows; ++r) {
    out.value -= st.log_probabilities.at(r, static_cast<std::size_t>(labels[r]));
    out.grad.at(r, static_cast<std::size_t>(labels[r])) -= T(1);
  }
  out.value *= inv_batch;
  out.grad *= inv_batch;
  return out;
}

/// (1 - alpha) * CE(student, labels) + alpha * T^2 * batchmean_kl(teacher_T, student_T).
template <typename T>
LossValue<T> kd_loss(const Tensor<T>& student_logits, const Tensor<T>& teacher_logits, std::span<const int> labels,
                     const KDParams<T>& params) {
  params.validate();
  student_logits.require_same_shape(teacher_logits, "kd_loss logits");
  const T a = params.alpha, t = params.temperature;
  LossValue<T> ce = cross_entropy(student_logits, labels);
  const auto ps = soften(student_logits, t);
  const auto pt = soften(teacher_logits, t);
  const LossValue<T> kl = batchmean_kl(pt, ps);
  LossValue<T> out{(1 - a) * ce.value + a * t * t * kl.value, std::move(ce.grad)};
  out.grad *= (1 - a);
  // d/dz of T^2 * KL through the log-softmax at temperature T is T * (p_s - p_t) / batch.
  const T scale = a * t / static_cast<T>(student_logits.dim(0));
  for (std::size_t i = 0; i < out.grad.size(); ++i)
    out.grad[i] += scale * (ps.probabilities[i] - pt.probabilities[i]);
  return out;
}

/// Mean of kd_loss over an ensemble of teachers.
template <typename T>
LossValue<T> mkd_loss(const Tensor<T>& student_logits, std::span<const Tensor<T>> teacher_logits,
                      std::span<const int> labels, const KDParams<T>& params) {
  if (teacher_logits.empty()) throw ConfigError("mkd_loss: needs at least one teacher");
  LossValue<T> out{0, Tensor<T>(student_logits.shape())};
  const T w = T(1) / static_cast<T>(teacher_logits.size());
  for (const auto& t : teacher_logits) {
    LossValue<T> one = kd_loss(student_logits, t, labels, params);
    out.value += w * one.value;
    one.grad *= w;
    out.grad += one.grad;
  }
  return out;
}

/// Logits for an (unaugmented, augmented) view pair of the same images.
template <typename T>
struct LogitPair {
  Tensor<T> clean;
  Tensor<T> augmented;
};

template <typename T>
struct PairLossValue {
  T value = 0;
  Tensor<T> grad_clean;
  Tensor<T> grad_augmented;
};

/// kd_loss on the clean pair plus kd_loss on the augmented pair, shared
/// labels and parameters.
template <typename T>
PairLossValue<T> uda_cifar_loss(const LogitPair<T>& student, const LogitPair<T>& teacher, std::span<const int> labels,
                                const KDParams<T>& params) {
  LossValue<T> c = kd_loss(student.clean, teacher.clean, labels, params);
  LossValue<T> a = kd_loss(student.augmented, teacher.augmented, labels, params);
  return {c.value + a.value, std::move(c.grad), std::move(a.grad)};
}

/// Consistency loss for unlabeled data:
/// T^2 * batchmean_kl(teacher on the clean view, student on the augmented view).
template <typename T>
LossValue<T> uda_unsup_loss(const Tensor<T>& student_augmented_logits, const Tensor<T>& teacher_clean_logits,
                            T temperature) {
  student_augmented_logits.require_same_shape(teacher_clean_logits, "uda_unsup_loss logits");
  const auto ps = soften(student_augmented_logits, temperature);
  const auto pt = soften(teacher_clean_logits, temperature);
  const LossValue<T> kl = batchmean_kl(pt, ps);
  LossValue<T> out{temperature * temperature * kl.value, Tensor<T>(ps.probabilities.shape())};
  const T scale = temperature / static_cast<T>(student_augmented_logits.dim(0));
  for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] = scale * (ps.probabilities[i] - pt.probabilities[i]);
  return out;
}

}  // namespace kdlab::losses

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
#include <vector>

#include "kdlab/losses/kd.hpp"

namespace kdlab::losses {

template <typename T>
struct RKDWeights {
  T kd = 1;
  T distance = 25;
  T angle = 50;

  void validate() const {
    if (kd < 0 || distance < 0 || angle < 0) throw DomainError("rkd weights must be non-negative");
    if (!(kd > 0 || distance > 0 || angle > 0)) throw DomainError("rkd weights: at least one must be positive");
  }
};

namespace detail {

/// Huber with delta = 1 (smooth L1).
template <typename T>
T huber(T x) {
  const T a = std::abs(x);
  return a < 1 ? T(0.5) * x * x : a - T(0.5);
}
template <typename T>
T huber_grad(T x) {
  return std::abs(x) < 1 ? x : (x > 0 ? T(1) : T(-1));
}

template <typename T>
T row_distance(const Tensor<T>& e, std::size_t i, std::size_t j) {
  T sq = 0;
  for (std::size_t k = 0; k < e.dim(1); ++k) {
    const T d = e.at(i, k) - e.at(j, k);
    sq += d * d;
  }
  return std::sqrt(sq);
}

/// Pairwise distances over i < j, divided by the mean of the nonzero ones.
template <typename T>
struct NormalizedDistances {
  std::vector<T> raw;
  std::vector<T> normalized;
  T mean = 0;
  std::size_t nonzero = 0;
};

template <typename T>
NormalizedDistances<T> normalized_distances(const Tensor<T>& e) {
  NormalizedDistances<T> out;
  const std::size_t b = e.dim(0);
  T sum = 0;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = i + 1; j < b; ++j) {
      const T d = row_distance(e, i, j);
      out.raw.push_back(d);
      if (d > 0) {
        sum += d;
        ++out.nonzero;
      }
    }
  out.mean = out.nonzero ? sum / static_cast<T>(out.nonzero) : T(0);
  out.normalized.resize(out.raw.size());
  for (std::size_t p = 0; p < out.raw.size(); ++p) out.normalized[p] = out.mean > 0 ? out.raw[p] / out.mean : T(0);
  return out;
}

template <typename T>
void require_embeddings(const Tensor<T>& s, const Tensor<T>& t, std::size_t min_batch, std::string_view what) {
  if (s.rank() != 2 || t.rank() != 2) throw ShapeError(std::string(what) + ": embeddings must be [batch x dim]");
  if (s.dim(0) != t.dim(0))
    throw ShapeError(std::string(what) + ": batch sizes differ (" + std::to_string(s.dim(0)) + " vs " +
                     std::to_string(t.dim(0)) + ")");
  if (s.dim(0) < min_batch)
    throw DomainError(std::string(what) + " needs a batch of at least " + std::to_string(min_batch) + ", got " +
                      std::to_string(s.dim(0)));
}

}  // namespace detail

/// Distance-wise relational loss: pairwise distances within each embedding
/// set, normalized by that set's mean nonzero distance, compared pair by pair
/// with Huber(delta = 1) and averaged over the b(b-1)/2 pairs.
template <typename T>
LossValue<T> rkd_distance_loss(const Tensor<T>& student_emb, const Tensor<T>& teacher_emb) {
  detail::require_embeddings(student_emb, teacher_emb, 2, "rkd_distance_loss");
  const auto ds = detail::normalized_distances(student_emb);
  const auto dt = detail::normalized_distances(teacher_emb);
  const std::size_t b = student_emb.dim(0), pairs = ds.raw.size();
  LossValue<T> out{0, Tensor<T>(student_emb.shape())};
  std::vector<T> g(pairs);
  T weighted = 0;  // sum_p g_p * raw_p, for the gradient of the mean
  for (std::size_t p = 0; p < pairs; ++p) {
    const T diff = ds.normalized[p] - dt.normalized[p];
    out.value += detail::huber(diff);
    g[p] = detail::huber_grad(diff) / static_cast<T>(pairs);
    weighted += g[p] * ds.raw[p];
  }
  out.value /= static_cast<T>(pairs);
  if (ds.mean == 0) return out;
  const T mu = ds.mean;
  const T mean_term = weighted / (mu * mu * static_cast<T>(ds.nonzero));
  std::size_t p = 0;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = i + 1; j < b; ++j, ++p) {
      const T d = ds.raw[p];
      if (d == 0) continue;
      const T dl_dd = g[p] / mu - mean_term;
      for (std::size_t k = 0; k < student_emb.dim(1); ++k) {
        const T u = (student_emb.at(i, k) - student_emb.at(j, k)) / d;
        out.grad.at(i, k) += dl_dd * u;
        out.grad.at(j, k) -= dl_dd * u;
      }
    }
  return out;
}

/// Angle-wise relational loss: for every ordered triplet of distinct indices
/// (i, j, k), the cosine of the angle at j between (e_i - e_j) and
/// (e_k - e_j). Huber(delta = 1) between student and teacher cosines,
/// averaged over triplets. Triplets with a zero difference vector on either
/// side are skipped.
template <typename T>
LossValue<T> rkd_angle_loss(const Tensor<T>& student_emb, const Tensor<T>& teacher_emb) {
  detail::require_embeddings(student_emb, teacher_emb, 3, "rkd_angle_loss");
  const std::size_t b = student_emb.dim(0), ds = student_emb.dim(1), dt = teacher_emb.dim(1);
  LossValue<T> out{0, Tensor<T>(student_emb.shape())};
  std::vector<T> u(ds), v(ds);
  std::size_t counted = 0;

  auto cosine = [](const Tensor<T>& e, std::size_t i, std::size_t j, std::size_t k, T& cos, T& nu, T& nv) {
    T uu = 0, vv = 0, uv = 0;
    for (std::size_t c = 0; c < e.dim(1); ++c) {
      const T a = e.at(i, c) - e.at(j, c), bb = e.at(k, c) - e.at(j, c);
      uu += a * a;
      vv += bb * bb;
      uv += a * bb;
    }
    if (uu == 0 || vv == 0) return false;
    nu = std::sqrt(uu);
    nv = std::sqrt(vv);
    cos = uv / (nu * nv);
    return true;
  };

  struct Term {
    std::size_t i, j, k;
    T g;
  };
  std::vector<Term> terms;
  (void)dt;
  for (std::size_t j = 0; j < b; ++j)
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t k = 0; k < b; ++k) {
        if (i == j || k == j || i == k) continue;
        T cs, ns_u, ns_v, ct, nt_u, nt_v;
        if (!cosine(student_emb, i, j, k, cs, ns_u, ns_v) || !cosine(teacher_emb, i, j, k, ct, nt_u, nt_v)) continue;
        out.value += detail::huber(cs - ct);
        terms.push_back({i, j, k, detail::huber_grad(cs - ct)});
        ++counted;
      }
  if (counted == 0) return out;
  const T inv = T(1) / static_cast<T>(counted);
  out.value *= inv;
  for (const auto& t : terms) {
    T uu = 0, vv = 0, uv = 0;
    for (std::size_t c = 0; c < ds; ++c) {
      u[c] = student_emb.at(t.i, c) - student_emb.at(t.j, c);
      v[c] = student_emb.at(t.k, c) - student_emb.at(t.j, c);
      uu += u[c] * u[c];
      vv += v[c] * v[c];
      uv += u[c] * v[c];
    }
    const T nu = std::sqrt(uu), nv = std::sqrt(vv), cos = uv / (nu * nv);
    const T g = t.g * inv;
    for (std::size_t c = 0; c < ds; ++c) {
      const T du = v[c] / (nu * nv) - cos * u[c] / uu;
      const T dv = u[c] / (nu * nv) - cos * v[c] / vv;
      out.grad.at(t.i, c) += g * du;
      out.grad.at(t.k, c) += g * dv;
      out.grad.at(t.j, c) -= g * (du + dv);
    }
  }
  return out;
}

template <typename T>
struct RKDValue {
  T value = 0;
  Tensor<T> grad_logits;
  Tensor<T> grad_embedding;
};

/// w.kd * kd_loss + w.distance * rkd_distance_loss + w.angle * rkd_angle_loss.
template <typename T>
RKDValue<T> rkd_combined(const Tensor<T>& student_logits, const Tensor<T>& teacher_logits,
                         const Tensor<T>& student_emb, const Tensor<T>& teacher_emb, std::span<const int> labels,
                         const KDParams<T>& kd, const RKDWeights<T>& w) {
  w.validate();
  RKDValue<T> out{0, Tensor<T>(student_logits.shape()), Tensor<T>(student_emb.shape())};
  if (w.kd > 0) {
    LossValue<T> l = kd_loss(student_logits, teacher_logits, labels, kd);
    out.value += w.kd * l.value;
    l.grad *= w.kd;
    out.grad_logits += l.grad;
  }
  if (w.distance > 0) {
    LossValue<T> l = rkd_distance_loss(student_emb, teacher_emb);
    out.value += w.distance * l.value;
    l.grad *= w.distance;
    out.grad_embedding += l.grad;
  }
  if (w.angle > 0) {
    LossValue<T> l = rkd_angle_loss(student_emb, teacher_emb);
    out.value += w.angle * l.value;
    l.grad *= w.angle;
    out.grad_embedding += l.grad;
  }
  return out;
}

}  // namespace kdlab::losses

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
#include <utility>
#include <vector>

#include "kdlab/losses/kd.hpp"
#include "kdlab/models/feature_bundle.hpp"

namespace kdlab::losses {

enum class MatchKind { all, first_n, last_n, stride_n };

/// Which stage pairs take part in feature distillation. Stages are first
/// aligned from the deepest end (the last k = min(student, teacher) stages of
/// each model); first_n / last_n keep the shallowest / deepest n of those
/// pairs, stride_n keeps every n-th pair counting back from the deepest.
struct MatchStrategy {
  MatchKind kind = MatchKind::all;
  std::size_t n = 1;
};

inline std::string_view to_string(MatchKind k) {
  switch (k) {
    case MatchKind::all: return "all";
    case MatchKind::first_n: return "first_n";
    case MatchKind::last_n: return "last_n";
    case MatchKind::stride_n: return "stride_n";
  }
  return "?";
}

inline MatchKind parse_match_kind(std::string_view s) {
  if (s == "all") return MatchKind::all;
  if (s == "first_n") return MatchKind::first_n;
  if (s == "last_n") return MatchKind::last_n;
  if (s == "stride_n") return MatchKind::stride_n;
  throw ConfigError("match.kind: unknown value '" + std::string(s) + "'");
}

template <typename T>
struct FeaturePair {
  Tensor<T> student_map;
  Tensor<T> teacher_map;
  TapDescriptor student_tap;
  TapDescriptor teacher_tap;
};

/// (student stage, teacher stage) index pairs selected by `strategy`.
inline std::vector<std::pair<std::size_t, std::size_t>> match_stages(std::size_t student_stages,
                                                                     std::size_t teacher_stages,
                                                                     const MatchStrategy& strategy) {
  if (student_stages == 0 || teacher_stages == 0) throw ConfigError("match: feature bundles must be non-empty");
  const std::size_t k = std::min(student_stages, teacher_stages);
  std::vector<std::pair<std::size_t, std::size_t>> aligned;
  for (std::size_t i = 0; i < k; ++i) aligned.emplace_back(student_stages - k + i, teacher_stages - k + i);
  if (strategy.kind == MatchKind::all) return aligned;
  if (strategy.n == 0) throw ConfigError("match.n: must be positive");
  switch (strategy.kind) {
    case MatchKind::first_n:
    case MatchKind::last_n:
      if (strategy.n > k)
        throw ConfigError("match.n: " + std::to_string(strategy.n) + " exceeds the " + std::to_string(k) +
                          " available stage pairs");
      if (strategy.kind == MatchKind::first_n) return {aligned.begin(), aligned.begin() + strategy.n};
      return {aligned.end() - strategy.n, aligned.end()};
    case MatchKind::stride_n: {
      std::vector<std::pair<std::size_t, std::size_t>> out;
      for (std::size_t i = k; i-- > 0;)
        if ((k - 1 - i) % strategy.n == 0) out.insert(out.begin(), aligned[i]);
      return out;
    }
    default: return aligned;
  }
}

template <typename T>
std::vector<FeaturePair<T>> match_feature_pairs(const FeatureBundle<T>& student, const FeatureBundle<T>& teacher,
                                                const MatchStrategy& strategy) {
  std::vector<FeaturePair<T>> pairs;
  for (auto [s, t] : match_stages(student.features.size(), teacher.features.size(), strategy))
    pairs.push_back({student.features[s], teacher.features[t], student.taps[s], teacher.taps[t]});
  return pairs;
}

namespace detail {

struct PoolGeometry {
  std::size_t channel_group, kernel_h, kernel_w;
};

inline PoolGeometry pool_geometry(const Shape& teacher, const Shape& target) {
  auto fail = [&] {
    throw AdaptationError("cannot reduce teacher map " + shape_string(teacher) + " onto student shape " +
                          shape_string(target) + ": channel and spatial sizes must be integer multiples");
  };
  if (teacher.size() != 4 || target.size() != 4 || teacher[0] != target[0]) fail();
  for (std::size_t a = 1; a < 4; ++a)
    if (target[a] == 0 || teacher[a] < target[a] || teacher[a] % target[a] != 0) fail();
  return {teacher[1] / target[1], teacher[2] / target[2], teacher[3] / target[3]};
}

}  // namespace detail

/// Max-pool a teacher map onto `target_shape`: spatial windows of size
/// (teacher / target) and a max over contiguous channel groups of size
/// (teacher channels / target channels).
template <typename T>
Tensor<T> adapt_teacher_feature(const Tensor<T>& teacher_map, const Shape& target_shape) {
  if (teacher_map.shape() == target_shape) return teacher_map;
  const auto g = detail::pool_geometry(teacher_map.shape(), target_shape);
  Tensor<T> out(target_shape);
  for (std::size_t n = 0; n < target_shape[0]; ++n)
    for (std::size_t c = 0; c < target_shape[1]; ++c)
      for (std::size_t h = 0; h < target_shape[2]; ++h)
        for (std::size_t w = 0; w < target_shape[3]; ++w) {
          T best = teacher_map.at(n, c * g.channel_group, h * g.kernel_h, w * g.kernel_w);
          for (std::size_t dc = 0; dc < g.channel_group; ++dc)
            for (std::size_t i = 0; i < g.kernel_h; ++i)
              for (std::size_t j = 0; j < g.kernel_w; ++j)
                best = std::max(best, teacher_map.at(n, c * g.channel_group + dc, h * g.kernel_h + i, w * g.kernel_w + j));
          out.at(n, c, h, w) = best;
        }
  return out;
}

/// Routes each output gradient to the (first) maximal element of its window.
template <typename T>
Tensor<T> adapt_teacher_feature_backward(const Tensor<T>& teacher_map, const Tensor<T>& grad_out) {
  if (teacher_map.shape() == grad_out.shape()) return grad_out;
  const auto g = detail::pool_geometry(teacher_map.shape(), grad_out.shape());
  Tensor<T> dx(teacher_map.shape());
  const Shape& ts = grad_out.shape();
  for (std::size_t n = 0; n < ts[0]; ++n)
    for (std::size_t c = 0; c < ts[1]; ++c)
      for (std::size_t h = 0; h < ts[2]; ++h)
        for (std::size_t w = 0; w < ts[3]; ++w) {
          std::size_t bc = c * g.channel_group, bh = h * g.kernel_h, bw = w * g.kernel_w;
          T best = teacher_map.at(n, bc, bh, bw);
          for (std::size_t dc = 0; dc < g.channel_group; ++dc)
            for (std::size_t i = 0; i < g.kernel_h; ++i)
              for (std::size_t j = 0; j < g.kernel_w; ++j) {
                const std::size_t cc = c * g.channel_group + dc, hh = h * g.kernel_h + i, ww = w * g.kernel_w + j;
                if (teacher_map.at(n, cc, hh, ww) > best) {
                  best = teacher_map.at(n, cc, hh, ww);
                  bc = cc, bh = hh, bw = ww;
                }
              }
          dx.at(n, bc, bh, bw) += grad_out.at(n, c, h, w);
        }
  return dx;
}

/// Replaces each pair's teacher map by its adaptation to the student shape.
template <typename T>
void adapt_pairs(std::vector<FeaturePair<T>>& pairs) {
  for (auto& p : pairs) p.teacher_map = adapt_teacher_feature(p.teacher_map, p.student_map.shape());
}

/// Loss over a list of feature pairs with one gradient per student map.
template <typename T>
struct FeatureLossValue {
  T value = 0;
  std::vector<Tensor<T>> grads;
  /// Samples whose flattened map was all zeros under the cosine loss.
  std::size_t degenerate = 0;
};

enum class FeatureLossKind { mse, cosine, kl };

inline FeatureLossKind parse_feature_loss_kind(std::string_view s) {
  if (s == "mse") return FeatureLossKind::mse;
  if (s == "cosine") return FeatureLossKind::cosine;
  if (s == "kl") return FeatureLossKind::kl;
  throw ConfigError("feature_loss: unknown value '" + std::string(s) + "'");
}

inline std::string_view to_string(FeatureLossKind k) {
  return k == FeatureLossKind::mse ? "mse" : (k == FeatureLossKind::cosine ? "cosine" : "kl");
}

namespace detail {

template <typename T>
void require_pairs(std::span<const FeaturePair<T>> pairs, std::string_view what) {
  if (pairs.empty()) throw ConfigError(std::string(what) + ": no feature pairs to match");
  for (const auto& p : pairs) p.student_map.require_same_shape(p.teacher_map, what);
}

template <typename T>
T pair_mse(const FeaturePair<T>& p, Tensor<T>& grad, T weight) {
  const T inv = T(1) / static_cast<T>(p.student_map.size());
  T sum = 0;
  grad = Tensor<T>(p.student_map.shape());
  for (std::size_t i = 0; i < p.student_map.size(); ++i) {
    const T d = p.student_map[i] - p.teacher_map[i];
    sum += d * d;
    grad[i] = 2 * d * inv * weight;
  }
  return sum * inv;
}

template <typename T>
T pair_cosine(const FeaturePair<T>& p, Tensor<T>& grad, T weight, std::size_t& degenerate) {
  const std::size_t batch = p.student_map.dim(0), len = p.student_map.stride0();
  grad = Tensor<T>(p.student_map.shape());
  T total = 0;
  for (std::size_t n = 0; n < batch; ++n) {
    const T* u = p.student_map.data() + n * len;
    const T* v = p.teacher_map.data() + n * len;
    T uu = 0, vv = 0, uv = 0;
    for (std::size_t i = 0; i < len; ++i) {
      uu += u[i] * u[i];
      vv += v[i] * v[i];
      uv += u[i] * v[i];
    }
    if (uu == 0 || vv == 0) {
      ++degenerate;
      total += 1;
      continue;
    }
    const T nu = std::sqrt(uu), nv = std::sqrt(vv), cos = uv / (nu * nv);
    total += 1 - cos;
    const T scale = weight / static_cast<T>(batch);
    T* g = grad.data() + n * len;
    for (std::size_t i = 0; i < len; ++i) g[i] = -scale * (v[i] / (nu * nv) - cos * u[i] / uu);
  }
  return total / static_cast<T>(batch);
}

template <typename T>
T pair_spatial_kl(const FeaturePair<T>& p, Tensor<T>& grad, T weight) {
  const Shape& s = p.student_map.shape();
  const std::size_t batch = s[0], maps = s[0] * s[1], plane = s[2] * s[3];
  const Tensor<T> st = p.student_map.reshaped({maps, plane});
  const Tensor<T> tt = p.teacher_map.reshaped({maps, plane});
  const auto ps = soften(st, T(1));
  const auto pt = soften(tt, T(1));
  const LossValue<T> kl = batchmean_kl(pt, ps);
  // batchmean_kl divided by the row count (batch * channels); renormalize to the batch size.
  const T value = kl.value * static_cast<T>(maps) / static_cast<T>(batch);
  grad = Tensor<T>(s);
  const T scale = weight / static_cast<T>(batch);
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = scale * (ps.probabilities[i] - pt.probabilities[i]);
  return value;
}

}  // namespace detail

/// Mean over pairs of the elementwise MSE between student and adapted teacher maps.
template <typename T>
FeatureLossValue<T> sfd_loss(std::span<const FeaturePair<T>> pairs) {
  detail::require_pairs(pairs, "sfd_loss");
  FeatureLossValue<T> out;
  const T w = T(1) / static_cast<T>(pairs.size());
  out.grads.resize(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) out.value += w * detail::pair_mse(pairs[i], out.grads[i], w);
  return out;
}

/// Alternative feature-matching losses, each averaged over pairs:
/// mse as in sfd_loss; cosine = mean over samples of (1 - cos) between
/// flattened per-sample maps; kl = batch-mean KL between spatial softmaxes
/// (per channel, T = 1) with the teacher as target.
template <typename T>
FeatureLossValue<T> feature_loss_variant(std::span<const FeaturePair<T>> pairs, FeatureLossKind kind) {
  detail::require_pairs(pairs, "feature_loss_variant");
  FeatureLossValue<T> out;
  const T w = T(1) / static_cast<T>(pairs.size());
  out.grads.resize(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    switch (kind) {
      case FeatureLossKind::mse: out.value += w * detail::pair_mse(pairs[i], out.grads[i], w); break;
      case FeatureLossKind::cosine:
        out.value += w * detail::pair_cosine(pairs[i], out.grads[i], w, out.degenerate);
        break;
      case FeatureLossKind::kl: out.value += w * detail::pair_spatial_kl(pairs[i], out.grads[i], w); break;
    }
  }
  return out;
}

/// Running per-channel mean of strictly negative pre-ReLU teacher responses.
template <typename T>
class MarginAccumulator {
 public:
  void add(const Tensor<T>& teacher_pre_relu) {
    if (teacher_pre_relu.rank() != 4) throw ShapeError("margin_values: expected an NCHW tensor");
    const std::size_t channels = teacher_pre_relu.dim(1), plane = teacher_pre_relu.dim(2) * teacher_pre_relu.dim(3);
    if (sum_.empty()) {
      sum_.assign(channels, 0.0);
      count_.assign(channels, 0);
    } else if (sum_.size() != channels) {
      throw ShapeError("margin_values: channel count changed between batches");
    }
    for (std::size_t n = 0; n < teacher_pre_relu.dim(0); ++n)
      for (std::size_t c = 0; c < channels; ++c) {
        const T* p = teacher_pre_relu.data() + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i)
          if (p[i] < 0) {
            sum_[c] += static_cast<double>(p[i]);
            ++count_[c];
          }
      }
  }

  /// Channels without any negative response get the sentinel -1e-6.
  std::vector<T> values() const {
    std::vector<T> m(sum_.size());
    for (std::size_t c = 0; c < m.size(); ++c)
      m[c] = count_[c] ? static_cast<T>(sum_[c] / static_cast<double>(count_[c])) : T(-1e-6);
    return m;
  }

 private:
  std::vector<double> sum_;
  std::vector<std::size_t> count_;
};

template <typename T>
std::vector<T> margin_values(const Tensor<T>& teacher_pre_relu) {
  MarginAccumulator<T> acc;
  acc.add(teacher_pre_relu);
  return acc.values();
}

/// Partial L2 against the margin-ReLU teacher target t' = max(t, m_c):
/// elements where s <= t' <= 0 contribute nothing, the rest (t' - s)^2;
/// normalized by the element count.
template <typename T>
LossValue<T> oh_loss(const Tensor<T>& student_map, const Tensor<T>& teacher_map, std::span<const T> margins) {
  student_map.require_same_shape(teacher_map, "oh_loss");
  if (student_map.rank() != 4 || margins.size() != student_map.dim(1))
    throw ShapeError("oh_loss: expected one margin per channel (" + std::to_string(student_map.rank() == 4 ? student_map.dim(1) : 0) +
                     "), got " + std::to_string(margins.size()));
  const std::size_t channels = student_map.dim(1), plane = student_map.dim(2) * student_map.dim(3);
  const T inv = T(1) / static_cast<T>(student_map.size());
  LossValue<T> out{0, Tensor<T>(student_map.shape())};
  for (std::size_t i = 0; i < student_map.size(); ++i) {
    const std::size_t c = (i / plane) % channels;
    const T target = std::max(teacher_map[i], margins[c]);
    const T s = student_map[i];
    if (s <= target && target <= 0) continue;
    out.value += (target - s) * (target - s);
    out.grad[i] = 2 * (s - target) * inv;
  }
  out.value *= inv;
  return out;
}

/// Activation-boundary hinge: where the teacher fires, push the student above
/// mu; elsewhere push it below -mu. Squared hinge, mean over elements.
template <typename T>
LossValue<T> ab_loss(const Tensor<T>& student_pre, const Tensor<T>& teacher_pre, T mu) {
  if (!(mu > 0)) throw DomainError("ab_loss margin mu must be positive, got " + std::to_string(mu));
  student_pre.require_same_shape(teacher_pre, "ab_loss");
  const T inv = T(1) / static_cast<T>(student_pre.size());
  LossValue<T> out{0, Tensor<T>(student_pre.shape())};
  for (std::size_t i = 0; i < student_pre.size(); ++i) {
    const T s = student_pre[i];
    if (teacher_pre[i] > 0) {
      const T h = std::max(mu - s, T(0));
      out.value += h * h;
      out.grad[i] = -2 * h * inv;
    } else {
      const T h = std::max(mu + s, T(0));
      out.value += h * h;
      out.grad[i] = 2 * h * inv;
    }
  }
  out.value *= inv;
  return out;
}

}  // namespace kdlab::losses

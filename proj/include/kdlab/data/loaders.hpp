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

#include <algorithm>
#include <numeric>
#include <optional>
#include <vector>

#include "kdlab/data/augment.hpp"
#include "kdlab/data/datasets.hpp"

// Loaders never own their datasets; callers keep them alive. Every batch is
// a pure function of (seed, epoch, batch index), so batches can be built in
// any order or concurrently and an epoch is still bitwise reproducible.

namespace kdlab::data {

struct Batch {
  Tensor<float> images;  // [B x 3 x 32 x 32], normalized
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
};

struct SamplePair {
  Tensor<float> clean;
  Tensor<float> augmented;
  std::optional<int> label;
};

struct PairedBatch {
  Tensor<float> clean;
  Tensor<float> augmented;
  std::vector<std::optional<int>> labels;

  std::size_t size() const { return labels.size(); }
  SamplePair pair(std::size_t i) const { return {clean.slice0(i, i + 1).reshaped({kChannels, kSide, kSide}),
                                                  augmented.slice0(i, i + 1).reshaped({kChannels, kSide, kSide}),
                                                  labels[i]}; }
  /// Labels of a fully labeled batch.
  std::vector<int> dense_labels() const {
    std::vector<int> out;
    for (const auto& l : labels) {
      if (!l) throw DomainError("dense_labels: batch contains unlabeled samples");
      out.push_back(*l);
    }
    return out;
  }
};

struct MixedBatch {
  PairedBatch cifar;
  PairedBatch stl;
};

namespace detail {

inline constexpr std::uint64_t kShuffleTag = 0x5f1e;
inline constexpr std::uint64_t kAugmentTag = 0xa06;

inline void require_loader_args(const ImageDataset& ds, std::size_t batch_size, std::string_view what) {
  if (ds.empty()) throw ConfigError(std::string(what) + ": dataset is empty");
  if (batch_size == 0) throw ConfigError(std::string(what) + ": batch_size must be positive");
  if (ds.height != kSide || ds.width != kSide)
    throw ShapeError(std::string(what) + ": images must be 32x32, got " + std::to_string(ds.height) + "x" +
                     std::to_string(ds.width));
}

inline std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed, std::uint64_t stream, std::size_t epoch) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  Rng rng = make_rng(seed, kShuffleTag ^ stream, epoch);
  shuffle(std::span(p), rng);
  return p;
}

inline Rng batch_rng(std::uint64_t seed, std::size_t epoch, std::size_t batch) {
  return make_rng(seed, kAugmentTag, (static_cast<std::uint64_t>(epoch) << 32) ^ batch);
}

inline void put(Tensor<float>& batch, std::size_t i, const Tensor<float>& image) {
  std::copy(image.values().begin(), image.values().end(), batch.data() + i * kImageBytes);
}

inline PairedBatch make_pairs(const ImageDataset& ds, std::span<const std::size_t> idx, const AugmentPolicy& policy,
                              Rng& rng) {
  PairedBatch out{Tensor<float>({idx.size(), kChannels, kSide, kSide}),
                  Tensor<float>({idx.size(), kChannels, kSide, kSide}), {}};
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Image8 img = ds.image(idx[i]);
    put(out.clean, i, validation_transform(img));
    put(out.augmented, i, augment_view(img, policy, rng));
    out.labels.push_back(ds.labeled() ? std::optional<int>(ds.labels[idx[i]]) : std::nullopt);
  }
  return out;
}

}  // namespace detail

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

/// Labeled training batches with standard augmentation (or normalization
/// only when `augment` is false). The last batch may be short.
class TrainLoader {
 public:
  TrainLoader(const ImageDataset& ds, std::size_t batch_size, std::uint64_t seed, bool augment = true)
      : ds_(&ds), batch_size_(batch_size), seed_(seed), augment_(augment) {
    detail::require_loader_args(ds, batch_size, "train_loader");
    if (!ds.labeled()) throw ConfigError("train_loader: dataset has no labels");
    start_epoch(0);
  }
  TrainLoader(ImageDataset&&, std::size_t, std::uint64_t, bool = true) = delete;

  std::size_t num_batches() const { return ceil_div(ds_->size(), batch_size_); }
  std::size_t dataset_size() const { return ds_->size(); }

  void start_epoch(std::size_t epoch) {
    epoch_ = epoch;
    order_ = detail::permutation(ds_->size(), seed_, 0, epoch);
  }

  Batch batch(std::size_t b) const {
    const std::size_t begin = b * batch_size_, end = std::min(begin + batch_size_, ds_->size());
    Batch out{Tensor<float>({end - begin, kChannels, kSide, kSide}), {}};
    Rng rng = detail::batch_rng(seed_, epoch_, b);
    for (std::size_t i = begin; i < end; ++i) {
      const Image8 img = ds_->image(order_[i]);
      detail::put(out.images, i - begin, augment_ ? standard_augment(to_unit(img), rng) : validation_transform(img));
      out.labels.push_back(ds_->labels[order_[i]]);
    }
    return out;
  }

 private:
  const ImageDataset* ds_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  bool augment_;
  std::size_t epoch_ = 0;
  std::vector<std::size_t> order_;
};

/// (clean, augmented) view pairs: the clean view is normalized only, the
/// augmented view follows `policy`.
class PairedLoader {
 public:
  PairedLoader(const ImageDataset& ds, AugmentPolicy policy, std::size_t batch_size, std::uint64_t seed)
      : ds_(&ds), policy_(policy), batch_size_(batch_size), seed_(seed) {
    detail::require_loader_args(ds, batch_size, "paired_loader");
    policy_.validate();
    start_epoch(0);
  }
  PairedLoader(ImageDataset&&, AugmentPolicy, std::size_t, std::uint64_t) = delete;

  std::size_t num_batches() const { return ceil_div(ds_->size(), batch_size_); }

  void start_epoch(std::size_t epoch) {
    epoch_ = epoch;
    order_ = detail::permutation(ds_->size(), seed_, 1, epoch);
  }

  PairedBatch batch(std::size_t b) const {
    const std::size_t begin = b * batch_size_, end = std::min(begin + batch_size_, ds_->size());
    Rng rng = detail::batch_rng(seed_, epoch_, b);
    return detail::make_pairs(*ds_, std::span(order_).subspan(begin, end - begin), policy_, rng);
  }

 private:
  const ImageDataset* ds_;
  AugmentPolicy policy_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0;
  std::vector<std::size_t> order_;
};

/// Balanced CIFAR/STL batches: batch_size / 2 pairs from each source. An
/// epoch ends when the larger source has been seen once; the smaller one
/// wraps around. The final batch may hold fewer pairs, equally from each side.
class MixedLoader {
 public:
  MixedLoader(const ImageDataset& cifar, const ImageDataset& stl, std::size_t batch_size, AugmentPolicy policy,
              std::uint64_t seed)
      : cifar_(&cifar), stl_(&stl), half_(batch_size / 2), policy_(policy), seed_(seed) {
    if (batch_size % 2 != 0) throw ConfigError("mixed_loader: batch_size must be even, got " + std::to_string(batch_size));
    detail::require_loader_args(cifar, batch_size, "mixed_loader (cifar)");
    detail::require_loader_args(stl, batch_size, "mixed_loader (stl)");
    if (!cifar.labeled()) throw ConfigError("mixed_loader: the CIFAR side must be labeled");
    policy_.validate();
    start_epoch(0);
  }

  MixedLoader(ImageDataset&&, const ImageDataset&, std::size_t, AugmentPolicy, std::uint64_t) = delete;
  MixedLoader(const ImageDataset&, ImageDataset&&, std::size_t, AugmentPolicy, std::uint64_t) = delete;

  std::size_t num_batches() const { return ceil_div(std::max(cifar_->size(), stl_->size()), half_); }

  void start_epoch(std::size_t epoch) {
    epoch_ = epoch;
    cifar_order_ = detail::permutation(cifar_->size(), seed_, 2, epoch);
    stl_order_ = detail::permutation(stl_->size(), seed_, 3, epoch);
  }

  MixedBatch batch(std::size_t b) const {
    const std::size_t longest = std::max(cifar_->size(), stl_->size());
    const std::size_t count = std::min(half_, longest - b * half_);
    std::vector<std::size_t> ci(count), si(count);
    for (std::size_t i = 0; i < count; ++i) {
      ci[i] = cifar_order_[(b * half_ + i) % cifar_->size()];
      si[i] = stl_order_[(b * half_ + i) % stl_->size()];
    }
    Rng rng = detail::batch_rng(seed_, epoch_, b);
    MixedBatch out{detail::make_pairs(*cifar_, ci, policy_, rng), detail::make_pairs(*stl_, si, policy_, rng)};
    for (auto& l : out.stl.labels) l.reset();
    return out;
  }

 private:
  const ImageDataset* cifar_;
  const ImageDataset* stl_;
  std::size_t half_;
  AugmentPolicy policy_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0;
  std::vector<std::size_t> cifar_order_, stl_order_;
};

/// Validation batches in dataset order, normalization only.
class EvalLoader {
 public:
  EvalLoader(const ImageDataset& ds, std::size_t batch_size) : ds_(&ds), batch_size_(batch_size) {
    detail::require_loader_args(ds, batch_size, "eval_loader");
  }
  EvalLoader(ImageDataset&&, std::size_t) = delete;

  std::size_t num_batches() const { return ceil_div(ds_->size(), batch_size_); }

  Batch batch(std::size_t b) const {
    const std::size_t begin = b * batch_size_, end = std::min(begin + batch_size_, ds_->size());
    Batch out{Tensor<float>({end - begin, kChannels, kSide, kSide}), {}};
    for (std::size_t i = begin; i < end; ++i) {
      detail::put(out.images, i - begin, validation_transform(ds_->image(i)));
      out.labels.push_back(ds_->labeled() ? ds_->labels[i] : -1);
    }
    return out;
  }

 private:
  const ImageDataset* ds_;
  std::size_t batch_size_;
};

}  // namespace kdlab::data

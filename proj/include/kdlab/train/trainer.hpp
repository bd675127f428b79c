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

#include <chrono>
#include <fstream>
#include <functional>
#include <memory>

#include <json.hpp>

#include "kdlab/data/loaders.hpp"
#include "kdlab/losses/feature.hpp"
#include "kdlab/losses/relational.hpp"
#include "kdlab/train/checkpoint.hpp"
#include "kdlab/train/config.hpp"
#include "kdlab/train/optimizer.hpp"

namespace kdlab::train {

/// Training and validation images for one run. `stl` is only read by
/// stl_mix and unsup_stl.
struct TrainData {
  data::ImageDataset train;
  data::ImageDataset val;
  std::optional<data::ImageDataset> stl;
};

/// Loads CIFAR-10 (train split for training, test split for validation)
/// from `root`, each reduced by `scale` to a stratified subset. STL-10
/// unlabeled images are loaded when `with_stl` is set, scale applied likewise.
inline TrainData load_train_data(const fs::path& root, double scale, std::uint64_t seed, bool with_stl) {
  TrainData d;
  d.train = data::scaled_subset(data::load_cifar10(root, data::Split::train), scale, seed);
  d.val = data::scaled_subset(data::load_cifar10(root, data::Split::test), scale, seed);
  if (with_stl) {
    data::ImageDataset stl = data::load_stl10_unlabeled(root);
    d.stl = scale == 1 ? std::move(stl) : data::scaled_subset(stl, scale, seed);
  }
  return d;
}

inline bool method_needs_stl(Method m) { return m == Method::stl_mix || m == Method::unsup_stl; }

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_acc = 0;
  double lr = 0;
  /// Seconds since the start of the run.
  double wall_time = 0;
  /// "train", or "ab-init" / "kd" for the two AB phases, "joint" / "kd" for dual training.
  std::string phase = "train";
  std::optional<double> teacher_val_acc;
};

struct RunResult {
  double best_val_accuracy = 0;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> history;
  /// Path of the best checkpoint, empty when the run was not persisted.
  std::string checkpoint;
  /// parameter_hash of the best state, hex.
  std::string checkpoint_id;
  /// checkpoint_id of every teacher the run learned from.
  std::vector<std::string> lineage;
  double wall_time = 0;
  /// First epoch of AB's kd phase.
  std::optional<std::size_t> phase_boundary;
  /// Dual training: epoch after which the teacher stopped training.
  std::optional<std::size_t> freeze_epoch;
  bool stopped_early = false;
  /// Best weights, kept in memory for multi-stage pipelines.
  std::shared_ptr<const Checkpoint> best_state;
};

struct RunOptions {
  /// When set: config.cfg, metrics.jsonl, best.ckpt and final.ckpt are written here.
  std::optional<fs::path> run_dir;
  /// Written verbatim to config.cfg.
  std::string config_snapshot;
  std::size_t eval_batch = 256;
  std::function<void(const std::string&)> log;
  /// Called after each epoch's evaluation with the model being trained.
  std::function<void(std::size_t, Model<float>&)> on_epoch;
};

// ---------------------------------------------------------------------------
// Evaluation

/// Index of the largest logit per row; ties resolve to the lowest index.
inline std::vector<int> argmax_rows(const Tensor<float>& logits) {
  std::vector<int> out(logits.dim(0));
  const std::size_t cols = logits.dim(1);
  for (std::size_t r = 0; r < out.size(); ++r) {
    const float* row = logits.data() + r * cols;
    out[r] = static_cast<int>(std::max_element(row, row + cols) - row);
  }
  return out;
}

inline double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size() || labels.empty())
    throw ShapeError("accuracy: need equally many predictions and labels");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// Top-1 accuracy on normalization-only validation images.
inline double evaluate(Model<float>& model, const data::ImageDataset& val, std::size_t batch_size = 256) {
  if (!val.labeled()) throw ConfigError("evaluate: validation data has no labels");
  data::EvalLoader loader(val, batch_size);
  std::size_t hits = 0;
  for (std::size_t b = 0; b < loader.num_batches(); ++b) {
    const data::Batch batch = loader.batch(b);
    const auto pred = argmax_rows(model.forward(batch.images, nn::Mode::eval).logits);
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == batch.labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(val.size());
}

namespace detail {

inline constexpr std::uint64_t kLoaderTag = 0x10ad;

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline bool is_head(const nn::Parameter<float>& p) {
  return p.name.rfind("linear.", 0) == 0 || p.name.rfind("fc.", 0) == 0;
}

/// Run-directory bookkeeping shared by every training entry point.
class RunRecorder {
 public:
  RunRecorder(const RunOptions& options, std::string prefix = {}) : options_(options), prefix_(std::move(prefix)) {
    if (options_.run_dir) {
      fs::create_directories(*options_.run_dir);
      write_file_atomic(*options_.run_dir / "config.cfg", options_.config_snapshot);
      metrics_.open(*options_.run_dir / "metrics.jsonl", std::ios::trunc);
      if (!metrics_) throw StorageError("cannot write " + (*options_.run_dir / "metrics.jsonl").string());
    }
  }

  void log(const std::string& line) const {
    if (options_.log) options_.log(prefix_ + line);
  }

  /// Appends the epoch and keeps the best state; returns true on a new best.
  bool record(RunResult& result, const EpochRecord& rec, Model<float>& model) {
    result.history.push_back(rec);
    if (metrics_.is_open()) {
      nlohmann::json j{{"epoch", rec.epoch}, {"train_loss", rec.train_loss}, {"val_acc", rec.val_acc},
                       {"lr", rec.lr},       {"wall_time", rec.wall_time}, {"phase", rec.phase}};
      if (rec.teacher_val_acc) j["teacher_val_acc"] = *rec.teacher_val_acc;
      metrics_ << j.dump() << "\n";
      metrics_.flush();
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %zu  loss %.4f  val_acc %.4f  lr %.4g  %.1fs", rec.epoch, rec.train_loss,
                  rec.val_acc, rec.lr, rec.wall_time);
    log(buf);
    const bool better = result.history.size() == 1 || rec.val_acc > result.best_val_accuracy;
    if (better) {
      result.best_val_accuracy = rec.val_acc;
      result.best_epoch = rec.epoch;
      auto state = std::make_shared<Checkpoint>(capture(model, {{"epoch", std::to_string(rec.epoch)},
                                                                {"val_acc", std::to_string(rec.val_acc)}}));
      result.checkpoint_id = hex64(parameter_hash(model));
      state->meta["id"] = result.checkpoint_id;
      result.best_state = state;
      if (options_.run_dir) {
        save_checkpoint(*state, *options_.run_dir / "best.ckpt");
        result.checkpoint = (*options_.run_dir / "best.ckpt").string();
      }
    }
    return better;
  }

  void finish(RunResult& result, Model<float>& model, Clock::time_point t0) {
    result.wall_time = seconds_since(t0);
    if (options_.run_dir) save_checkpoint(capture(model, {{"id", hex64(parameter_hash(model))}}), *options_.run_dir / "final.ckpt");
  }

 private:
  const RunOptions& options_;
  std::string prefix_;
  std::ofstream metrics_;
};

/// Batch-size weighted running mean of the per-batch losses.
struct LossMeter {
  double sum = 0;
  std::size_t count = 0;
  void add(double loss, std::size_t n) {
    sum += loss * static_cast<double>(n);
    count += n;
  }
  double mean() const { return count ? sum / static_cast<double>(count) : 0.0; }
};

/// Tensor slice [begin, end) along dimension 0, copied.
inline Tensor<float> rows(const Tensor<float>& t, std::size_t begin, std::size_t end) { return t.slice0(begin, end); }

/// Places per-part gradients back into one tensor in batch order.
inline Tensor<float> stack(std::initializer_list<const Tensor<float>*> parts) {
  std::vector<Tensor<float>> v;
  for (const auto* p : parts) v.push_back(*p);
  return concat0(std::span<const Tensor<float>>(v));
}

inline void require_finite(double loss, std::size_t epoch, std::size_t batch) {
  if (!std::isfinite(loss))
    throw DomainError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                      std::to_string(batch));
}

}  // namespace detail

/// 1x1 convolutions (with bias) mapping student stage maps onto the teacher's channel count.
class Connectors {
 public:
  Connectors() = default;
  Connectors(const std::vector<std::pair<std::size_t, std::size_t>>& stage_pairs, const std::vector<TapDescriptor>& student,
             const std::vector<TapDescriptor>& teacher, std::uint64_t seed) {
    Rng rng = make_rng(seed, 0xc0ec7);
    for (auto [s, t] : stage_pairs) {
      convs_.emplace_back("connector" + std::to_string(convs_.size()), student[s].channels, teacher[t].channels, 1, 1, 0,
                          true);
      convs_.back().init(rng);
    }
  }
  std::size_t size() const { return convs_.size(); }
  nn::Conv2d<float>& operator[](std::size_t i) { return convs_[i]; }
  std::vector<nn::Parameter<float>*> parameters() {
    std::vector<nn::Parameter<float>*> out;
    for (auto& c : convs_) c.collect(out);
    return out;
  }

 private:
  std::vector<nn::Conv2d<float>> convs_;
};

/// Per-channel OH margins of every teacher stage, from one pass over `images`.
inline std::vector<std::vector<float>> calibrate_margins(Model<float>& teacher, const data::ImageDataset& images,
                                                         std::size_t batch_size = 256) {
  data::EvalLoader loader(images, batch_size);
  std::vector<losses::MarginAccumulator<float>> acc;
  for (std::size_t b = 0; b < loader.num_batches(); ++b) {
    const auto bundle = teacher.forward(loader.batch(b).images, nn::Mode::eval);
    acc.resize(bundle.features.size());
    for (std::size_t s = 0; s < bundle.features.size(); ++s) acc[s].add(bundle.features[s]);
  }
  std::vector<std::vector<float>> out;
  for (const auto& a : acc) out.push_back(a.values());
  return out;
}

namespace detail {

/// Everything a single-student run needs between batches.
class Session {
 public:
  Session(const ModelSpec& student_spec, const MethodConfig& method, const TrainConfig& train, const TrainData& data,
          std::vector<Model<float>*> teachers)
      : method_(method),
        train_(train),
        data_(data),
        student_(student_spec, train.seed),
        teachers_(std::move(teachers)),
        sgd_(student_.parameters(), {train.momentum, train.nesterov, train.weight_decay}),
        kd_(method.kd_float()) {}

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  Model<float>& student() { return student_; }

  /// Builds 1x1 connectors for the matched stages and, for oh, the teacher margins.
  void prepare_connectors() {
    const Tensor<float> probe = data::validation_transform(data_.train.image(0)).reshaped({1, 3, 32, 32});
    const auto sb = student_.forward(probe, nn::Mode::eval);
    const auto tb = teachers_.at(0)->forward(probe, nn::Mode::eval);
    stage_pairs_ = losses::match_stages(sb.features.size(), tb.features.size(), *method_.match);
    connectors_ = Connectors(stage_pairs_, sb.taps, tb.taps, train_.seed);
    connector_sgd_ = std::make_unique<SGD<float>>(connectors_.parameters(),
                                                  SGDOptions{train_.momentum, train_.nesterov, train_.weight_decay});
    if (method_.method == Method::oh) {
      const auto all = calibrate_margins(*teachers_[0], data_.train);
      for (auto [s, t] : stage_pairs_) margins_.push_back(all[t]);
    }
  }

  /// One epoch of the per-batch loss selected by `kind`; returns the mean loss.
  double epoch(std::size_t epoch, double lr, Method kind, bool ab_init = false) {
    switch (kind) {
      case Method::uda_cifar: return paired_epoch(epoch, lr);
      case Method::stl_mix: return mixed_epoch(epoch, lr);
      case Method::unsup_stl: return unsup_epoch(epoch, lr);
      default: return labeled_epoch(epoch, lr, kind, ab_init);
    }
  }

 private:
  std::uint64_t loader_seed() const { return derive_seed(train_.seed, kLoaderTag); }

  void step(double lr, bool freeze_head = false) {
    if (freeze_head)
      sgd_.step(lr, [](const nn::Parameter<float>& p) { return is_head(p); });
    else
      sgd_.step(lr);
    sgd_.zero_grad();
    if (connector_sgd_) {
      connector_sgd_->step(lr);
      connector_sgd_->zero_grad();
    }
  }

  Tensor<float> teacher_logits(std::size_t i, const Tensor<float>& images) {
    return teachers_.at(i)->forward(images, nn::Mode::eval).logits;
  }

  /// Feature term for sfd / oh / ab. Fills `grad_features` (indexed by
  /// student stage) with the weighted gradient and returns the loss value.
  double feature_term(const FeatureBundle<float>& sb, const FeatureBundle<float>& tb, Method kind, double weight,
                      std::vector<Tensor<float>>& grad_features) {
    grad_features.assign(sb.features.size(), Tensor<float>());
    if (kind == Method::sfd) {
      auto pairs = losses::match_feature_pairs(sb, tb, *method_.match);
      losses::adapt_pairs(pairs);
      const auto fl = losses::feature_loss_variant(std::span<const losses::FeaturePair<float>>(pairs), method_.feature_loss);
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        Tensor<float> g = fl.grads[i];
        g *= static_cast<float>(weight);
        grad_features[pairs[i].student_tap.stage] = std::move(g);
      }
      return fl.value;
    }
    double value = 0;
    const float inv = 1.0f / static_cast<float>(stage_pairs_.size());
    for (std::size_t i = 0; i < stage_pairs_.size(); ++i) {
      const auto [s, t] = stage_pairs_[i];
      const Tensor<float> mapped = connectors_[i].forward(sb.features[s], nn::Mode::train);
      const Shape target{mapped.dim(0), tb.features[t].dim(1), mapped.dim(2), mapped.dim(3)};
      const Tensor<float> teacher = losses::adapt_teacher_feature(tb.features[t], target);
      losses::LossValue<float> l = kind == Method::oh
                                       ? losses::oh_loss(mapped, teacher, std::span<const float>(margins_[i]))
                                       : losses::ab_loss(mapped, teacher, static_cast<float>(method_.ab_margin));
      value += inv * l.value;
      l.grad *= inv * static_cast<float>(weight);
      grad_features[s] = connectors_[i].backward(l.grad);
    }
    return value;
  }

  double labeled_epoch(std::size_t epoch, double lr, Method kind, bool ab_init) {
    data::TrainLoader loader(data_.train, train_.batch_size, loader_seed());
    loader.start_epoch(epoch);
    LossMeter meter;
    for (std::size_t b = 0; b < loader.num_batches(); ++b) {
      const data::Batch batch = loader.batch(b);
      const auto sb = student_.forward(batch.images, nn::Mode::train);
      std::vector<Tensor<float>> grad_features;
      Tensor<float> grad;
      double loss = 0;
      switch (kind) {
        case Method::nokd: {
          auto l = losses::cross_entropy(sb.logits, std::span<const int>(batch.labels));
          loss = l.value;
          grad = std::move(l.grad);
          break;
        }
        case Method::kd: {
          auto l = losses::kd_loss(sb.logits, teacher_logits(0, batch.images), batch.labels, kd_);
          loss = l.value;
          grad = std::move(l.grad);
          break;
        }
        case Method::mkd: {
          std::vector<Tensor<float>> tl;
          for (std::size_t i = 0; i < teachers_.size(); ++i) tl.push_back(teacher_logits(i, batch.images));
          auto l = losses::mkd_loss(sb.logits, std::span<const Tensor<float>>(tl), batch.labels, kd_);
          loss = l.value;
          grad = std::move(l.grad);
          break;
        }
        case Method::rkd: {
          const Tensor<float> tl = teacher_logits(0, batch.images);
          const auto& w = *method_.rkd_weights;
          const losses::RKDWeights<float> wf{static_cast<float>(w.kd), static_cast<float>(w.distance),
                                             static_cast<float>(w.angle)};
          auto l = losses::rkd_combined(sb.logits, tl, sb.logits, tl, batch.labels, kd_, wf);
          loss = l.value;
          grad = std::move(l.grad_logits);
          grad += l.grad_embedding;
          break;
        }
        case Method::sfd:
        case Method::oh:
        case Method::ab: {
          const auto tb = teachers_.at(0)->forward(batch.images, nn::Mode::eval);
          if (ab_init) {
            loss = feature_term(sb, tb, kind, 1.0, grad_features);
            grad = Tensor<float>(sb.logits.shape());
          } else {
            auto l = losses::kd_loss(sb.logits, tb.logits, batch.labels, kd_);
            const double beta = *method_.feature_weight;
            loss = l.value + beta * feature_term(sb, tb, kind, beta, grad_features);
            grad = std::move(l.grad);
          }
          break;
        }
        default: throw ConfigError("method " + std::string(to_string(kind)) + " has no labeled-batch loss");
      }
      require_finite(loss, epoch, b);
      student_.backward(grad, grad_features);
      step(lr, ab_init);
      meter.add(loss, batch.size());
    }
    return meter.mean();
  }

  double paired_epoch(std::size_t epoch, double lr) {
    data::PairedLoader loader(data_.train, method_.augment, train_.batch_size, loader_seed());
    loader.start_epoch(epoch);
    LossMeter meter;
    for (std::size_t b = 0; b < loader.num_batches(); ++b) {
      const data::PairedBatch batch = loader.batch(b);
      const std::size_t n = batch.size();
      const auto labels = batch.dense_labels();
      const Tensor<float> both = stack({&batch.clean, &batch.augmented});
      const auto sb = student_.forward(both, nn::Mode::train);
      const Tensor<float> tl = teacher_logits(0, both);
      const losses::LogitPair<float> s{rows(sb.logits, 0, n), rows(sb.logits, n, 2 * n)};
      const losses::LogitPair<float> t{rows(tl, 0, n), rows(tl, n, 2 * n)};
      auto l = losses::uda_cifar_loss(s, t, std::span<const int>(labels), kd_);
      require_finite(l.value, epoch, b);
      student_.backward(stack({&l.grad_clean, &l.grad_augmented}));
      step(lr);
      meter.add(l.value, n);
    }
    return meter.mean();
  }

  double mixed_epoch(std::size_t epoch, double lr) {
    if (!data_.stl) throw ConfigError("method stl_mix needs STL-10 unlabeled data");
    data::MixedLoader loader(data_.train, *data_.stl, train_.batch_size, method_.augment, loader_seed());
    loader.start_epoch(epoch);
    LossMeter meter;
    for (std::size_t b = 0; b < loader.num_batches(); ++b) {
      const data::MixedBatch batch = loader.batch(b);
      const std::size_t n = batch.cifar.size(), m = batch.stl.size();
      const auto labels = batch.cifar.dense_labels();
      const auto sb = student_.forward(stack({&batch.cifar.clean, &batch.cifar.augmented, &batch.stl.augmented}),
                                       nn::Mode::train);
      const Tensor<float> tl = teacher_logits(0, stack({&batch.cifar.clean, &batch.cifar.augmented, &batch.stl.clean}));
      const losses::LogitPair<float> s{rows(sb.logits, 0, n), rows(sb.logits, n, 2 * n)};
      const losses::LogitPair<float> t{rows(tl, 0, n), rows(tl, n, 2 * n)};
      auto sup = losses::uda_cifar_loss(s, t, std::span<const int>(labels), kd_);
      auto unsup = losses::uda_unsup_loss(rows(sb.logits, 2 * n, 2 * n + m), rows(tl, 2 * n, 2 * n + m), kd_.temperature);
      const double loss = sup.value + unsup.value;
      require_finite(loss, epoch, b);
      student_.backward(stack({&sup.grad_clean, &sup.grad_augmented, &unsup.grad}));
      step(lr);
      meter.add(loss, n + m);
    }
    return meter.mean();
  }

  double unsup_epoch(std::size_t epoch, double lr) {
    if (!data_.stl) throw ConfigError("method unsup_stl needs STL-10 unlabeled data");
    data::PairedLoader loader(*data_.stl, method_.augment, train_.batch_size, loader_seed());
    loader.start_epoch(epoch);
    LossMeter meter;
    for (std::size_t b = 0; b < loader.num_batches(); ++b) {
      const data::PairedBatch batch = loader.batch(b);
      const auto sb = student_.forward(batch.augmented, nn::Mode::train);
      auto l = losses::uda_unsup_loss(sb.logits, teacher_logits(0, batch.clean), kd_.temperature);
      require_finite(l.value, epoch, b);
      student_.backward(l.grad);
      step(lr);
      meter.add(l.value, batch.size());
    }
    return meter.mean();
  }

  const MethodConfig& method_;
  const TrainConfig& train_;
  const TrainData& data_;
  Model<float> student_;
  std::vector<Model<float>*> teachers_;
  SGD<float> sgd_;
  losses::KDParams<float> kd_;
  std::vector<std::pair<std::size_t, std::size_t>> stage_pairs_;
  Connectors connectors_;
  std::unique_ptr<SGD<float>> connector_sgd_;
  std::vector<std::vector<float>> margins_;
};

inline std::vector<std::string> teacher_ids(const std::vector<Model<float>*>& teachers) {
  std::vector<std::string> ids;
  for (auto* t : teachers) ids.push_back(hex64(parameter_hash(*t)));
  return ids;
}

/// Shared driver: `phase_of(epoch)` selects the per-batch loss and whether
/// the epoch is AB's feature-initialization phase.
inline RunResult run_session(const ModelSpec& student_spec, const MethodConfig& method, const TrainConfig& train,
                             const TrainData& data, std::vector<Model<float>*> teachers, const RunOptions& options) {
  const auto t0 = Clock::now();
  const std::vector<std::string> ids = teacher_ids(teachers);
  Session session(student_spec, method, train, data, teachers);
  RunRecorder recorder(options);
  RunResult result;
  result.lineage = ids;

  const bool ab = method.method == Method::ab;
  const std::size_t boundary = ab ? static_cast<std::size_t>(std::floor(method.phase_split * static_cast<double>(train.epochs))) : 0;
  if (ab) result.phase_boundary = boundary;
  const bool feature = method.method == Method::sfd || method.method == Method::oh || ab;
  if (feature) session.prepare_connectors();

  for (std::size_t e = 0; e < train.epochs; ++e) {
    const double lr = lr_at_epoch(train, e);
    const bool ab_init = ab && e < boundary;
    const Method kind = ab && !ab_init ? Method::kd : method.method;
    EpochRecord rec;
    rec.epoch = e;
    rec.lr = lr;
    rec.train_loss = session.epoch(e, lr, kind, ab_init);
    rec.val_acc = evaluate(session.student(), data.val, options.eval_batch);
    rec.wall_time = seconds_since(t0);
    if (ab) rec.phase = ab_init ? "ab-init" : "kd";
    recorder.record(result, rec, session.student());
    if (options.on_epoch) options.on_epoch(e, session.student());
  }
  recorder.finish(result, session.student(), t0);
  if (teacher_ids(teachers) != ids) throw Error("internal: a teacher changed during distillation");
  return result;
}

inline void require_data(const TrainData& data, const MethodConfig& method) {
  if (data.train.empty() || data.val.empty())
    throw EnvironmentError("training data is empty (set KDLAB_DATA_DIR or run `kdlab fetch-data`)");
  if (method_needs_stl(method.method) && (!data.stl || data.stl->empty()))
    throw EnvironmentError("method " + std::string(to_string(method.method)) +
                           " needs STL-10 unlabeled images (run `kdlab fetch-data`)");
}

}  // namespace detail

/// Cross-entropy training under the fixed regime.
inline RunResult train_baseline(const ModelSpec& spec, const TrainConfig& train, const TrainData& data,
                                const RunOptions& options = {}) {
  train.validate();
  spec.validate();
  MethodConfig nokd;
  nokd.method = Method::nokd;
  detail::require_data(data, nokd);
  return detail::run_session(spec, nokd, train, data, {}, options);
}

/// Trains `student_spec` against in-memory teachers (frozen, evaluation mode).
/// Covers every single-student method; takd and dual have their own pipelines.
inline RunResult distill_with(const ModelSpec& student_spec, const MethodConfig& method, const TrainConfig& train,
                              const TrainData& data, std::vector<Model<float>*> teachers, const RunOptions& options = {}) {
  method.validate();
  train.validate();
  student_spec.validate();
  if (method.method == Method::takd || method.method == Method::dual)
    throw ConfigError("method " + std::string(to_string(method.method)) + " runs through its own pipeline");
  if (teachers.size() != method.teacher_specs.size())
    throw ConfigError("expected " + std::to_string(method.teacher_specs.size()) + " teachers, got " +
                      std::to_string(teachers.size()));
  for (std::size_t i = 0; i < teachers.size(); ++i)
    if (!(teachers[i]->spec() == method.teacher_specs[i]))
      throw ConfigError("teacher " + std::to_string(i) + " is a " + teachers[i]->spec().name() + ", config says " +
                        method.teacher_specs[i].name());
  if ((method.method == Method::stl_mix) && train.batch_size % 2 != 0)
    throw ConfigError("stl_mix needs an even batch_size");
  detail::require_data(data, method);
  return detail::run_session(student_spec, method, train, data, std::move(teachers), options);
}

/// AB: floor(phase_split * epochs) epochs of activation-boundary matching
/// only (classifier head frozen, no task loss), then kd for the rest.
inline RunResult train_ab_two_phase(const ModelSpec& student_spec, Model<float>& teacher, const MethodConfig& method,
                                    const TrainConfig& train, const TrainData& data, const RunOptions& options = {}) {
  if (method.method != Method::ab) throw ConfigError("train_ab_two_phase needs method ab");
  return distill_with(student_spec, method, train, data, {&teacher}, options);
}

struct TakdConfig {
  TrainConfig train;
  losses::KDParams<double> kd_params;
  /// Pretrained teacher; trained from scratch (phase 1) when absent.
  std::optional<fs::path> teacher_checkpoint;
};

struct TakdResult {
  RunResult teacher;
  RunResult assistant;
  RunResult student;
};

/// Teacher -> assistant -> student chain of kd runs. Each result's lineage
/// holds the checkpoint_id of the model it was distilled from.
inline TakdResult distill_takd(const ModelSpec& teacher_spec, const std::optional<ModelSpec>& ta_spec,
                               const ModelSpec& student_spec, const TakdConfig& config, const TrainData& data,
                               const RunOptions& options = {}) {
  if (!ta_spec) throw ConfigError("takd requires a teacher-assistant spec (ta)");
  config.train.validate();
  ta_spec->validate();
  MethodConfig kd;
  kd.method = Method::kd;
  kd.kd_params = config.kd_params;
  auto sub = [&](const char* name, const char* tag) {
    RunOptions o = options;
    if (options.run_dir) o.run_dir = *options.run_dir / name;
    o.log = options.log ? [log = options.log, tag](const std::string& s) { log(std::string(tag) + s); }
                        : std::function<void(const std::string&)>();
    return o;
  };
  TakdResult out;
  Model<float> teacher(teacher_spec);
  if (config.teacher_checkpoint) {
    const Checkpoint ckpt = load_checkpoint(*config.teacher_checkpoint, teacher_spec);
    restore(ckpt, teacher);
    out.teacher.best_val_accuracy = evaluate(teacher, data.val, options.eval_batch);
    out.teacher.checkpoint = config.teacher_checkpoint->string();
    out.teacher.checkpoint_id = hex64(parameter_hash(teacher));
    out.teacher.best_state = std::make_shared<Checkpoint>(ckpt);
  } else {
    out.teacher = train_baseline(teacher_spec, config.train, data, sub("teacher", "[teacher] "));
    restore(*out.teacher.best_state, teacher);
  }
  kd.teacher_specs = {teacher_spec};
  out.assistant = distill_with(*ta_spec, kd, config.train, data, {&teacher}, sub("assistant", "[assistant] "));
  Model<float> assistant(*ta_spec);
  restore(*out.assistant.best_state, assistant);
  kd.teacher_specs = {*ta_spec};
  out.student = distill_with(student_spec, kd, config.train, data, {&assistant}, sub("student", "[student] "));
  return out;
}

/// Teacher and student train together from scratch with cross-entropy. Once
/// the teacher leads by at least `gap` validation accuracy it is frozen and
/// the student switches to kd against it, stopping early when it catches up.
/// The returned history is the student's; teacher accuracy rides along.
inline RunResult dual_train(const ModelSpec& teacher_spec, const ModelSpec& student_spec, const MethodConfig& method,
                            const TrainConfig& train, const TrainData& data, const RunOptions& options = {}) {
  train.validate();
  teacher_spec.validate();
  student_spec.validate();
  method.kd_params.validate();
  if (!(method.dual_gap >= 0 && method.dual_gap < 1)) throw ConfigError("dual.gap: must lie in [0, 1)");
  MethodConfig nokd;
  nokd.method = Method::nokd;
  detail::require_data(data, nokd);

  const auto t0 = detail::Clock::now();
  TrainConfig teacher_train = train;
  teacher_train.seed = derive_seed(train.seed, 0xd7a1);
  detail::Session teacher(teacher_spec, nokd, teacher_train, data, {});
  detail::RunRecorder recorder(options);
  RunResult result;
  double frozen_acc = 0;
  std::unique_ptr<detail::Session> student;
  MethodConfig kd;
  kd.method = Method::kd;
  kd.kd_params = method.kd_params;
  student = std::make_unique<detail::Session>(student_spec, kd, train, data, std::vector<Model<float>*>{&teacher.student()});

  for (std::size_t e = 0; e < train.epochs; ++e) {
    const double lr = lr_at_epoch(train, e);
    const bool frozen = result.freeze_epoch.has_value();
    EpochRecord rec;
    rec.epoch = e;
    rec.lr = lr;
    rec.phase = frozen ? "kd" : "joint";
    if (!frozen) teacher.epoch(e, lr, Method::nokd);
    rec.train_loss = student->epoch(e, lr, frozen ? Method::kd : Method::nokd);
    rec.val_acc = evaluate(student->student(), data.val, options.eval_batch);
    rec.teacher_val_acc = frozen ? frozen_acc : evaluate(teacher.student(), data.val, options.eval_batch);
    rec.wall_time = detail::seconds_since(t0);
    recorder.record(result, rec, student->student());
    if (options.on_epoch) options.on_epoch(e, student->student());
    if (!frozen && *rec.teacher_val_acc - rec.val_acc >= method.dual_gap) {
      result.freeze_epoch = e;
      frozen_acc = *rec.teacher_val_acc;
      result.lineage = {hex64(parameter_hash(teacher.student()))};
      recorder.log("teacher frozen at epoch " + std::to_string(e));
    } else if (frozen && rec.val_acc >= frozen_acc) {
      result.stopped_early = e + 1 < train.epochs;
      break;
    }
  }
  recorder.finish(result, student->student(), t0);
  if (options.run_dir)
    save_checkpoint(capture(teacher.student()), *options.run_dir / "teacher.ckpt");
  return result;
}

/// Entry point for every method. Teachers are loaded from `teacher_checkpoints`
/// (one per teacher spec, checked against it) except for dual, which trains
/// its own, and takd, which trains its teacher when no checkpoint is given.
inline RunResult distill(const ModelSpec& student_spec, const MethodConfig& method, const TrainConfig& train,
                         const TrainData& data, std::span<const fs::path> teacher_checkpoints,
                         const RunOptions& options = {}) {
  method.validate();
  train.validate();
  switch (method.method) {
    case Method::nokd: return train_baseline(student_spec, train, data, options);
    case Method::dual: return dual_train(method.teacher_specs[0], student_spec, method, train, data, options);
    case Method::takd: {
      if (teacher_checkpoints.size() > 1) throw ConfigError("takd takes at most one teacher checkpoint");
      TakdConfig cfg{train, method.kd_params, std::nullopt};
      if (!teacher_checkpoints.empty()) cfg.teacher_checkpoint = teacher_checkpoints[0];
      return distill_takd(method.teacher_specs[0], method.ta_spec, student_spec, cfg, data, options).student;
    }
    default: break;
  }
  if (teacher_checkpoints.size() != method.teacher_specs.size())
    throw ConfigError("method " + std::string(to_string(method.method)) + " needs " +
                      std::to_string(method.teacher_specs.size()) + " teacher checkpoints, got " +
                      std::to_string(teacher_checkpoints.size()));
  std::vector<Model<float>> teachers;
  for (std::size_t i = 0; i < teacher_checkpoints.size(); ++i)
    teachers.push_back(load_model(teacher_checkpoints[i], method.teacher_specs[i]));
  std::vector<Model<float>*> ptrs;
  for (auto& t : teachers) ptrs.push_back(&t);
  return distill_with(student_spec, method, train, data, std::move(ptrs), options);
}

}  // namespace kdlab::train

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

#include "kdlab/runner/sweep.hpp"

namespace kdlab::runner {

/// Subsets are drawn with a fixed seed so that repeated runs differ only in
/// their training seed.
inline constexpr std::uint64_t kSubsetSeed = 0;

/// Loads each (scale, STL) combination once and shares it across runs.
class DataCache {
 public:
  explicit DataCache(fs::path root) : root_(std::move(root)) {}

  const fs::path& root() const { return root_; }

  std::shared_ptr<const train::TrainData> get(double scale, bool with_stl) {
    std::lock_guard lock(mutex_);
    auto& slot = cache_[{scale, with_stl}];
    if (!slot) slot = std::make_shared<const train::TrainData>(train::load_train_data(root_, scale, kSubsetSeed, with_stl));
    return slot;
  }

  /// "cifar10", "synthetic" or "missing", for the record's environment note.
  std::string describe() const {
    if (!data::cifar_available(root_)) return "missing";
    return data::is_synthetic(root_) ? "synthetic" : "cifar10";
  }

 private:
  fs::path root_;
  std::mutex mutex_;
  std::map<std::pair<double, bool>, std::shared_ptr<const train::TrainData>> cache_;
};

inline std::string environment_note(const DataCache& cache, const std::string& device) {
  return "data=" + cache.describe() + " device=" + device + " compiler=" + __VERSION__;
}

/// Trains or distills the student of `c` into `run_dir`.
inline train::RunResult execute_run(const ExperimentConfig& c, const fs::path& run_dir, DataCache& cache,
                                    std::function<void(const std::string&)> log = {}) {
  c.method.validate();
  c.train.validate();
  std::vector<fs::path> teachers;
  if (c.method.uses_teacher_checkpoints()) {
    teachers = config::teacher_checkpoints(c);
    for (const auto& t : teachers)
      if (!fs::exists(t))
        throw EnvironmentError("teacher checkpoint " + t.string() + " not found (run `kdlab train-teacher` first)");
  } else if (c.method.method == train::Method::takd && !c.teacher_checkpoints.empty()) {
    teachers = c.teacher_checkpoints;
  } else if (c.method.method == train::Method::takd) {
    const fs::path t = config::default_teacher_checkpoint(c, 0);
    if (fs::exists(t)) teachers = {t};
  }
  const auto data = cache.get(c.train.dataset_scale, train::method_needs_stl(c.method.method));
  train::RunOptions options;
  options.run_dir = run_dir;
  options.config_snapshot = config::to_text(config::to_key_values(c));
  options.log = std::move(log);
  return train::distill(c.student, c.method, c.train, *data, teachers, options);
}

/// Trains teacher `index` of `c` from scratch (seed teacher_seed + index)
/// into its default checkpoint directory.
inline train::RunResult execute_teacher(const ExperimentConfig& c, std::size_t index, DataCache& cache,
                                        std::function<void(const std::string&)> log = {}) {
  const ModelSpec& spec = c.method.teacher_specs.at(index);
  train::TrainConfig t = c.train;
  t.seed = c.teacher_seed + index;
  ExperimentConfig snapshot = c;
  snapshot.student = spec;
  snapshot.method = train::MethodConfig{};
  snapshot.method.method = train::Method::nokd;
  snapshot.train = t;
  snapshot.teacher_checkpoints.clear();
  snapshot.sweep = {};
  train::RunOptions options;
  options.run_dir = config::default_teacher_checkpoint(c, index).parent_path();
  options.config_snapshot = config::to_text(config::to_key_values(snapshot));
  options.log = std::move(log);
  return train::train_baseline(spec, t, *cache.get(c.train.dataset_scale, false), options);
}

/// Best validation accuracy of each teacher architecture found under
/// `<output>/teachers/<name>-s<seed>/metrics.jsonl`, averaged over seeds.
inline std::map<std::string, double> teacher_accuracies(const fs::path& teachers_dir) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  if (!fs::exists(teachers_dir)) return {};
  for (const auto& e : fs::directory_iterator(teachers_dir)) {
    const fs::path metrics = e.path() / "metrics.jsonl";
    if (!fs::exists(metrics)) continue;
    const std::string dir = e.path().filename().string();
    const auto cut = dir.rfind("-s");
    if (cut == std::string::npos) continue;
    double best = 0;
    std::istringstream in(train::detail::read_file(metrics));
    for (std::string line; std::getline(in, line);)
      if (!line.empty()) best = std::max(best, nlohmann::json::parse(line).at("val_acc").get<double>());
    auto& slot = acc[dir.substr(0, cut)];
    slot.first += best;
    ++slot.second;
  }
  std::map<std::string, double> out;
  for (const auto& [k, v] : acc) out[k] = v.first / static_cast<double>(v.second);
  return out;
}

}  // namespace kdlab::runner

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

#include <atomic>
#include <ctime>
#include <mutex>
#include <set>
#include <thread>

#include <json.hpp>

#include "kdlab/config/config.hpp"
#include "kdlab/train/trainer.hpp"
#include "kdlab/version.hpp"

namespace kdlab::runner {

namespace fs = std::filesystem;
using config::ExperimentConfig;

inline constexpr int kRecordSchema = 1;

/// Content hash of a configuration: FNV-1a over the canonical `key=value`
/// lines, excluding the seed, the sweep axes, the label and the output root.
inline std::string fingerprint(const ExperimentConfig& c) {
  config::KeyValues kv = config::to_key_values(c);
  for (auto it = kv.begin(); it != kv.end();) {
    const std::string& k = it->first;
    if (k == "train.seed" || k == "name" || k == "output.dir" || k.rfind("sweep.", 0) == 0)
      it = kv.erase(it);
    else
      ++it;
  }
  Fnv1a h;
  for (const auto& [k, v] : kv) {
    h.update(k);
    h.update("=");
    h.update(v);
    h.update("\n");
  }
  return hex64(h.digest());
}

/// Adapts a base method configuration to `method`: fills the fields the
/// method needs with defaults and drops the ones it does not use.
/// Defaults: match all stages, feature_weight 1e-3 (sfd) or 1 (oh), stock
/// RKD weights, three copies of the first teacher for mkd, resnet20 as TA.
/// sfd and oh pair the feature term with the plain task loss (alpha = 0).
inline train::MethodConfig specialize(train::MethodConfig m, train::Method method) {
  using train::Method;
  m.method = method;
  const bool feature = method == Method::sfd || method == Method::oh || method == Method::ab;
  if (!feature) m.match.reset();
  else if (!m.match) m.match = losses::MatchStrategy{};
  if (method == Method::sfd || method == Method::oh) {
    if (!m.feature_weight) m.feature_weight = method == Method::sfd ? 1e-3 : 1.0;
    m.kd_params.alpha = 0;
  } else {
    m.feature_weight.reset();
  }
  if (method != Method::rkd) m.rkd_weights.reset();
  else if (!m.rkd_weights) m.rkd_weights.emplace();
  if (method != Method::takd) m.ta_spec.reset();
  else if (!m.ta_spec) m.ta_spec = parse_model_name("resnet20");
  if (method == Method::nokd) {
    m.teacher_specs.clear();
  } else if (method == Method::mkd) {
    if (m.teacher_specs.size() == 1) m.teacher_specs.assign(3, m.teacher_specs[0]);
  } else if (m.teacher_specs.size() > 1) {
    m.teacher_specs.resize(1);
  }
  return m;
}

struct RunConfig {
  ExperimentConfig config;
  std::string fingerprint;
  std::uint64_t seed = 0;

  std::string id() const { return fingerprint + "-s" + std::to_string(seed); }
};

/// Group keys of a run: method, teacher, alpha, temperature, student.
inline std::map<std::string, std::string> group_keys(const ExperimentConfig& c) {
  const auto& m = c.method;
  return {{"method", std::string(train::to_string(m.method))},
          {"teacher", m.teacher_specs.empty() ? "-" : m.teacher_specs[0].name()},
          {"alpha", config::format_number(m.kd_params.alpha)},
          {"temperature", config::format_number(m.kd_params.temperature)},
          {"student", c.student.name()}};
}

/// Cross product of the sweep axes. Axes are iterated in lexicographic
/// order of their names (alpha, method, seed, teacher, temperature), the
/// first one outermost; an absent axis contributes the base value.
inline std::vector<RunConfig> expand_grid(const ExperimentConfig& sweep) {
  ExperimentConfig base = sweep;
  base.sweep = {};
  base.sweep.parallelism = 1;
  const auto& ax = sweep.sweep;
  const std::vector<double> alphas = ax.alpha.empty() ? std::vector{base.method.kd_params.alpha} : ax.alpha;
  const std::vector<train::Method> methods = ax.method.empty() ? std::vector{base.method.method} : ax.method;
  const std::vector<std::uint64_t> seeds = ax.seeds.empty() ? std::vector{base.train.seed} : ax.seeds;
  std::vector<std::optional<ModelSpec>> teachers;
  for (const auto& t : ax.teacher) teachers.emplace_back(t);
  if (teachers.empty()) teachers.emplace_back();
  const std::vector<double> temps = ax.temperature.empty() ? std::vector{base.method.kd_params.temperature} : ax.temperature;

  std::vector<RunConfig> out;
  for (double alpha : alphas)
    for (train::Method method : methods)
      for (std::uint64_t seed : seeds)
        for (const auto& teacher : teachers)
          for (double temperature : temps) {
            ExperimentConfig c = base;
            if (teacher) c.method.teacher_specs = {*teacher};
            c.method = ax.method.empty() && !teacher ? c.method : specialize(c.method, method);
            if (!ax.alpha.empty()) c.method.kd_params.alpha = alpha;
            if (!ax.temperature.empty()) c.method.kd_params.temperature = temperature;
            c.train.seed = seed;
            if (teacher || !ax.method.empty()) c.teacher_checkpoints.clear();
            c.method.validate();
            out.push_back({c, fingerprint(c), seed});
          }
  return out;
}

// ---------------------------------------------------------------------------
// Records

struct ExperimentRecord {
  int schema = kRecordSchema;
  std::string fingerprint;
  std::uint64_t seed = 0;
  /// "ok" or "failed".
  std::string status = "ok";
  std::string error;
  std::map<std::string, std::string> keys;
  double best_val_accuracy = 0;
  std::size_t best_epoch = 0;
  std::vector<train::EpochRecord> history;
  double wall_time = 0;
  std::string started;
  std::string finished;
  std::string code_version = std::string("kdlab ") + kVersion;
  std::string environment;
  std::string run_dir;
  std::vector<std::string> lineage;
  std::string config;

  std::string id() const { return fingerprint + "-s" + std::to_string(seed); }
  bool ok() const { return status == "ok"; }
};

inline std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// First line: the record header; then one line per epoch.
inline std::string to_jsonl(const ExperimentRecord& r) {
  nlohmann::json head{{"schema", r.schema},         {"fingerprint", r.fingerprint}, {"seed", r.seed},
                      {"status", r.status},         {"error", r.error},             {"keys", r.keys},
                      {"best_val_accuracy", r.best_val_accuracy}, {"best_epoch", r.best_epoch},
                      {"epochs", r.history.size()}, {"wall_time", r.wall_time},     {"started", r.started},
                      {"finished", r.finished},     {"code_version", r.code_version}, {"environment", r.environment},
                      {"run_dir", r.run_dir},       {"lineage", r.lineage},         {"config", r.config}};
  std::string out = head.dump() + "\n";
  for (const auto& e : r.history) {
    nlohmann::json j{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_acc", e.val_acc},
                     {"lr", e.lr},       {"wall_time", e.wall_time},   {"phase", e.phase}};
    if (e.teacher_val_acc) j["teacher_val_acc"] = *e.teacher_val_acc;
    out += j.dump() + "\n";
  }
  return out;
}

inline ExperimentRecord from_jsonl(std::string_view text, const std::string& where) {
  std::istringstream in{std::string(text)};
  std::string line;
  ExperimentRecord r;
  try {
    if (!std::getline(in, line)) throw StorageError("empty record " + where);
    const auto h = nlohmann::json::parse(line);
    r.schema = h.at("schema").get<int>();
    if (r.schema != kRecordSchema) throw StorageError(where + ": unsupported record schema " + std::to_string(r.schema));
    r.fingerprint = h.at("fingerprint");
    r.seed = h.at("seed");
    r.status = h.at("status");
    r.error = h.at("error");
    r.keys = h.at("keys").get<std::map<std::string, std::string>>();
    r.best_val_accuracy = h.at("best_val_accuracy");
    r.best_epoch = h.at("best_epoch");
    r.wall_time = h.at("wall_time");
    r.started = h.at("started");
    r.finished = h.at("finished");
    r.code_version = h.at("code_version");
    r.environment = h.at("environment");
    r.run_dir = h.at("run_dir");
    r.lineage = h.at("lineage").get<std::vector<std::string>>();
    r.config = h.at("config");
    const std::size_t epochs = h.at("epochs");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      train::EpochRecord e;
      e.epoch = j.at("epoch");
      e.train_loss = j.at("train_loss");
      e.val_acc = j.at("val_acc");
      e.lr = j.at("lr");
      e.wall_time = j.at("wall_time");
      e.phase = j.at("phase");
      if (j.contains("teacher_val_acc")) e.teacher_val_acc = j["teacher_val_acc"].get<double>();
      r.history.push_back(e);
    }
    if (r.history.size() != epochs) throw StorageError(where + ": truncated record");
  } catch (const nlohmann::json::exception& e) {
    throw StorageError(where + ": malformed record (" + e.what() + ")");
  }
  return r;
}

/// Append-only store of one file per record under `<root>/records`. A run in
/// progress leaves `<id>.partial`; the finished record replaces it atomically
/// as `<id>.jsonl`. Leftover .partial files mark crashed runs and do not
/// count as completed.
class ResultsStore {
 public:
  explicit ResultsStore(fs::path root) : root_(std::move(root)) {}

  const fs::path& root() const { return root_; }
  fs::path records_dir() const { return root_ / "records"; }
  fs::path run_dir(const std::string& id) const { return root_ / "runs" / id; }

  /// Throws StorageError when the store cannot be written.
  void ensure_writable() const {
    try {
      fs::create_directories(records_dir());
      const fs::path probe = records_dir() / (".probe-" + std::to_string(::getpid()));
      std::ofstream(probe) << "ok";
      if (!fs::exists(probe)) throw StorageError("cannot write to " + records_dir().string());
      fs::remove(probe);
    } catch (const fs::filesystem_error& e) {
      throw StorageError("results store " + root_.string() + " is not writable: " + e.what());
    }
  }

  bool contains(const std::string& id) const { return fs::exists(records_dir() / (id + ".jsonl")); }

  void begin(const std::string& id) const {
    std::ofstream(records_dir() / (id + ".partial")) << utc_now() << "\n";
  }

  /// Persists `r`. An existing record for the same id is never touched: a
  /// forced rerun is stored next to it as `<id>.<n>.jsonl`.
  fs::path commit(const ExperimentRecord& r) const {
    fs::path target = records_dir() / (r.id() + ".jsonl");
    for (int n = 1; fs::exists(target); ++n) target = records_dir() / (r.id() + "." + std::to_string(n) + ".jsonl");
    train::detail::write_file_atomic(target, to_jsonl(r));
    fs::remove(records_dir() / (r.id() + ".partial"));
    return target;
  }

  std::vector<ExperimentRecord> load() const {
    std::vector<ExperimentRecord> out;
    if (!fs::exists(records_dir())) return out;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(records_dir()))
      if (e.path().extension() == ".jsonl") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out.push_back(from_jsonl(train::detail::read_file(f), f.string()));
    return out;
  }

  /// Ids of runs that started but never committed.
  std::vector<std::string> incomplete() const {
    std::vector<std::string> out;
    if (!fs::exists(records_dir())) return out;
    for (const auto& e : fs::directory_iterator(records_dir()))
      if (e.path().extension() == ".partial") out.push_back(e.path().stem().string());
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  fs::path root_;
};

using RunFunction = std::function<train::RunResult(const RunConfig&, const fs::path& run_dir)>;

struct SweepOptions {
  std::size_t parallelism = 1;
  /// Rerun configurations that already have a record.
  bool force = false;
  std::string environment;
  std::function<void(const std::string&)> log;
};

inline ExperimentRecord make_record(const RunConfig& rc, const train::RunResult& result, const fs::path& run_dir) {
  ExperimentRecord r;
  r.fingerprint = rc.fingerprint;
  r.seed = rc.seed;
  r.keys = group_keys(rc.config);
  r.best_val_accuracy = result.best_val_accuracy;
  r.best_epoch = result.best_epoch;
  r.history = result.history;
  r.wall_time = result.wall_time;
  r.run_dir = run_dir.string();
  r.lineage = result.lineage;
  r.config = config::to_text(config::to_key_values(rc.config));
  return r;
}

/// Executes every configuration of the grid that has no record yet, up to
/// `parallelism` at a time, persisting each record as it completes. A failing
/// run is recorded with status "failed" and does not stop the sweep. Returns
/// the records created by this call.
inline std::vector<ExperimentRecord> run_sweep(const std::vector<RunConfig>& grid, const ResultsStore& store,
                                               const RunFunction& run, const SweepOptions& options = {}) {
  if (options.parallelism == 0) throw ConfigError("parallelism must be positive");
  store.ensure_writable();
  std::vector<const RunConfig*> todo;
  std::set<std::string> seen;
  for (const auto& rc : grid) {
    if (!seen.insert(rc.id()).second) continue;
    if (!options.force && store.contains(rc.id())) continue;
    todo.push_back(&rc);
  }
  std::vector<ExperimentRecord> created(todo.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto log = [&](const std::string& s) {
    if (!options.log) return;
    std::lock_guard lock(log_mutex);
    options.log(s);
  };
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < todo.size();) {
      const RunConfig& rc = *todo[i];
      const fs::path dir = store.run_dir(rc.id());
      store.begin(rc.id());
      log("start " + rc.id());
      const std::string started = utc_now();
      ExperimentRecord rec;
      try {
        rec = make_record(rc, run(rc, dir), dir);
      } catch (const std::exception& e) {
        rec = make_record(rc, train::RunResult{}, dir);
        rec.status = "failed";
        const auto* err = dynamic_cast<const Error*>(&e);
        rec.error = std::string(err ? err->category() : "runtime") + ": " + e.what();
      }
      rec.started = started;
      rec.finished = utc_now();
      rec.environment = options.environment;
      store.commit(rec);
      log((rec.ok() ? "done  " : "FAILED ") + rc.id() + (rec.ok() ? "" : " (" + rec.error + ")"));
      created[i] = std::move(rec);
    }
  };
  const std::size_t n = std::min(options.parallelism, std::max<std::size_t>(todo.size(), 1));
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  return created;
}

}  // namespace kdlab::runner

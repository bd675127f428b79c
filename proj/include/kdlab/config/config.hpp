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

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "kdlab/train/config.hpp"

// Line-oriented configuration: one `dotted.key = value` per line, `#` starts
// a comment, lists are comma separated. Keys outside the schema are rejected.

namespace kdlab::config {

namespace fs = std::filesystem;

using KeyValues = std::map<std::string, std::string>;

struct KeyInfo {
  std::string_view key;
  std::string_view help;
};

inline constexpr KeyInfo kSchema[] = {
    {"name", "free-form run label"},
    {"student", "student architecture (resnet8, resnet20-pad, wrn16-4, ...)"},
    {"method", "nokd | kd | sfd | oh | ab | rkd | mkd | takd | uda_cifar | stl_mix | dual | unsup_stl"},
    {"teachers", "comma-separated teacher architectures"},
    {"teacher_checkpoints", "comma-separated teacher checkpoint paths (default: <output.dir>/teachers/...)"},
    {"teacher_seed", "seed of the first teacher; teacher i uses teacher_seed + i"},
    {"ta", "teacher-assistant architecture (takd)"},
    {"kd_params.alpha", "weight of the distillation term in [0, 1]"},
    {"kd_params.temperature", "softmax temperature > 0"},
    {"rkd_weights.kd", "rkd: weight of the kd term"},
    {"rkd_weights.distance", "rkd: weight of the distance term"},
    {"rkd_weights.angle", "rkd: weight of the angle term"},
    {"match.kind", "all | first_n | last_n | stride_n"},
    {"match.n", "n for first_n / last_n / stride_n"},
    {"feature_weight", "beta multiplying the feature loss (sfd, oh)"},
    {"feature_loss", "sfd feature loss: mse | cosine | kl"},
    {"phase_split", "ab: fraction of epochs spent on boundary initialization"},
    {"ab_margin", "ab: hinge margin mu"},
    {"augment.kind", "augmented view policy: randaugment | standard"},
    {"augment.n_ops", "RandAugment: operations per image"},
    {"augment.magnitude", "RandAugment: magnitude in [0, 30]"},
    {"dual.gap", "dual: teacher lead that freezes the teacher"},
    {"train.epochs", "epochs"},
    {"train.batch_size", "minibatch size"},
    {"train.lr0", "initial learning rate"},
    {"train.momentum", "SGD momentum"},
    {"train.nesterov", "Nesterov momentum (true/false)"},
    {"train.weight_decay", "L2 weight decay (not applied to normalization parameters or biases)"},
    {"train.seed", "run seed"},
    {"train.device", "device hint (cpu)"},
    {"train.dataset_scale", "fraction of the training and validation sets, (0, 1]"},
    {"output.dir", "root for run directories and records"},
    {"sweep.alpha", "sweep axis: alpha values"},
    {"sweep.temperature", "sweep axis: temperature values"},
    {"sweep.teacher", "sweep axis: teacher architectures"},
    {"sweep.method", "sweep axis: methods"},
    {"sweep.seeds", "sweep axis: seeds"},
    {"sweep.parallelism", "concurrent runs"},
};

inline bool known_key(std::string_view key) {
  for (const auto& k : kSchema)
    if (k.key == key) return true;
  return false;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

/// Parses config text; `where` names the source in error messages.
inline KeyValues parse_text(std::string_view text, const std::string& where = "<config>") {
  KeyValues kv;
  std::istringstream in{std::string(text)};
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string at = where + ":" + std::to_string(n);
    if (eq == std::string::npos) throw ConfigError(at + ": expected `key = value`");
    std::string key = trim(std::string_view(body).substr(0, eq));
    if (!known_key(key)) throw ConfigError(at + ": unknown key '" + key + "'");
    if (kv.count(key)) throw ConfigError(at + ": duplicate key '" + key + "'");
    kv[key] = trim(std::string_view(body).substr(eq + 1));
  }
  return kv;
}

inline std::string to_text(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

inline KeyValues load_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str(), path.string());
}

/// Applies one `key=value` override; the key must belong to the schema.
inline void apply_override(KeyValues& kv, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "': expected key=value");
  const std::string key = trim(assignment.substr(0, eq));
  if (!known_key(key)) throw ConfigError("override: unknown key '" + key + "'");
  kv[key] = trim(assignment.substr(eq + 1));
}

// ---------------------------------------------------------------------------
// Typed values

inline std::string format_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view key, std::string_view s) {
  double v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v))
    throw ConfigError(std::string(key) + ": expected a number, got '" + std::string(s) + "'");
  return v;
}

inline std::uint64_t parse_uint(std::string_view key, std::string_view s) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + std::string(s) + "'");
  return v;
}

inline bool parse_bool(std::string_view key, std::string_view s) {
  if (s == "true" || s == "on" || s == "1") return true;
  if (s == "false" || s == "off" || s == "0") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(s) + "'");
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (out.back().empty()) throw ConfigError("empty list element in '" + std::string(s) + "'");
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename F>
std::string join(const std::vector<F>& items, auto&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + fmt(items[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Resolved configuration

struct SweepAxes {
  std::vector<double> alpha;
  std::vector<double> temperature;
  std::vector<ModelSpec> teacher;
  std::vector<train::Method> method;
  std::vector<std::uint64_t> seeds;
  std::size_t parallelism = 1;

  bool empty() const { return alpha.empty() && temperature.empty() && teacher.empty() && method.empty() && seeds.empty(); }
  friend bool operator==(const SweepAxes&, const SweepAxes&) = default;
};

struct ExperimentConfig {
  std::string name;
  ModelSpec student;
  train::TrainConfig train;
  train::MethodConfig method;
  std::vector<fs::path> teacher_checkpoints;
  std::uint64_t teacher_seed = 0;
  fs::path output_dir = "runs";
  SweepAxes sweep;
};

inline bool operator==(const losses::MatchStrategy& a, const losses::MatchStrategy& b) {
  return a.kind == b.kind && a.n == b.n;
}

/// Default checkpoint of teacher `index` as written by `kdlab train-teacher`.
inline fs::path default_teacher_checkpoint(const ExperimentConfig& c, std::size_t index) {
  const ModelSpec& spec = c.method.teacher_specs.at(index);
  return c.output_dir / "teachers" / (spec.name() + "-s" + std::to_string(c.teacher_seed + index)) / "best.ckpt";
}

/// Explicit teacher checkpoints, or the train-teacher defaults.
inline std::vector<fs::path> teacher_checkpoints(const ExperimentConfig& c) {
  if (!c.teacher_checkpoints.empty()) return c.teacher_checkpoints;
  std::vector<fs::path> out;
  for (std::size_t i = 0; i < c.method.teacher_specs.size(); ++i) out.push_back(default_teacher_checkpoint(c, i));
  return out;
}

/// Typed view of `kv`. Validates every field; `validate_method` also checks
/// the method-specific field rules (off for sweep bases, whose methods vary).
inline ExperimentConfig resolve(const KeyValues& kv, bool validate_method = true) {
  for (const auto& [k, v] : kv)
    if (!known_key(k)) throw ConfigError("unknown key '" + k + "'");
  auto get = [&](const char* key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  ExperimentConfig c;
  if (auto v = get("name")) c.name = *v;
  if (auto v = get("student")) c.student = parse_model_name(*v);
  else throw ConfigError("student: required");

  auto& m = c.method;
  if (auto v = get("method")) m.method = train::parse_method(*v);
  if (auto v = get("teachers"))
    for (const auto& t : split_list(*v)) m.teacher_specs.push_back(parse_model_name(t));
  if (auto v = get("teacher_checkpoints"))
    for (const auto& p : split_list(*v)) c.teacher_checkpoints.emplace_back(p);
  if (auto v = get("teacher_seed")) c.teacher_seed = parse_uint("teacher_seed", *v);
  if (auto v = get("ta")) m.ta_spec = parse_model_name(*v);
  if (auto v = get("kd_params.alpha")) m.kd_params.alpha = parse_double("kd_params.alpha", *v);
  if (auto v = get("kd_params.temperature")) m.kd_params.temperature = parse_double("kd_params.temperature", *v);
  for (const char* k : {"rkd_weights.kd", "rkd_weights.distance", "rkd_weights.angle"})
    if (get(k) && !m.rkd_weights) m.rkd_weights.emplace();
  if (auto v = get("rkd_weights.kd")) m.rkd_weights->kd = parse_double("rkd_weights.kd", *v);
  if (auto v = get("rkd_weights.distance")) m.rkd_weights->distance = parse_double("rkd_weights.distance", *v);
  if (auto v = get("rkd_weights.angle")) m.rkd_weights->angle = parse_double("rkd_weights.angle", *v);
  if (auto v = get("match.kind")) m.match = losses::MatchStrategy{losses::parse_match_kind(*v), 1};
  if (auto v = get("match.n")) {
    if (!m.match) throw ConfigError("match.n: given without match.kind");
    m.match->n = parse_uint("match.n", *v);
  }
  if (auto v = get("feature_weight")) m.feature_weight = parse_double("feature_weight", *v);
  if (auto v = get("feature_loss")) m.feature_loss = losses::parse_feature_loss_kind(*v);
  if (auto v = get("phase_split")) m.phase_split = parse_double("phase_split", *v);
  if (auto v = get("ab_margin")) m.ab_margin = parse_double("ab_margin", *v);
  if (auto v = get("augment.kind")) m.augment.kind = data::parse_augment_kind(*v);
  if (auto v = get("augment.n_ops")) m.augment.n_ops = static_cast<int>(parse_uint("augment.n_ops", *v));
  if (auto v = get("augment.magnitude")) m.augment.magnitude = static_cast<int>(parse_uint("augment.magnitude", *v));
  if (auto v = get("dual.gap")) m.dual_gap = parse_double("dual.gap", *v);

  auto& t = c.train;
  if (auto v = get("train.epochs")) t.epochs = parse_uint("train.epochs", *v);
  if (auto v = get("train.batch_size")) t.batch_size = parse_uint("train.batch_size", *v);
  if (auto v = get("train.lr0")) t.lr0 = parse_double("train.lr0", *v);
  if (auto v = get("train.momentum")) t.momentum = parse_double("train.momentum", *v);
  if (auto v = get("train.nesterov")) t.nesterov = parse_bool("train.nesterov", *v);
  if (auto v = get("train.weight_decay")) t.weight_decay = parse_double("train.weight_decay", *v);
  if (auto v = get("train.seed")) t.seed = parse_uint("train.seed", *v);
  if (auto v = get("train.device")) t.device = *v;
  if (auto v = get("train.dataset_scale")) t.dataset_scale = parse_double("train.dataset_scale", *v);
  if (auto v = get("output.dir")) c.output_dir = *v;

  auto& s = c.sweep;
  auto axis = [&](const char* key, auto&& parse, auto& out) {
    if (auto v = get(key)) {
      for (const auto& item : split_list(*v)) out.push_back(parse(item));
      if (out.empty()) throw ConfigError(std::string(key) + ": sweep axis must not be empty");
    }
  };
  axis("sweep.alpha", [](const std::string& x) { return parse_double("sweep.alpha", x); }, s.alpha);
  axis("sweep.temperature", [](const std::string& x) { return parse_double("sweep.temperature", x); }, s.temperature);
  axis("sweep.teacher", [](const std::string& x) { return parse_model_name(x); }, s.teacher);
  axis("sweep.method", [](const std::string& x) { return train::parse_method(x); }, s.method);
  axis("sweep.seeds", [](const std::string& x) { return parse_uint("sweep.seeds", x); }, s.seeds);
  if (auto v = get("sweep.parallelism")) s.parallelism = parse_uint("sweep.parallelism", *v);
  if (s.parallelism == 0) throw ConfigError("sweep.parallelism: must be positive");

  t.validate();
  if (!c.teacher_checkpoints.empty() && c.teacher_checkpoints.size() != m.teacher_specs.size())
    throw ConfigError("teacher_checkpoints: " + std::to_string(c.teacher_checkpoints.size()) + " paths for " +
                      std::to_string(m.teacher_specs.size()) + " teachers");
  if (validate_method) m.validate();
  for (double a : s.alpha)
    if (!(a >= 0 && a <= 1)) throw ConfigError("sweep.alpha: values must lie in [0, 1]");
  for (double x : s.temperature)
    if (!(x > 0)) throw ConfigError("sweep.temperature: values must be positive");
  return c;
}

/// Canonical key/value form: every non-optional field spelled out, optional
/// ones only when present. resolve(to_key_values(c)) reproduces c.
inline KeyValues to_key_values(const ExperimentConfig& c) {
  KeyValues kv;
  const auto& m = c.method;
  const auto& t = c.train;
  if (!c.name.empty()) kv["name"] = c.name;
  kv["student"] = c.student.name();
  kv["method"] = std::string(train::to_string(m.method));
  auto spec_name = [](const ModelSpec& s) { return s.name(); };
  if (!m.teacher_specs.empty()) kv["teachers"] = join(m.teacher_specs, spec_name);
  if (!c.teacher_checkpoints.empty())
    kv["teacher_checkpoints"] = join(c.teacher_checkpoints, [](const fs::path& p) { return p.string(); });
  kv["teacher_seed"] = std::to_string(c.teacher_seed);
  if (m.ta_spec) kv["ta"] = m.ta_spec->name();
  kv["kd_params.alpha"] = format_number(m.kd_params.alpha);
  kv["kd_params.temperature"] = format_number(m.kd_params.temperature);
  if (m.rkd_weights) {
    kv["rkd_weights.kd"] = format_number(m.rkd_weights->kd);
    kv["rkd_weights.distance"] = format_number(m.rkd_weights->distance);
    kv["rkd_weights.angle"] = format_number(m.rkd_weights->angle);
  }
  if (m.match) {
    kv["match.kind"] = std::string(losses::to_string(m.match->kind));
    kv["match.n"] = std::to_string(m.match->n);
  }
  if (m.feature_weight) kv["feature_weight"] = format_number(*m.feature_weight);
  kv["feature_loss"] = std::string(losses::to_string(m.feature_loss));
  kv["phase_split"] = format_number(m.phase_split);
  kv["ab_margin"] = format_number(m.ab_margin);
  kv["augment.kind"] = std::string(data::to_string(m.augment.kind));
  kv["augment.n_ops"] = std::to_string(m.augment.n_ops);
  kv["augment.magnitude"] = std::to_string(m.augment.magnitude);
  kv["dual.gap"] = format_number(m.dual_gap);
  kv["train.epochs"] = std::to_string(t.epochs);
  kv["train.batch_size"] = std::to_string(t.batch_size);
  kv["train.lr0"] = format_number(t.lr0);
  kv["train.momentum"] = format_number(t.momentum);
  kv["train.nesterov"] = t.nesterov ? "true" : "false";
  kv["train.weight_decay"] = format_number(t.weight_decay);
  kv["train.seed"] = std::to_string(t.seed);
  kv["train.device"] = t.device;
  kv["train.dataset_scale"] = format_number(t.dataset_scale);
  kv["output.dir"] = c.output_dir.string();
  const auto& s = c.sweep;
  if (!s.alpha.empty()) kv["sweep.alpha"] = join(s.alpha, format_number);
  if (!s.temperature.empty()) kv["sweep.temperature"] = join(s.temperature, format_number);
  if (!s.teacher.empty()) kv["sweep.teacher"] = join(s.teacher, spec_name);
  if (!s.method.empty())
    kv["sweep.method"] = join(s.method, [](train::Method x) { return std::string(train::to_string(x)); });
  if (!s.seeds.empty()) kv["sweep.seeds"] = join(s.seeds, [](std::uint64_t x) { return std::to_string(x); });
  kv["sweep.parallelism"] = std::to_string(s.parallelism);
  return kv;
}

}  // namespace kdlab::config

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

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "kdlab/core/hash.hpp"
#include "kdlab/models/model.hpp"

// Binary layout, little-endian:
//   "KDLABCKP" | u32 version | str spec | u64 n_meta | (str key, str value)*
//   | u64 n_tensors | (str name, u64 rank, u64 dims[rank], f32 data[])* | u64 fnv1a(all previous bytes)
// where str = u64 length + bytes.

namespace kdlab::train {

namespace fs = std::filesystem;

inline constexpr char kCheckpointMagic[8] = {'K', 'D', 'L', 'A', 'B', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelSpec spec;
  /// Parameters and buffers by name.
  std::map<std::string, Tensor<float>> tensors;
  std::map<std::string, std::string> meta;
};

inline Checkpoint capture(Model<float>& model, std::map<std::string, std::string> meta = {}) {
  Checkpoint ckpt{model.spec(), {}, std::move(meta)};
  for (const auto* p : model.parameters()) ckpt.tensors.emplace(p->name, p->value);
  for (const auto& b : model.buffers()) ckpt.tensors.emplace(b.name, *b.tensor);
  return ckpt;
}

/// Copies checkpoint tensors into `model`; spec, names and shapes must agree.
inline void restore(const Checkpoint& ckpt, Model<float>& model) {
  if (!(ckpt.spec == model.spec()))
    throw ConfigError("checkpoint holds a " + ckpt.spec.name() + ", expected " + model.spec().name());
  std::size_t used = 0;
  auto load = [&](const std::string& name, Tensor<float>& dst) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw StorageError("checkpoint is missing tensor " + name);
    require_shape(dst.shape(), it->second.shape(), name);
    dst = it->second;
    ++used;
  };
  for (auto* p : model.parameters()) load(p->name, p->value);
  for (auto& b : model.buffers()) load(b.name, *b.tensor);
  if (used != ckpt.tensors.size()) throw StorageError("checkpoint holds tensors the model does not have");
}

namespace detail {

class Writer {
 public:
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void str(std::string_view s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes, std::string where) : bytes_(bytes), where_(std::move(where)) {}
  void raw(void* p, std::size_t n) {
    if (n > bytes_.size() - pos_) throw StorageError("truncated checkpoint " + where_);
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    if (n > bytes_.size() - pos_) throw StorageError("truncated checkpoint " + where_);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
  std::string where_;
};

/// Writes `contents` to a sibling temporary file, then renames it into place.
inline void write_file_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw StorageError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

inline std::string serialize(const Checkpoint& ckpt) {
  detail::Writer w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::uint32_t version = kCheckpointVersion;
  w.raw(&version, sizeof version);
  w.str(ckpt.spec.name());
  w.u64(ckpt.meta.size());
  for (const auto& [k, v] : ckpt.meta) {
    w.str(k);
    w.str(v);
  }
  w.u64(ckpt.tensors.size());
  for (const auto& [name, t] : ckpt.tensors) {
    w.str(name);
    w.u64(t.rank());
    for (std::size_t d : t.shape()) w.u64(d);
    w.raw(t.data(), t.size() * sizeof(float));
  }
  Fnv1a h;
  h.update(w.bytes());
  w.u64(h.digest());
  return w.bytes();
}

inline Checkpoint deserialize(std::string_view bytes, const std::string& where = "<memory>") {
  if (bytes.size() < sizeof kCheckpointMagic + 12 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw StorageError(where + " is not a kdlab checkpoint");
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), 8);
  Fnv1a h;
  h.update(body);
  if (h.digest() != stored) throw StorageError("checkpoint " + where + " is corrupt (checksum mismatch)");
  detail::Reader r(body.substr(8), where);
  std::uint32_t version;
  r.raw(&version, sizeof version);
  if (version != kCheckpointVersion)
    throw StorageError("checkpoint " + where + " has unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.spec = parse_model_name(r.str());
  for (std::uint64_t n = r.u64(); n > 0; --n) {
    std::string k = r.str();
    ckpt.meta[k] = r.str();
  }
  for (std::uint64_t n = r.u64(); n > 0; --n) {
    std::string name = r.str();
    Shape shape(r.u64());
    for (auto& d : shape) d = r.u64();
    Tensor<float> t(shape);
    r.raw(t.data(), t.size() * sizeof(float));
    ckpt.tensors.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) throw StorageError("checkpoint " + where + " has trailing bytes");
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  detail::write_file_atomic(path, serialize(ckpt));
}

/// Loads a checkpoint; when `expected` is given the stored spec must match it.
inline Checkpoint load_checkpoint(const fs::path& path, const std::optional<ModelSpec>& expected = std::nullopt) {
  if (!fs::exists(path)) throw StorageError("checkpoint not found: " + path.string());
  Checkpoint ckpt = deserialize(detail::read_file(path), path.string());
  if (expected && !(ckpt.spec == *expected))
    throw ConfigError("checkpoint " + path.string() + " holds a " + ckpt.spec.name() + ", expected " + expected->name());
  return ckpt;
}

inline Model<float> load_model(const fs::path& path, const std::optional<ModelSpec>& expected = std::nullopt) {
  const Checkpoint ckpt = load_checkpoint(path, expected);
  Model<float> model(ckpt.spec);
  restore(ckpt, model);
  return model;
}

/// FNV-1a over every parameter and buffer (names and values).
inline std::uint64_t parameter_hash(Model<float>& model) {
  Fnv1a h;
  for (const auto* p : model.parameters()) {
    h.update(p->name);
    h.update_values(p->value.values());
  }
  for (const auto& b : model.buffers()) {
    h.update(b.name);
    h.update_values(std::span<const float>(b.tensor->values()));
  }
  return h.digest();
}

}  // namespace kdlab::train

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
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "kdlab/core/random.hpp"
#include "kdlab/data/image.hpp"

namespace kdlab::data {

namespace fs = std::filesystem;

inline constexpr std::size_t kStlSide = 96;
inline constexpr const char* kCifarDir = "cifar-10-batches-bin";
inline constexpr const char* kStlDir = "stl10_binary";

enum class Split { train, test };

/// Dataset root: $KDLAB_DATA_DIR if set, else ./data.
inline fs::path default_data_dir() {
  if (const char* env = std::getenv("KDLAB_DATA_DIR"); env && *env) return env;
  return "data";
}

/// True when `root` holds a dataset written by the synthetic generator
/// rather than the published archives.
inline bool is_synthetic(const fs::path& root) { return fs::exists(root / "SYNTHETIC"); }

inline std::vector<fs::path> cifar_files(const fs::path& root, Split split) {
  const fs::path dir = root / kCifarDir;
  if (split == Split::test) return {dir / "test_batch.bin"};
  std::vector<fs::path> files;
  for (int i = 1; i <= 5; ++i) files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  return files;
}

inline bool cifar_available(const fs::path& root) {
  for (auto split : {Split::train, Split::test})
    for (const auto& f : cifar_files(root, split))
      if (!fs::exists(f)) return false;
  return true;
}

/// Appends the records of one CIFAR-10 binary batch file
/// (per record: 1 label byte then 3072 bytes of R, G, B planes).
inline void read_cifar_file(const fs::path& file, ImageDataset& out) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw EnvironmentError("cannot open " + file.string() + "; run `kdlab fetch-data` first");
  const auto bytes = fs::file_size(file);
  if (bytes % (kImageBytes + 1) != 0) throw StorageError(file.string() + ": size is not a whole number of records");
  std::vector<std::uint8_t> buf(kImageBytes + 1);
  for (std::uintmax_t r = 0; r < bytes / (kImageBytes + 1); ++r) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw StorageError(file.string() + ": truncated record");
    if (buf[0] > 9) throw StorageError(file.string() + ": label byte out of range");
    out.push_back(std::span<const std::uint8_t>(buf).subspan(1), buf[0]);
  }
}

inline ImageDataset load_cifar10(const fs::path& root, Split split) {
  ImageDataset ds;
  for (const auto& f : cifar_files(root, split)) {
    if (!fs::exists(f))
      throw EnvironmentError("CIFAR-10 file missing: " + f.string() +
                             " (set KDLAB_DATA_DIR or run `kdlab fetch-data`)");
    read_cifar_file(f, ds);
  }
  return ds;
}

inline void write_cifar_file(const fs::path& file, const ImageDataset& ds, std::size_t begin, std::size_t end) {
  if (ds.height != kSide || ds.width != kSide || !ds.labeled())
    throw ShapeError("write_cifar_file: expects a labeled 32x32 dataset");
  fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  for (std::size_t i = begin; i < end; ++i) {
    const char label = static_cast<char>(ds.labels[i]);
    out.write(&label, 1);
    out.write(reinterpret_cast<const char*>(ds.view(i).data()), static_cast<std::streamsize>(kImageBytes));
  }
  if (!out) throw StorageError("failed writing " + file.string());
}

/// Bilinear resize with half-pixel centers (no antialiasing), rounded to bytes.
inline Image8 bilinear_resize(const Image8& src, std::size_t height, std::size_t width) {
  Image8 out(height, width);
  const double sy = static_cast<double>(src.height) / static_cast<double>(height);
  const double sx = static_cast<double>(src.width) / static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::max(0.0, (static_cast<double>(y) + 0.5) * sy - 0.5);
    const std::size_t y0 = std::min(static_cast<std::size_t>(fy), src.height - 1), y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::max(0.0, (static_cast<double>(x) + 0.5) * sx - 0.5);
      const std::size_t x0 = std::min(static_cast<std::size_t>(fx), src.width - 1), x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < kChannels; ++c) {
        const double v = (1 - wy) * ((1 - wx) * src.at(c, y0, x0) + wx * src.at(c, y0, x1)) +
                         wy * ((1 - wx) * src.at(c, y1, x0) + wx * src.at(c, y1, x1));
        out.at(c, y, x) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

inline fs::path stl_unlabeled_file(const fs::path& root) { return root / kStlDir / "unlabeled_X.bin"; }
inline bool stl_available(const fs::path& root) { return fs::exists(stl_unlabeled_file(root)); }

/// Reads up to `max_images` (0 = all) unlabeled STL-10 images and resizes
/// them to 32x32. The file stores each channel as a column-major 96x96 plane.
inline ImageDataset load_stl10_unlabeled(const fs::path& root, std::size_t max_images = 0) {
  const fs::path file = stl_unlabeled_file(root);
  std::ifstream in(file, std::ios::binary);
  if (!in) throw EnvironmentError("STL-10 file missing: " + file.string() + " (run `kdlab fetch-data`)");
  const std::size_t record = kChannels * kStlSide * kStlSide;
  const auto bytes = fs::file_size(file);
  if (bytes % record != 0) throw StorageError(file.string() + ": size is not a whole number of images");
  std::size_t count = bytes / record;
  if (max_images) count = std::min(count, max_images);
  ImageDataset ds;
  ds.pixels.reserve(count * kImageBytes);
  std::vector<std::uint8_t> buf(record);
  Image8 big(kStlSide, kStlSide);
  for (std::size_t i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(record));
    if (!in) throw StorageError(file.string() + ": truncated image");
    for (std::size_t c = 0; c < kChannels; ++c)
      for (std::size_t x = 0; x < kStlSide; ++x)
        for (std::size_t y = 0; y < kStlSide; ++y) big.at(c, y, x) = buf[(c * kStlSide + x) * kStlSide + y];
    ds.push_back(bilinear_resize(big, kSide, kSide).pixels);
  }
  return ds;
}

/// Writes 96x96 images in the STL-10 binary layout.
inline void write_stl_file(const fs::path& file, const std::vector<Image8>& images) {
  fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  std::vector<std::uint8_t> buf(kChannels * kStlSide * kStlSide);
  for (const auto& img : images) {
    if (img.height != kStlSide || img.width != kStlSide) throw ShapeError("write_stl_file: images must be 96x96");
    for (std::size_t c = 0; c < kChannels; ++c)
      for (std::size_t x = 0; x < kStlSide; ++x)
        for (std::size_t y = 0; y < kStlSide; ++y) buf[(c * kStlSide + x) * kStlSide + y] = img.at(c, y, x);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw StorageError("failed writing " + file.string());
}

inline ImageDataset select(const ImageDataset& ds, std::span<const std::size_t> indices) {
  ImageDataset out;
  out.height = ds.height;
  out.width = ds.width;
  out.num_classes = ds.num_classes;
  out.pixels.reserve(indices.size() * ds.image_bytes());
  for (std::size_t i : indices) out.push_back(ds.view(i), ds.labeled() ? ds.labels[i] : -1);
  return out;
}

/// Deterministic subsample with `total / classes` images of every class,
/// kept in source order. Unlabeled sets get a plain random subsample.
inline ImageDataset stratified_subset(const ImageDataset& ds, std::size_t total, std::uint64_t seed) {
  if (total == 0) throw ConfigError("subset size must be positive");
  Rng rng = make_rng(seed, 0x5ab5e7);
  std::vector<std::size_t> keep;
  if (!ds.labeled()) {
    if (total > ds.size()) throw ConfigError("subset of " + std::to_string(total) + " exceeds the " +
                                             std::to_string(ds.size()) + " available images");
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    shuffle(std::span(idx), rng);
    keep.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(total));
  } else {
    const std::size_t per_class = total / ds.num_classes;
    if (per_class == 0) throw ConfigError("subset of " + std::to_string(total) + " leaves no image per class");
    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
      auto& members = by_class[c];
      if (members.size() < per_class)
        throw ConfigError("class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                          " images, subset needs " + std::to_string(per_class));
      shuffle(std::span(members), rng);
      keep.insert(keep.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(per_class));
    }
  }
  std::sort(keep.begin(), keep.end());
  return select(ds, keep);
}

/// stratified_subset with round(scale * size) images; scale 1 returns a copy.
inline ImageDataset scaled_subset(const ImageDataset& ds, double scale, std::uint64_t seed) {
  if (!(scale > 0 && scale <= 1)) throw ConfigError("dataset_scale must lie in (0, 1], got " + std::to_string(scale));
  if (scale == 1) return ds;
  return stratified_subset(ds, static_cast<std::size_t>(std::llround(scale * static_cast<double>(ds.size()))), seed);
}

}  // namespace kdlab::data

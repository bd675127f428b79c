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

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <set>

#include "kdlab/data/fetch.hpp"
#include "kdlab/data/loaders.hpp"
#include "kdlab/data/synthetic.hpp"

namespace kdlab::data {
namespace {

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("kdlab_data_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++))) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  static inline int counter_ = 0;
  fs::path path_;
};

Image8 random_image(std::uint64_t seed, std::size_t side = kSide) {
  Image8 img(side, side);
  Rng rng(seed);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(uniform_index(rng, 256));
  return img;
}

ImageDataset toy_dataset(std::size_t n, std::uint64_t seed, bool labeled = true) {
  ImageDataset ds;
  for (std::size_t i = 0; i < n; ++i) ds.push_back(random_image(seed * 1000 + i).pixels, labeled ? int(i % 10) : -1);
  return ds;
}

float& px(Tensor<float>& t, std::size_t c, std::size_t y, std::size_t x) { return t[(c * 32 + y) * 32 + x]; }
float px(const Tensor<float>& t, std::size_t c, std::size_t y, std::size_t x) { return t[(c * 32 + y) * 32 + x]; }

// Left half bright, right half dark, in every channel.
Tensor<float> half_marker() {
  Tensor<float> t({3, 32, 32});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 16; ++x) px(t, c, y, x) = 1.0f;
  return t;
}

// Whether an augmented half_marker was mirrored: column 8 of the output maps
// to source columns 4..12 unflipped and 19..27 flipped.
bool looks_flipped(const Tensor<float>& out) { return out[(0 * 32 + 16) * 32 + 8] < 0; }

// ---------------------------------------------------------------------------

TEST(Normalization, ZeroImageAndRoundTrip) {
  const auto z = validation_transform(Tensor<float>({3, 32, 32}));
  for (std::size_t c = 0; c < 3; ++c) EXPECT_FLOAT_EQ(z[c * 1024 + 17], -kCifarMean[c] / kCifarStd[c]);

  const auto x = to_unit(random_image(1));
  const auto back = denormalize(normalize(x));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(back[i], x[i], 1e-6);
  EXPECT_NE(validation_transform(validation_transform(x)), validation_transform(x));
  EXPECT_THROW(normalize(Tensor<float>({1, 32, 32})), ShapeError);
}

TEST(StandardAugment, CentreCropWithoutFlipIsNormalization) {
  const auto x = to_unit(random_image(2));
  EXPECT_EQ(standard_augment(x, StandardDraw{false, 4, 4}), normalize(x));
}

TEST(StandardAugment, CornerCropShowsPadding) {
  const auto x = to_unit(random_image(3));
  const auto norm = normalize(x);
  const auto out = standard_augment(x, StandardDraw{false, 0, 0});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t xx = 0; xx < 32; ++xx) {
        const float expected = (y < 4 || xx < 4) ? 0.0f : px(norm, c, y - 4, xx - 4);
        ASSERT_EQ(px(out, c, y, xx), expected) << c << "," << y << "," << xx;
      }
}

TEST(StandardAugment, FlipMirrorsColumns) {
  const auto x = to_unit(random_image(4));
  const auto norm = normalize(x);
  const auto out = standard_augment(x, StandardDraw{true, 4, 4});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t xx = 0; xx < 32; ++xx) ASSERT_EQ(px(out, c, y, xx), px(norm, c, y, 31 - xx));
}

TEST(StandardAugment, DeterministicAndValidated) {
  const auto x = to_unit(random_image(5));
  Rng a(9), b(9);
  EXPECT_EQ(standard_augment(x, a), standard_augment(x, b));
  Rng r(1);
  EXPECT_THROW(standard_augment(Tensor<float>({3, 28, 28}), r), ShapeError);
}

TEST(StandardAugment, FlipRateIsOneHalf) {
  const auto marker = half_marker();
  Rng rng(10);
  int flipped = 0;
  for (int i = 0; i < 10000; ++i) flipped += looks_flipped(standard_augment(marker, rng));
  EXPECT_NEAR(flipped / 10000.0, 0.5, 0.02);
}

// ---------------------------------------------------------------------------

TEST(RandAugment, IdentityCases) {
  const auto img = random_image(11);
  Rng rng(1);
  EXPECT_EQ(randaugment(img, {AugmentKind::randaugment, 0, 10}, rng), img);
  EXPECT_EQ(apply_op(apply_op(img, RandOp::identity, 0), RandOp::identity, 0), img);
  for (RandOp op : kRandOps)
    if (op != RandOp::solarize && op != RandOp::autocontrast && op != RandOp::equalize)
      EXPECT_EQ(apply_op(img, op, op_strength(op, 0)), img) << static_cast<int>(op);
}

TEST(RandAugment, RejectsBadPolicies) {
  Rng rng(1);
  const auto img = random_image(12);
  EXPECT_THROW(randaugment(img, {AugmentKind::randaugment, 2, 31}, rng), ConfigError);
  EXPECT_THROW(randaugment(img, {AugmentKind::randaugment, 2, -1}, rng), ConfigError);
  EXPECT_THROW(randaugment(img, {AugmentKind::standard, 2, 10}, rng), ConfigError);
}

TEST(RandAugment, RotationMatchesForwardOracle) {
  // Isolated marker pixels; a 30 degree counter-clockwise rotation about the
  // centre moves (dx, dy) to (dx cos + dy sin, -dx sin + dy cos) on screen.
  Image8 img;
  const std::vector<std::pair<int, int>> markers = {{20, 16}, {24, 10}, {10, 22}, {16, 6}, {5, 15}};
  for (auto [x, y] : markers) img.at(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 255;
  EXPECT_DOUBLE_EQ(op_strength(RandOp::rotate, 30), 30.0);
  const Image8 out = apply_op(img, RandOp::rotate, op_strength(RandOp::rotate, 30));
  const double t = std::numbers::pi / 6, c = 15.5;
  for (auto [x, y] : markers) {
    const double dx = x - c, dy = y - c;
    const double ex = c + dx * std::cos(t) + dy * std::sin(t), ey = c - dx * std::sin(t) + dy * std::cos(t);
    bool found = false;
    for (int yy = 0; yy < 32; ++yy)
      for (int xx = 0; xx < 32; ++xx)
        if (out.at(0, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) == 255 &&
            std::abs(xx - ex) <= 1.0 && std::abs(yy - ey) <= 1.0)
          found = true;
    EXPECT_TRUE(found) << "marker (" << x << "," << y << ") expected near (" << ex << "," << ey << ")";
  }
}

TEST(RandAugment, PhotometricOps) {
  const auto img = random_image(13);
  const Image8 inv = apply_op(img, RandOp::solarize, op_strength(RandOp::solarize, 30));
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_EQ(inv.pixels[i], 255 - img.pixels[i]);

  EXPECT_DOUBLE_EQ(op_strength(RandOp::posterize, 30), 4.0);
  for (auto p : apply_op(img, RandOp::posterize, 4.0).pixels) EXPECT_EQ(p & 0x0F, 0);

  Image8 dull(32, 32);
  for (std::size_t i = 0; i < dull.pixels.size(); ++i) dull.pixels[i] = static_cast<std::uint8_t>(100 + i % 21);
  const Image8 ac = apply_op(dull, RandOp::autocontrast, 0);
  EXPECT_EQ(*std::min_element(ac.pixels.begin(), ac.pixels.end()), 0);
  EXPECT_EQ(*std::max_element(ac.pixels.begin(), ac.pixels.end()), 255);

  Image8 two(32, 32);
  for (std::size_t i = 0; i < two.pixels.size(); ++i) two.pixels[i] = (i % 2) ? 120 : 130;
  const Image8 eq = apply_op(two, RandOp::equalize, 0);
  EXPECT_NE(eq, two);

  const Image8 dark = apply_op(img, RandOp::brightness, -0.9);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_LE(dark.pixels[i], img.pixels[i]);
  const Image8 gray = apply_op(img, RandOp::color, -1.0);
  EXPECT_EQ(gray.at(0, 5, 5), gray.at(2, 5, 5));
}

TEST(RandAugment, TranslateShiftsContent) {
  const auto img = random_image(14);
  const Image8 out = apply_op(img, RandOp::translate_x, 3.0);
  for (std::size_t y = 0; y < 32; ++y) {
    for (std::size_t x = 0; x < 3; ++x) EXPECT_EQ(out.at(1, y, x), 0);
    for (std::size_t x = 3; x < 32; ++x) EXPECT_EQ(out.at(1, y, x), img.at(1, y, x - 3));
  }
}

TEST(RandAugment, DeterministicAndShapePreserving) {
  const auto img = random_image(15);
  const AugmentPolicy p{AugmentKind::randaugment, 3, 20};
  Rng a(5), b(5);
  const Image8 x = randaugment(img, p, a), y = randaugment(img, p, b);
  EXPECT_EQ(x, y);
  EXPECT_EQ(x.pixels.size(), img.pixels.size());
}

// ---------------------------------------------------------------------------

TEST(PairedLoader, BatchesAreAlignedAndDeterministic) {
  const auto ds = toy_dataset(30, 1);
  PairedLoader a(ds, {}, 8, 42), b(ds, {}, 8, 42), c(ds, {}, 8, 43);
  EXPECT_EQ(a.num_batches(), 4u);
  const auto ba = a.batch(0);
  ASSERT_EQ(ba.size(), 8u);
  EXPECT_EQ(ba.clean.shape(), (Shape{8, 3, 32, 32}));
  for (std::size_t e = 0; e < 2; ++e) {
    a.start_epoch(e);
    b.start_epoch(e);
    for (std::size_t i = 0; i < a.num_batches(); ++i) {
      const auto x = a.batch(i), y = b.batch(i);
      EXPECT_EQ(x.clean, y.clean);
      EXPECT_EQ(x.augmented, y.augmented);
      EXPECT_EQ(x.labels, y.labels);
    }
  }
  a.start_epoch(0);
  EXPECT_NE(a.batch(0).labels, c.batch(0).labels);
}

TEST(PairedLoader, CleanViewIsNormalizationOnlyAndPairsShareSource) {
  const auto ds = toy_dataset(20, 2);
  PairedLoader loader(ds, {AugmentKind::randaugment, 2, 10}, 5, 7);
  std::multiset<std::uint64_t> seen;
  for (std::size_t b = 0; b < loader.num_batches(); ++b) {
    const auto batch = loader.batch(b);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto pair = batch.pair(i);
      // Locate the source image from the clean view.
      const auto raw = denormalize(pair.clean);
      std::size_t src = ds.size();
      for (std::size_t k = 0; k < ds.size() && src == ds.size(); ++k) {
        bool match = true;
        for (std::size_t j = 0; j < raw.size() && match; ++j) match = std::abs(raw[j] - ds.view(k)[j] / 255.0f) <= 1e-6f;
        if (match) src = k;
      }
      ASSERT_LT(src, ds.size());
      EXPECT_EQ(*pair.label, ds.labels[src]);
      EXPECT_EQ(pair.clean, validation_transform(ds.image(src)));
      seen.insert(src);
    }
  }
  EXPECT_EQ(seen.size(), ds.size());
  EXPECT_EQ(std::set<std::uint64_t>(seen.begin(), seen.end()).size(), ds.size());
}

TEST(PairedLoader, StandardPolicyFlipsAboutHalf) {
  ImageDataset ds;
  Image8 marker;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 16; ++x) marker.at(c, y, x) = 255;
  for (int i = 0; i < 10; ++i) ds.push_back(marker.pixels, i);
  PairedLoader loader(ds, {}, 10, 3);
  int flipped = 0, total = 0;
  for (std::size_t e = 0; e < 1000; ++e) {
    loader.start_epoch(e);
    const auto b = loader.batch(0);
    for (std::size_t i = 0; i < b.size(); ++i, ++total) flipped += looks_flipped(b.pair(i).augmented);
  }
  EXPECT_EQ(total, 10000);
  EXPECT_NEAR(flipped / double(total), 0.5, 0.02);
}

TEST(PairedLoader, RejectsEmptyDataset) {
  const ImageDataset empty;
  EXPECT_THROW(PairedLoader(empty, {}, 4, 1), ConfigError);
}

TEST(MixedLoader, BalancedBatchesAndEpochLength) {
  const auto cifar = toy_dataset(10, 3), stl = toy_dataset(6, 4, false);
  MixedLoader loader(cifar, stl, 4, {}, 11);
  EXPECT_EQ(loader.num_batches(), 5u);  // ceil(10 / 2)
  std::multiset<int> labels;
  for (std::size_t b = 0; b < loader.num_batches(); ++b) {
    const auto mb = loader.batch(b);
    EXPECT_EQ(mb.cifar.size(), 2u);
    EXPECT_EQ(mb.stl.size(), mb.cifar.size());
    for (const auto& l : mb.stl.labels) EXPECT_FALSE(l.has_value());
    for (const auto& l : mb.cifar.labels) labels.insert(*l);
  }
  EXPECT_EQ(labels.size(), 10u);
  EXPECT_EQ(std::set<int>(labels.begin(), labels.end()).size(), 10u);

  const auto c64 = toy_dataset(64, 5), s100 = toy_dataset(100, 6, false);
  MixedLoader wide(c64, s100, 64, {}, 1);
  EXPECT_EQ(wide.num_batches(), 4u);
  for (std::size_t b = 0; b < wide.num_batches(); ++b) {
    const auto mb = wide.batch(b);
    EXPECT_EQ(mb.cifar.size(), mb.stl.size());
    EXPECT_EQ(mb.cifar.size(), b < 3 ? 32u : 4u);
  }
  EXPECT_THROW(MixedLoader(cifar, stl, 5, {}, 1), ConfigError);
}

TEST(TrainAndEvalLoaders, CoverTheDatasetOnce) {
  const auto ds = toy_dataset(23, 7);
  TrainLoader train(ds, 5, 9);
  EXPECT_EQ(train.num_batches(), 5u);
  std::multiset<int> labels;
  for (std::size_t b = 0; b < train.num_batches(); ++b)
    for (int l : train.batch(b).labels) labels.insert(l);
  std::multiset<int> expected(ds.labels.begin(), ds.labels.end());
  EXPECT_EQ(labels, expected);

  EvalLoader eval(ds, 10);
  const auto b0 = eval.batch(0);
  EXPECT_EQ(b0.images.slice0(3, 4).reshaped({3, 32, 32}), validation_transform(ds.image(3)));
  EXPECT_EQ(eval.batch(2).size(), 3u);
}

// ---------------------------------------------------------------------------

TEST(Datasets, CifarFilesRoundTrip) {
  TempDir dir;
  const auto ds = toy_dataset(12, 8);
  for (int i = 1; i <= 5; ++i)
    write_cifar_file(dir.path() / kCifarDir / ("data_batch_" + std::to_string(i) + ".bin"), ds, 0, 2);
  write_cifar_file(dir.path() / kCifarDir / "test_batch.bin", ds, 0, ds.size());
  EXPECT_TRUE(cifar_available(dir.path()));
  const auto test = load_cifar10(dir.path(), Split::test);
  EXPECT_EQ(test.pixels, ds.pixels);
  EXPECT_EQ(test.labels, ds.labels);
  EXPECT_EQ(load_cifar10(dir.path(), Split::train).size(), 10u);
  EXPECT_THROW(load_cifar10(dir.path() / "missing", Split::test), EnvironmentError);
}

TEST(Datasets, StlReaderHandlesColumnMajorPlanesAndResizes) {
  TempDir dir;
  Image8 big(96, 96);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 96; ++y)
      for (std::size_t x = 0; x < 96; ++x) big.at(c, y, x) = static_cast<std::uint8_t>((x * 2 + y * 7 + c * 50) % 256);
  write_stl_file(stl_unlabeled_file(dir.path()), {big, big});
  // Raw layout check: first plane is column-major.
  std::ifstream in(stl_unlabeled_file(dir.path()), std::ios::binary);
  std::vector<std::uint8_t> head(2);
  in.read(reinterpret_cast<char*>(head.data()), 2);
  EXPECT_EQ(head[1], big.at(0, 1, 0));

  const auto ds = load_stl10_unlabeled(dir.path(), 1);
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_FALSE(ds.labeled());
  // A 3x bilinear downscale with half-pixel centres samples source pixel 3i + 1 exactly.
  const Image8 small = ds.image(0);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x) ASSERT_EQ(small.at(c, y, x), big.at(c, 3 * y + 1, 3 * x + 1));
}

TEST(Datasets, BilinearResizeInterpolates) {
  Image8 src(2, 2);
  for (std::size_t c = 0; c < 3; ++c) {
    src.at(c, 0, 0) = 0;
    src.at(c, 0, 1) = 100;
    src.at(c, 1, 0) = 100;
    src.at(c, 1, 1) = 200;
  }
  const Image8 up = bilinear_resize(src, 4, 4);
  // Output pixel (1, 1) sits at source coordinate (0.25, 0.25).
  EXPECT_EQ(up.at(0, 1, 1), 50);
  EXPECT_EQ(up.at(0, 0, 0), 0);
  EXPECT_EQ(up.at(0, 3, 3), 200);
}

TEST(Datasets, StratifiedSubsetIsBalancedAndSeeded) {
  const auto ds = toy_dataset(200, 9);
  const auto a = stratified_subset(ds, 50, 1), b = stratified_subset(ds, 50, 1), c = stratified_subset(ds, 50, 2);
  ASSERT_EQ(a.size(), 50u);
  std::vector<int> counts(10);
  for (int l : a.labels) ++counts[static_cast<std::size_t>(l)];
  for (int n : counts) EXPECT_EQ(n, 5);
  EXPECT_EQ(a.pixels, b.pixels);
  EXPECT_NE(a.pixels, c.pixels);
  EXPECT_THROW(stratified_subset(ds, 300, 1), ConfigError);
  EXPECT_EQ(scaled_subset(ds, 0.5, 3).size(), 100u);
  EXPECT_THROW(scaled_subset(ds, 0.0, 3), ConfigError);
  EXPECT_EQ(stratified_subset(toy_dataset(20, 1, false), 7, 1).size(), 7u);
}

TEST(Datasets, SyntheticDatasetLoadsThroughTheStandardReaders) {
  TempDir dir;
  write_synthetic_dataset(dir.path(), {100, 20, 8}, 5);
  EXPECT_TRUE(is_synthetic(dir.path()));
  const auto train = load_cifar10(dir.path(), Split::train);
  EXPECT_EQ(train.size(), 100u);
  std::vector<int> counts(10);
  for (int l : train.labels) ++counts[static_cast<std::size_t>(l)];
  for (int n : counts) EXPECT_EQ(n, 10);
  EXPECT_EQ(load_cifar10(dir.path(), Split::test).size(), 20u);
  EXPECT_EQ(load_stl10_unlabeled(dir.path()).size(), 8u);

  TempDir again;
  write_synthetic_dataset(again.path(), {100, 20, 8}, 5);
  EXPECT_EQ(load_cifar10(again.path(), Split::train).pixels, train.pixels);
}

// ---------------------------------------------------------------------------

TEST(Fetch, Md5OfKnownContent) {
  TempDir dir;
  std::ofstream(dir.path() / "abc") << "abc";
  EXPECT_EQ(md5_file(dir.path() / "abc"), "900150983cd24fb0d6963f7d28e17f72");
}

TEST(Fetch, ExtractsTarGzAndChecksChecksums) {
  TempDir dir;
  fs::create_directories(dir.path() / "src" / "inner");
  std::ofstream(dir.path() / "src" / "inner" / "a.bin") << std::string(1500, 'x');
  std::ofstream(dir.path() / "src" / "b.txt") << "hello";
  const std::string cmd = "tar -czf '" + (dir.path() / "pack.tar.gz").string() + "' -C '" +
                          (dir.path() / "src").string() + "' inner b.txt";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_EQ(extract_tar_gz(dir.path() / "pack.tar.gz", dir.path() / "out"), 2u);
  std::ifstream a(dir.path() / "out" / "inner" / "a.bin");
  EXPECT_EQ(std::string(std::istreambuf_iterator<char>(a), {}), std::string(1500, 'x'));

  ArchiveSpec spec{"toy", "http://invalid.invalid/x", "pack.tar.gz", "00000000000000000000000000000000"};
  EXPECT_THROW(fetch_archive(spec, dir.path() / "root", dir.path() / "pack.tar.gz"), StorageError);
  spec.md5 = md5_file(dir.path() / "pack.tar.gz");
  fetch_archive(spec, dir.path() / "root", dir.path() / "pack.tar.gz");
  EXPECT_TRUE(fs::exists(dir.path() / "root" / "b.txt"));
  EXPECT_THROW(fetch_archive(spec, dir.path() / "root", dir.path() / "nope.tar.gz"), EnvironmentError);
}

}  // namespace
}  // namespace kdlab::data

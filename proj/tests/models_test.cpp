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

#include "kdlab/models/model.hpp"

namespace kdlab {
namespace {

struct PinnedArchitecture {
  const char* name;
  std::size_t params;
  std::size_t layers;  // 0 = not pinned
};

// Parameter and layer counts of the reference architectures.
constexpr PinnedArchitecture kPinned[] = {
    {"resnet8", 89322, 31},   {"resnet20", 283754, 67},   {"resnet26", 380970, 85},  {"resnet10", 4903242, 0},
    {"resnet18", 11173962, 62}, {"wrn10-1", 77850, 34}, {"wrn16-4", 2748890, 56},
};

TEST(ModelZoo, ParameterCountsMatchReferenceTable) {
  for (const auto& arch : kPinned) {
    auto model = build_model(parse_model_name(arch.name));
    EXPECT_EQ(count_parameters(model).total, arch.params) << arch.name;
    EXPECT_EQ(count_parameters(model).trainable, arch.params) << arch.name;
    if (arch.layers) EXPECT_EQ(count_layers(model), arch.layers) << arch.name;
  }
}

// Option-A (identity-pad) CIFAR ResNets, enumerated by hand:
// stem 3*9*16 + 32 = 464; per identity block 2*9*c*c + 4c;
// downsampling block 9*c_in*c + 9*c*c + 4c; classifier 64*10 + 10.
TEST(ModelZoo, IdentityPadCountsFollowHandEnumeration) {
  auto block = [](std::size_t cin, std::size_t c) { return 9 * cin * c + 9 * c * c + 4 * c; };
  for (int n : {1, 3, 9}) {
    std::size_t expected = 464 + 650;
    for (int b = 0; b < n; ++b) {
      expected += block(16, 16);
      expected += block(b == 0 ? 16 : 32, 32);
      expected += block(b == 0 ? 32 : 64, 64);
    }
    ModelSpec spec{Family::resnet_3stage, 6 * n + 2, 1, 10, Shortcut::identity_pad};
    auto model = build_model(spec);
    EXPECT_EQ(count_parameters(model).total, expected) << spec.name();
  }
  EXPECT_EQ(count_parameters(*std::make_unique<Model<float>>(parse_model_name("resnet20-pad"))).total, 269722u);
}

TEST(ModelZoo, CountIsSeedInvariant) {
  auto a = build_model(parse_model_name("resnet20"), 1);
  auto b = build_model(parse_model_name("resnet20"), 99);
  EXPECT_EQ(count_parameters(a).total, count_parameters(b).total);
}

TEST(ModelZoo, RejectsUnsupportedSpecsNamingTheField) {
  auto expect_field = [](ModelSpec spec, const std::string& field) {
    try {
      build_model(spec);
      FAIL() << "expected ConfigError for " << field;
    } catch (const ConfigError& e) {
      EXPECT_EQ(std::string(e.what()).rfind(field, 0), 0u) << e.what();
    }
  };
  expect_field({Family::resnet_3stage, 9, 1, 10, Shortcut::projection}, "depth");
  expect_field({Family::resnet_4stage, 34, 1, 10, Shortcut::projection}, "depth");
  expect_field({Family::resnet_4stage, 18, 1, 10, Shortcut::identity_pad}, "shortcut");
  expect_field({Family::wide_resnet, 16, 0, 10, Shortcut::projection}, "width_multiplier");
  expect_field({Family::resnet_3stage, 8, 1, 0, Shortcut::projection}, "num_classes");
  EXPECT_THROW(parse_model_name("vgg16"), ConfigError);
}

TEST(ModelZoo, ModelNamesRoundTrip) {
  for (const char* name : {"resnet8", "resnet26", "resnet20-pad", "resnet18", "resnet10", "wrn16-4", "wrn10-1"})
    EXPECT_EQ(parse_model_name(name).name(), name);
}

Tensor<float> random_batch(std::size_t n, std::uint64_t seed) {
  Tensor<float> x({n, 3, 32, 32});
  Rng rng(seed);
  for (auto& v : x.values()) v = static_cast<float>(standard_normal(rng));
  return x;
}

TEST(ModelZoo, ForwardShapesAndTaps) {
  auto r8 = build_model(parse_model_name("resnet8"));
  auto out = forward_with_features(r8, random_batch(4, 1));
  EXPECT_EQ(out.logits.shape(), (Shape{4, 10}));
  ASSERT_EQ(out.features.size(), 3u);
  EXPECT_EQ(out.features[0].shape(), (Shape{4, 16, 32, 32}));
  EXPECT_EQ(out.features[1].shape(), (Shape{4, 32, 16, 16}));
  EXPECT_EQ(out.features[2].shape(), (Shape{4, 64, 8, 8}));
  EXPECT_EQ(out.taps[2], (TapDescriptor{2, 64, 8, 8}));

  auto r18 = build_model(parse_model_name("resnet18"));
  auto out18 = forward_with_features(r18, random_batch(2, 2));
  ASSERT_EQ(out18.features.size(), 4u);
  EXPECT_EQ(out18.features[3].shape(), (Shape{2, 512, 4, 4}));

  auto wrn = build_model(parse_model_name("wrn10-1"));
  auto outw = forward_with_features(wrn, random_batch(2, 3));
  ASSERT_EQ(outw.features.size(), 3u);
  EXPECT_EQ(outw.features[0].shape(), (Shape{2, 16, 32, 32}));
  EXPECT_EQ(outw.features[2].shape(), (Shape{2, 64, 8, 8}));
}

TEST(ModelZoo, TapChannelsAreNonDecreasing) {
  for (const char* name : {"resnet8", "resnet18", "wrn16-4", "resnet20-pad"}) {
    auto m = build_model(parse_model_name(name));
    auto out = forward_with_features(m, random_batch(1, 4));
    for (std::size_t i = 1; i < out.taps.size(); ++i) EXPECT_LE(out.taps[i - 1].channels, out.taps[i].channels) << name;
  }
}

TEST(ModelZoo, FeaturesArePreActivation) {
  // Post-ReLU maps would be non-negative everywhere.
  auto m = build_model(parse_model_name("resnet8"), 5);
  auto out = forward_with_features(m, random_batch(2, 6));
  for (const auto& f : out.features) {
    bool any_negative = false;
    for (float v : f.values()) any_negative |= v < 0;
    EXPECT_TRUE(any_negative);
  }
}

TEST(ModelZoo, EvalForwardIsPure) {
  auto m = build_model(parse_model_name("resnet8"), 7);
  auto x = random_batch(3, 8);
  auto a = forward_with_features(m, x);
  auto b = forward_with_features(m, x);
  EXPECT_EQ(a.logits, b.logits);
  for (std::size_t i = 0; i < a.features.size(); ++i) EXPECT_EQ(a.features[i], b.features[i]);
}

TEST(ModelZoo, ZeroImageGivesFiniteLogits) {
  auto m = build_model(parse_model_name("resnet8"), 3);
  Tensor<float> zeros({4, 3, 32, 32});
  for (float v : forward_with_features(m, zeros).logits.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(ModelZoo, WrongInputShapeReportsBothShapes) {
  auto m = build_model(parse_model_name("resnet8"));
  try {
    forward_with_features(m, Tensor<float>({2, 1, 28, 28}));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("3 x 32 x 32"), std::string::npos);
    EXPECT_NE(msg.find("[2x1x28x28]"), std::string::npos);
  }
}

// Whole-network backward against central differences in double precision.
double numeric_loss(Model<double>& m, const Tensor<double>& x, const Tensor<double>& w_logits,
                    const std::vector<Tensor<double>>& w_feats) {
  auto out = m.forward(x, nn::Mode::train);
  double l = 0;
  for (std::size_t i = 0; i < out.logits.size(); ++i) l += out.logits[i] * w_logits[i];
  for (std::size_t s = 0; s < w_feats.size(); ++s)
    if (!w_feats[s].empty())
      for (std::size_t i = 0; i < out.features[s].size(); ++i) l += out.features[s][i] * w_feats[s][i];
  return l;
}

void check_network_gradient(const char* name) {
  Model<double> m(parse_model_name(name), 11);
  Tensor<double> x({2, 3, 32, 32});
  Rng rng(12);
  for (auto& v : x.values()) v = standard_normal(rng);
  auto probe = m.forward(x, nn::Mode::train);
  Tensor<double> wl(probe.logits.shape());
  for (auto& v : wl.values()) v = standard_normal(rng);
  std::vector<Tensor<double>> wf(probe.features.size());
  for (std::size_t s = 0; s < wf.size(); s += 2) {
    wf[s] = Tensor<double>(probe.features[s].shape());
    for (auto& v : wf[s].values()) v = 0.01 * standard_normal(rng);
  }
  m.zero_grad();
  m.backward(wl, wf);
  auto params = m.parameters();
  int checked = 0;
  for (auto* p : params) {
    for (std::size_t idx : {std::size_t{0}, p->value.size() / 2, p->value.size() - 1}) {
      const double saved = p->value[idx];
      const double h = 1e-7;  // small enough that no ReLU input crosses zero
      p->value[idx] = saved + h;
      const double up = numeric_loss(m, x, wl, wf);
      p->value[idx] = saved - h;
      const double down = numeric_loss(m, x, wl, wf);
      p->value[idx] = saved;
      const double fd = (up - down) / (2 * h);
      const double an = p->grad[idx];
      EXPECT_NEAR(an, fd, 1e-5 * std::max(1.0, std::abs(fd))) << name << " " << p->name << "[" << idx << "]";
      ++checked;
    }
  }
  EXPECT_GT(checked, 30);
}

TEST(ModelZoo, BackwardMatchesFiniteDifferencesResNet) { check_network_gradient("resnet8"); }
TEST(ModelZoo, BackwardMatchesFiniteDifferencesIdentityPad) { check_network_gradient("resnet8-pad"); }
TEST(ModelZoo, BackwardMatchesFiniteDifferencesWide) { check_network_gradient("wrn10-1"); }

}  // namespace
}  // namespace kdlab

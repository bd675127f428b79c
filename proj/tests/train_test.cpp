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

#include <json.hpp>

#include "kdlab/data/synthetic.hpp"
#include "kdlab/train/trainer.hpp"
#include "support/temp_dir.hpp"

namespace kdlab::train {
namespace {

using testing::TempDir;

const ModelSpec kResNet8 = parse_model_name("resnet8");

TrainData toy_data(std::size_t train = 40, std::size_t val = 20, std::size_t stl = 0) {
  TrainData d{data::detail::synthetic_split(train, 7, 0), data::detail::synthetic_split(val, 7, 1), std::nullopt};
  if (stl) {
    d.stl = data::detail::synthetic_split(stl, 7, 2);
    d.stl->labels.clear();
  }
  return d;
}

TrainConfig toy_config(std::size_t epochs = 2, std::size_t batch = 16) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = batch;
  c.seed = 3;
  return c;
}

MethodConfig kd_method(double alpha = 0.5, double temperature = 5) {
  MethodConfig m;
  m.method = Method::kd;
  m.kd_params = {alpha, temperature};
  m.teacher_specs = {kResNet8};
  return m;
}

// ---------------------------------------------------------------------------
// Schedule

TEST(LrSchedule, Epochs150) {
  const TrainConfig c = [] { TrainConfig t; t.epochs = 150; return t; }();
  EXPECT_DOUBLE_EQ(lr_at_epoch(c, 0), 0.1);
  EXPECT_DOUBLE_EQ(lr_at_epoch(c, 48), 0.1);
  EXPECT_DOUBLE_EQ(lr_at_epoch(c, 49), 0.1 * 0.1);
  EXPECT_DOUBLE_EQ(lr_at_epoch(c, 98), 0.1 * 0.1);
  EXPECT_DOUBLE_EQ(lr_at_epoch(c, 99), 0.1 * 0.01);
  EXPECT_DOUBLE_EQ(lr_at_epoch(c, 120), 0.1 * 0.01);
  EXPECT_DOUBLE_EQ(lr_at_epoch(c, 149), 0.1 * 0.01);
}

TEST(LrSchedule, DropEpochs) {
  for (auto [epochs, first, second] : {std::tuple{150, 49, 99}, {200, 66, 132}, {350, 115, 231}}) {
    TrainConfig c;
    c.epochs = static_cast<std::size_t>(epochs);
    std::vector<std::size_t> drops;
    for (std::size_t e = 1; e < c.epochs; ++e)
      if (lr_at_epoch(c, e) < lr_at_epoch(c, e - 1)) drops.push_back(e);
    EXPECT_EQ(drops, (std::vector<std::size_t>{static_cast<std::size_t>(first), static_cast<std::size_t>(second)}))
        << "epochs " << epochs;
  }
}

TEST(LrSchedule, OutOfRange) {
  TrainConfig c;
  c.epochs = 10;
  EXPECT_THROW(lr_at_epoch(c, 10), DomainError);
  EXPECT_NO_THROW(lr_at_epoch(c, 9));
}

// ---------------------------------------------------------------------------
// Optimizer

TEST(Sgd, MatchesReferenceUpdate) {
  nn::Parameter<float> w("w", {2}, true), b("b", {1}, false);
  w.value[0] = 1.0f;
  w.value[1] = -2.0f;
  b.value[0] = 0.5f;
  SGD<float> sgd({&w, &b}, {0.9, true, 0.1});
  double rw = 1.0, rb = 0.5, vw = 0, vb = 0;
  for (int step = 0; step < 3; ++step) {
    const float gw = 0.3f * static_cast<float>(step + 1), gb = -0.2f;
    w.grad[0] = gw;
    b.grad[0] = gb;
    sgd.step(0.05);
    sgd.zero_grad();
    const double dw = gw + 0.1 * rw, db = gb;  // no decay on b
    vw = step == 0 ? dw : 0.9 * vw + dw;
    vb = step == 0 ? db : 0.9 * vb + db;
    rw -= 0.05 * (dw + 0.9 * vw);
    rb -= 0.05 * (db + 0.9 * vb);
    EXPECT_NEAR(w.value[0], rw, 1e-6);
    EXPECT_NEAR(b.value[0], rb, 1e-6);
  }
  EXPECT_EQ(w.grad[0], 0.0f);
}

TEST(Sgd, PlainMomentumAndFrozen) {
  nn::Parameter<float> w("w", {1}, false), h("fc.weight", {1}, true);
  w.value[0] = 1;
  h.value[0] = 1;
  SGD<float> sgd({&w, &h}, {0.5, false, 0.0});
  for (int i = 0; i < 2; ++i) {
    w.grad[0] = 1;
    h.grad[0] = 1;
    sgd.step(0.1, [](const nn::Parameter<float>& p) { return detail::is_head(p); });
  }
  EXPECT_FLOAT_EQ(w.value[0], 1 - 0.1f - 0.1f * 1.5f);
  EXPECT_FLOAT_EQ(h.value[0], 1.0f);
}

// ---------------------------------------------------------------------------
// Configuration rules

TEST(MethodConfigRules, RequiredAndForbiddenFields) {
  MethodConfig kd = kd_method();
  EXPECT_NO_THROW(kd.validate());
  kd.feature_weight = 1.0;
  EXPECT_THROW(kd.validate(), ConfigError);

  MethodConfig sfd = kd_method();
  sfd.method = Method::sfd;
  EXPECT_THROW(sfd.validate(), ConfigError);
  sfd.match = losses::MatchStrategy{};
  EXPECT_THROW(sfd.validate(), ConfigError);
  sfd.feature_weight = 1e-3;
  EXPECT_NO_THROW(sfd.validate());

  MethodConfig rkd = kd_method();
  rkd.method = Method::rkd;
  EXPECT_THROW(rkd.validate(), ConfigError);
  rkd.rkd_weights.emplace();
  EXPECT_NO_THROW(rkd.validate());

  MethodConfig mkd = kd_method();
  mkd.method = Method::mkd;
  EXPECT_THROW(mkd.validate(), ConfigError);
  mkd.teacher_specs.assign(3, kResNet8);
  EXPECT_NO_THROW(mkd.validate());

  MethodConfig takd = kd_method();
  takd.method = Method::takd;
  EXPECT_THROW(takd.validate(), ConfigError);
  takd.ta_spec = kResNet8;
  EXPECT_NO_THROW(takd.validate());

  MethodConfig nokd;
  nokd.method = Method::nokd;
  EXPECT_NO_THROW(nokd.validate());
  nokd.teacher_specs = {kResNet8};
  EXPECT_THROW(nokd.validate(), ConfigError);

  MethodConfig bad = kd_method(1.5);
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(MethodConfigRules, ParseMethodNames) {
  for (Method m : kAllMethods) EXPECT_EQ(parse_method(to_string(m)), m);
  EXPECT_THROW(parse_method("hinton"), ConfigError);
}

TEST(TrainConfigRules, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.dataset_scale = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.dataset_scale = 1;
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

// ---------------------------------------------------------------------------
// Evaluation and checkpoints

TEST(Evaluate, ConstantClassScoresOneTenth) {
  Model<float> model(kResNet8, 1);
  for (auto* p : model.parameters()) p->value.fill(0.0f);
  for (auto* p : model.parameters())
    if (p->name == "linear.bias") p->value[4] = 1.0f;
  const auto val = data::detail::synthetic_split(100, 1, 1);
  EXPECT_EQ(evaluate(model, val, 32), 0.10);
}

TEST(Evaluate, UntrainedIsNearChance) {
  Model<float> model(kResNet8, 5);
  const auto val = data::detail::synthetic_split(200, 2, 1);
  const double acc = evaluate(model, val);
  EXPECT_GE(acc, 0.05);
  EXPECT_LE(acc, 0.20);
  EXPECT_EQ(acc, evaluate(model, val, 17));
}

TEST(Evaluate, Accuracy) {
  const std::vector<int> p{1, 2, 3, 4}, y{1, 2, 0, 4};
  EXPECT_DOUBLE_EQ(accuracy(p, y), 0.75);
  EXPECT_THROW(accuracy(p, std::vector<int>{1}), ShapeError);
}

TEST(Checkpoint, RoundTripReproducesAccuracy) {
  TempDir dir;
  const TrainData d = toy_data();
  RunOptions o;
  o.run_dir = dir.path() / "run";
  const RunResult r = train_baseline(kResNet8, toy_config(1), d, o);
  Model<float> reloaded = load_model(r.checkpoint, kResNet8);
  EXPECT_EQ(evaluate(reloaded, d.val), r.best_val_accuracy);
  EXPECT_EQ(hex64(parameter_hash(reloaded)), r.checkpoint_id);
  Model<float> again = load_model(r.checkpoint);
  EXPECT_EQ(parameter_hash(again), parameter_hash(reloaded));
}

TEST(Checkpoint, RejectsMismatchAndCorruption) {
  TempDir dir;
  Model<float> model(kResNet8, 2);
  const fs::path file = dir.path() / "m.ckpt";
  save_checkpoint(capture(model, {{"note", "x"}}), file);
  EXPECT_EQ(load_checkpoint(file).meta.at("note"), "x");
  EXPECT_THROW(load_checkpoint(file, parse_model_name("resnet20")), ConfigError);
  Model<float> other(parse_model_name("resnet20"));
  EXPECT_THROW(restore(load_checkpoint(file), other), ConfigError);

  std::string bytes = detail::read_file(file);
  bytes[bytes.size() / 2] ^= 0x5a;
  EXPECT_THROW(deserialize(bytes), StorageError);
  EXPECT_THROW(deserialize("not a checkpoint"), StorageError);
  EXPECT_THROW(load_checkpoint(dir.path() / "missing.ckpt"), StorageError);
}

TEST(Checkpoint, IncludesBatchNormBuffers) {
  Model<float> model(kResNet8, 2);
  const Checkpoint c = capture(model);
  EXPECT_EQ(c.tensors.size(), model.parameters().size() + model.buffers().size());
  EXPECT_GT(model.buffers().size(), 0u);
}

// ---------------------------------------------------------------------------
// Training runs

TEST(Training, RunDirectoryLayout) {
  TempDir dir;
  RunOptions o;
  o.run_dir = dir.path() / "r";
  o.config_snapshot = "student = resnet8\n";
  const TrainConfig c = toy_config(2);
  const RunResult r = train_baseline(kResNet8, c, toy_data(), o);
  for (const char* f : {"config.cfg", "metrics.jsonl", "best.ckpt", "final.ckpt"})
    EXPECT_TRUE(fs::exists(*o.run_dir / f)) << f;
  EXPECT_EQ(detail::read_file(*o.run_dir / "config.cfg"), o.config_snapshot);
  std::ifstream in(*o.run_dir / "metrics.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* k : {"epoch", "train_loss", "val_acc", "lr", "wall_time"}) EXPECT_TRUE(j.contains(k)) << k;
    EXPECT_EQ(j["epoch"].get<std::size_t>(), n);
    EXPECT_EQ(j["lr"].get<double>(), r.history[n].lr);
    EXPECT_EQ(j["train_loss"].get<double>(), r.history[n].train_loss);
    ++n;
  }
  EXPECT_EQ(n, c.epochs);
}

TEST(Training, HistoryInvariants) {
  const TrainConfig c = toy_config(3);
  const RunResult r = train_baseline(kResNet8, c, toy_data());
  ASSERT_EQ(r.history.size(), c.epochs);
  double best = 0;
  for (std::size_t e = 0; e < c.epochs; ++e) {
    EXPECT_EQ(r.history[e].lr, lr_at_epoch(c, e));
    best = std::max(best, r.history[e].val_acc);
  }
  EXPECT_EQ(r.best_val_accuracy, best);
  EXPECT_TRUE(r.checkpoint.empty());
  ASSERT_TRUE(r.best_state);
}

TEST(Training, SameSeedSameHistory) {
  const TrainData d = toy_data();
  const RunResult a = train_baseline(kResNet8, toy_config(), d);
  const RunResult b = train_baseline(kResNet8, toy_config(), d);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    EXPECT_EQ(a.history[e].train_loss, b.history[e].train_loss);
    EXPECT_EQ(a.history[e].val_acc, b.history[e].val_acc);
  }
  EXPECT_EQ(a.checkpoint_id, b.checkpoint_id);
  TrainConfig other = toy_config();
  other.seed = 4;
  EXPECT_NE(train_baseline(kResNet8, other, d).history[0].train_loss, a.history[0].train_loss);
}

TEST(Training, KdWithAlphaZeroEqualsBaseline) {
  const TrainData d = toy_data();
  Model<float> teacher(kResNet8, 99);
  const RunResult base = train_baseline(kResNet8, toy_config(), d);
  const RunResult kd = distill_with(kResNet8, kd_method(0.0), toy_config(), d, {&teacher});
  ASSERT_EQ(base.history.size(), kd.history.size());
  for (std::size_t e = 0; e < base.history.size(); ++e) {
    EXPECT_EQ(base.history[e].train_loss, kd.history[e].train_loss);
    EXPECT_EQ(base.history[e].val_acc, kd.history[e].val_acc);
  }
  EXPECT_EQ(base.checkpoint_id, kd.checkpoint_id);
}

TEST(Training, TeacherUnchangedByDistillation) {
  TempDir dir;
  Model<float> teacher(kResNet8, 11);
  const fs::path ckpt = dir.path() / "teacher.ckpt";
  save_checkpoint(capture(teacher), ckpt);
  const std::string before = detail::read_file(ckpt);
  const fs::path paths[] = {ckpt};
  const RunResult r = distill(kResNet8, kd_method(), toy_config(1), toy_data(), paths);
  EXPECT_EQ(detail::read_file(ckpt), before);
  ASSERT_EQ(r.lineage.size(), 1u);
  EXPECT_EQ(r.lineage[0], hex64(parameter_hash(teacher)));
}

TEST(Training, MethodMismatchFailsBeforeTraining) {
  TempDir dir;
  RunOptions o;
  o.run_dir = dir.path() / "never";
  MethodConfig m = kd_method();
  m.teacher_specs.clear();
  EXPECT_THROW(distill(kResNet8, m, toy_config(), toy_data(), {}, o), ConfigError);
  m = kd_method();
  EXPECT_THROW(distill(kResNet8, m, toy_config(), toy_data(), {}, o), ConfigError);
  const fs::path wrong[] = {dir.path() / "missing.ckpt"};
  EXPECT_THROW(distill(kResNet8, m, toy_config(), toy_data(), wrong, o), StorageError);
  EXPECT_FALSE(fs::exists(*o.run_dir));
}

TEST(Training, MissingDataIsEnvironmentError) {
  TempDir dir;
  EXPECT_THROW(load_train_data(dir.path(), 1.0, 0, false), EnvironmentError);
  EXPECT_THROW(train_baseline(kResNet8, toy_config(), TrainData{}), EnvironmentError);
  MethodConfig m = kd_method();
  m.method = Method::unsup_stl;
  Model<float> teacher(kResNet8);
  EXPECT_THROW(distill_with(kResNet8, m, toy_config(), toy_data(), {&teacher}), EnvironmentError);
}

TEST(Training, LoadsScaledSyntheticData) {
  TempDir dir;
  data::write_synthetic_dataset(dir.path(), {100, 50, 30}, 1);
  const TrainData d = load_train_data(dir.path(), 0.5, 0, true);
  EXPECT_EQ(d.train.size(), 50u);
  EXPECT_EQ(d.val.size(), 20u);  // 25 rounded down to whole classes
  ASSERT_TRUE(d.stl);
  EXPECT_EQ(d.stl->size(), 15u);
  EXPECT_FALSE(d.stl->labeled());
}

// Every single-student method runs an epoch with finite losses.
class MethodSmoke : public ::testing::TestWithParam<Method> {};

TEST_P(MethodSmoke, OneEpoch) {
  MethodConfig m = kd_method();
  m.method = GetParam();
  switch (m.method) {
    case Method::sfd:
    case Method::oh:
      m.match = losses::MatchStrategy{};
      m.feature_weight = 1e-2;
      break;
    case Method::ab: m.match = losses::MatchStrategy{losses::MatchKind::last_n, 2}; break;
    case Method::rkd: m.rkd_weights.emplace(); break;
    case Method::mkd: m.teacher_specs.assign(2, kResNet8); break;
    default: break;
  }
  std::vector<Model<float>> teachers;
  for (std::size_t i = 0; i < m.teacher_specs.size(); ++i) teachers.emplace_back(m.teacher_specs[i], 20 + i);
  std::vector<Model<float>*> ptrs;
  for (auto& t : teachers) ptrs.push_back(&t);
  const TrainData d = toy_data(40, 20, 24);
  const RunResult r = distill_with(kResNet8, m, toy_config(m.method == Method::ab ? 2 : 1), d, ptrs);
  for (const auto& e : r.history) {
    EXPECT_TRUE(std::isfinite(e.train_loss));
    EXPECT_GE(e.train_loss, 0.0);
  }
}

INSTANTIATE_TEST_SUITE_P(AllMethods, MethodSmoke,
                         ::testing::Values(Method::kd, Method::sfd, Method::oh, Method::ab, Method::rkd, Method::mkd,
                                           Method::uda_cifar, Method::stl_mix, Method::unsup_stl),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(Training, SfdStagesMustBeReducible) {
  MethodConfig m = kd_method();
  m.method = Method::sfd;
  m.match = losses::MatchStrategy{};
  m.feature_weight = 1e-3;
  m.teacher_specs = {parse_model_name("resnet18")};
  Model<float> teacher(m.teacher_specs[0]);
  EXPECT_THROW(distill_with(kResNet8, m, toy_config(1), toy_data(), {&teacher}), AdaptationError);
}

TEST(Pipelines, AbTwoPhaseFreezesHeadThenRunsKd) {
  MethodConfig m = kd_method();
  m.method = Method::ab;
  m.match = losses::MatchStrategy{};
  m.phase_split = 0.6;
  Model<float> teacher(kResNet8, 4);
  std::vector<std::vector<float>> head_after;
  RunOptions o;
  o.on_epoch = [&](std::size_t, Model<float>& model) {
    std::vector<float> head;
    for (auto* p : model.parameters())
      if (detail::is_head(*p)) head.insert(head.end(), p->value.values().begin(), p->value.values().end());
    head_after.push_back(head);
  };
  const RunResult r = train_ab_two_phase(kResNet8, teacher, m, toy_config(5), toy_data(), o);
  ASSERT_TRUE(r.phase_boundary);
  EXPECT_EQ(*r.phase_boundary, 3u);
  ASSERT_EQ(r.history.size(), 5u);
  for (std::size_t e = 0; e < 5; ++e) EXPECT_EQ(r.history[e].phase, e < 3 ? "ab-init" : "kd");
  EXPECT_EQ(head_after[0], head_after[2]);
  EXPECT_NE(head_after[2], head_after[3]);
  Model<float> init(kResNet8, toy_config(5).seed);
  std::vector<float> head0;
  for (auto* p : init.parameters())
    if (detail::is_head(*p)) head0.insert(head0.end(), p->value.values().begin(), p->value.values().end());
  EXPECT_EQ(head0, head_after[0]);
}

TEST(Pipelines, TakdChainLinksThreeRuns) {
  TempDir dir;
  RunOptions o;
  o.run_dir = dir.path() / "takd";
  TakdConfig cfg{toy_config(1), {0.5, 5}, std::nullopt};
  const auto r = distill_takd(parse_model_name("resnet14"), kResNet8, kResNet8, cfg, toy_data(), o);
  EXPECT_EQ(r.teacher.history.size(), 1u);
  ASSERT_EQ(r.assistant.lineage.size(), 1u);
  ASSERT_EQ(r.student.lineage.size(), 1u);
  EXPECT_EQ(r.assistant.lineage[0], r.teacher.checkpoint_id);
  EXPECT_EQ(r.student.lineage[0], r.assistant.checkpoint_id);
  for (const char* sub : {"teacher", "assistant", "student"}) EXPECT_TRUE(fs::exists(*o.run_dir / sub / "best.ckpt"));
  EXPECT_THROW(distill_takd(kResNet8, std::nullopt, kResNet8, cfg, toy_data()), ConfigError);

  // A pretrained teacher is loaded, not retrained.
  TakdConfig loaded = cfg;
  loaded.teacher_checkpoint = r.teacher.checkpoint;
  const auto r2 = distill_takd(parse_model_name("resnet14"), kResNet8, kResNet8, loaded, toy_data());
  EXPECT_TRUE(r2.teacher.history.empty());
  EXPECT_EQ(r2.teacher.checkpoint_id, r.teacher.checkpoint_id);
  EXPECT_EQ(r2.assistant.lineage[0], r.teacher.checkpoint_id);
}

TEST(Pipelines, DualTrainFreezesWhenGapReached) {
  MethodConfig m = kd_method();
  m.method = Method::dual;
  m.dual_gap = 0.0;
  const RunResult r = dual_train(parse_model_name("resnet14"), kResNet8, m, toy_config(3), toy_data());
  ASSERT_FALSE(r.history.empty());
  std::optional<std::size_t> first;
  for (const auto& e : r.history)
    if (!first && *e.teacher_val_acc - e.val_acc >= m.dual_gap) first = e.epoch;
  EXPECT_EQ(r.freeze_epoch, first);
  ASSERT_TRUE(r.freeze_epoch);  // this seed's teacher leads after the first epoch
  {
    for (const auto& e : r.history) {
      EXPECT_EQ(e.phase, e.epoch > *r.freeze_epoch ? "kd" : "joint");
      if (e.epoch > *r.freeze_epoch)
        EXPECT_EQ(*e.teacher_val_acc, *r.history[*r.freeze_epoch].teacher_val_acc);
    }
    EXPECT_EQ(r.lineage.size(), 1u);
  }
}

TEST(Pipelines, DualTrainNeverFreezesWithoutLead) {
  MethodConfig m = kd_method();
  m.method = Method::dual;
  m.dual_gap = 0.99;
  const RunResult r = dual_train(kResNet8, kResNet8, m, toy_config(2), toy_data());
  EXPECT_FALSE(r.freeze_epoch);
  EXPECT_EQ(r.history.size(), 2u);
  for (const auto& e : r.history) EXPECT_EQ(e.phase, "joint");
}

TEST(Smoke, LossDecreasesOverThreeEpochs) {
  const TrainData d{data::detail::synthetic_split(2000, 9, 0), data::detail::synthetic_split(200, 9, 1), std::nullopt};
  TrainConfig c = toy_config(3, 64);
  const RunResult r = train_baseline(kResNet8, c, d);
  EXPECT_LT(r.history[2].train_loss, r.history[0].train_loss);
}

}  // namespace
}  // namespace kdlab::train

/*
 * Copyright 2026 The opendet-lab Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */


#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include "opendet/config.hpp"
#include "opendet/trainer.hpp"

namespace opendet {
namespace {

SyntheticWorldConfig small_world() {
  SyntheticWorldConfig w;
  w.num_known = 3;
  w.num_unknown = 2;
  w.unknown_mix = 3;
  w.feature_dim = 6;
  w.seed = 5;
  return w;
}

TrainerConfig small_trainer(const SyntheticWorldConfig& w, int iterations) {
  TrainerConfig t;
  t.total_iterations = iterations;
  t.warmup_iterations = iterations / 10;
  t.dims = {w.feature_dim, 12, 12, 8, 20.0};
  t.batch_size = 16;
  t.eval_per_known = 50;
  t.eval_per_unknown = 50;
  return t;
}

TEST(World, NoBackgroundWhenFractionIsZero) {
  auto cfg = small_world();
  cfg.bg_fraction = 0.0;
  const SyntheticWorld world(cfg);
  std::mt19937_64 rng(1);
  for (const auto& p : generate_batch(world, 64, rng)) {
    EXPECT_TRUE(p.is_foreground);
    EXPECT_TRUE(world.classes().is_known(p.gt_class));
  }
}

TEST(World, BatchesRepeatUnderTheSameSeed) {
  const SyntheticWorld world(small_world());
  std::mt19937_64 a(17), b(17);
  for (int round = 0; round < 5; ++round) {
    const auto x = generate_batch(world, 32, a);
    const auto y = generate_batch(world, 32, b);
    ASSERT_EQ(x.size(), y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      EXPECT_EQ(x[i].features, y[i].features);
      EXPECT_EQ(x[i].gt_class, y[i].gt_class);
      EXPECT_EQ(x[i].iou_with_gt, y[i].iou_with_gt);
    }
  }
}

TEST(World, ZeroSpreadGivesTheClassMean) {
  auto cfg = small_world();
  cfg.cluster_stddev = 0.0;
  const SyntheticWorld world(cfg);
  std::mt19937_64 rng(2);
  for (const auto& p : generate_batch(world, 40, rng)) {
    if (p.is_foreground) EXPECT_EQ(p.features, world.known_mean(p.gt_class));
  }
}

TEST(World, TrainingBatchesHoldNoUnknowns) {
  const SyntheticWorld world(small_world());
  const ClassSpace cs = world.classes();
  std::mt19937_64 rng(3);
  std::size_t bg = 0;
  for (const auto& p : generate_batch(world, 200, rng)) {
    EXPECT_NE(p.gt_class, cs.unknown());
    if (!p.is_foreground) {
      ++bg;
      EXPECT_EQ(p.gt_class, cs.background());
      EXPECT_LE(p.iou_with_gt, world.config().bg_iou_high);
    } else {
      EXPECT_GE(p.iou_with_gt, world.config().fg_iou_low);
    }
  }
  EXPECT_EQ(bg, 100u);
}

TEST(World, RejectsBadConfiguration) {
  auto cfg = small_world();
  cfg.bg_fraction = 1.5;
  EXPECT_THROW(SyntheticWorld{cfg}, std::invalid_argument);
  cfg = small_world();
  cfg.cluster_means = {Vector(6, 0.0)};
  EXPECT_THROW(SyntheticWorld{cfg}, std::invalid_argument);
}

TEST(Trainer, ZeroWeightsReduceToCrossEntropy) {
  const auto wc = small_world();
  const SyntheticWorld world(wc);
  auto tc = small_trainer(wc, 100);
  tc.upl.beta = 0.0;
  tc.ic.gamma0 = 0.0;
  const auto model = ToyModel::initialize(world.classes(), tc.dims, 4);
  const MemoryBank bank(world.classes(), tc.dims.embed_dim, tc.bank);
  std::mt19937_64 rng(9);
  const auto batch = generate_batch(world, 24, rng);
  std::vector<ClassifierPass> passes;
  for (const auto& p : batch) passes.push_back(classify(model, p.features));
  for (int t : {0, 50, 99}) {
    const auto sel = select_examples(batch, passes, tc, t);
    EXPECT_TRUE(sel.up_indices.empty());
    EXPECT_TRUE(sel.anchors.empty());
    const auto r = joint_objective(model, bank, batch, tc, t, sel, nullptr);
    double ce = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) ce += ce_loss(passes[i].logits, batch[i].gt_class).value;
    ce /= static_cast<double>(batch.size());
    EXPECT_DOUBLE_EQ(r.value, ce);
    EXPECT_EQ(r.up, 0.0);
    EXPECT_EQ(r.ic, 0.0);
  }
}

TEST(Trainer, UpWeightIsZeroDuringWarmup) {
  const auto wc = small_world();
  const SyntheticWorld world(wc);
  auto tc = small_trainer(wc, 40);
  tc.warmup_iterations = 20;
  tc.upl.beta = 0.7;
  tc.ic.gamma0 = 0.1;
  auto model = ToyModel::initialize(world.classes(), tc.dims, 4);
  MemoryBank bank(world.classes(), tc.dims.embed_dim, tc.bank);
  std::mt19937_64 rng(10);
  for (int t = 0; t < tc.total_iterations; ++t) {
    auto batch = generate_batch(world, tc.batch_size, rng);
    const auto s = train_step(model, bank, batch, tc, t);
    if (t < tc.warmup_iterations) {
      EXPECT_EQ(s.up_weight, 0.0) << "t=" << t;
      EXPECT_EQ(s.up_examples, 0u);
    } else {
      EXPECT_EQ(s.up_weight, 0.7) << "t=" << t;
      EXPECT_GT(s.up_examples, 0u);
    }
    EXPECT_DOUBLE_EQ(s.gamma_t, 0.1 * (1.0 - t / 40.0));
  }
}

TEST(Trainer, StepOutsideScheduleThrows) {
  const auto wc = small_world();
  const SyntheticWorld world(wc);
  const auto tc = small_trainer(wc, 10);
  auto model = ToyModel::initialize(world.classes(), tc.dims, 1);
  MemoryBank bank(world.classes(), tc.dims.embed_dim, tc.bank);
  std::mt19937_64 rng(1);
  auto batch = generate_batch(world, 4, rng);
  EXPECT_THROW(train_step(model, bank, batch, tc, 10), std::out_of_range);
  EXPECT_THROW(train_step(model, bank, batch, tc, -1), std::out_of_range);
}

TEST(Trainer, RejectsBadSchedule) {
  TrainerConfig tc;
  tc.total_iterations = 10;
  tc.warmup_iterations = 10;
  EXPECT_THROW(tc.validate(), std::invalid_argument);
  tc.warmup_iterations = 0;
  tc.learning_rate = 0.0;
  EXPECT_THROW(tc.validate(), std::invalid_argument);
}

TEST(Infer, ArgmaxRules) {
  const ClassSpace cs(3);
  const auto unknown = predict_from_probs(cs, std::vector<double>{0.1, 0.1, 0.1, 0.6, 0.1});
  EXPECT_EQ(unknown.predicted_class, cs.unknown());
  EXPECT_TRUE(unknown.is_unknown);
  EXPECT_FALSE(unknown.is_background);
  EXPECT_DOUBLE_EQ(unknown.score, 0.6);

  const auto bg = predict_from_probs(cs, std::vector<double>{0.1, 0.1, 0.1, 0.1, 0.6});
  EXPECT_TRUE(bg.is_background);

  const auto tie = predict_from_probs(cs, std::vector<double>(5, 0.2));
  EXPECT_EQ(tie.predicted_class, 0);
  const auto later_tie = predict_from_probs(cs, std::vector<double>{0.1, 0.3, 0.3, 0.2, 0.1});
  EXPECT_EQ(later_tie.predicted_class, 1);
}

TEST(Infer, IgnoresTheContrastiveHead) {
  const ClassSpace cs(4);
  const ModelDims dims{5, 8, 8, 4, 20.0};
  const auto model = ToyModel::initialize(cs, dims, 12);
  auto altered = model;
  for (double& w : altered.head1.w) w = -w;
  for (double& w : altered.head2.w) w *= 3.0;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  for (int i = 0; i < 20; ++i) {
    Vector x(5);
    for (double& v : x) v = n(rng);
    const auto a = infer(model, x);
    const auto b = infer(altered, x);
    EXPECT_EQ(a.predicted_class, b.predicted_class);
    EXPECT_EQ(a.probs, b.probs);
    EXPECT_NEAR(std::accumulate(a.probs.begin(), a.probs.end(), 0.0), 1.0, 1e-12);
  }
}

TEST(Trainer, CrossEntropyLearnsASeparableWorld) {
  auto c = baseline_preset();
  c.world.cluster_stddev = 0.3;
  c.trainer.total_iterations = 3000;
  c.trainer.warmup_iterations = 100;
  const auto r = run_experiment(SyntheticWorld(c.world), c.trainer);
  EXPECT_GE(r.known_accuracy, 0.99);
}

TEST(Trainer, FullRunLossTrendsDown) {
  auto c = full_preset();
  c.world.cluster_stddev = 0.3;
  c.trainer.total_iterations = 2000;
  c.trainer.warmup_iterations = 100;
  const auto r = run_experiment(SyntheticWorld(c.world), c.trainer);
  const auto& tel = r.telemetry;
  auto moving_average = [&](std::size_t end) {
    double s = 0.0;
    for (std::size_t i = end - 50; i < end; ++i) s += tel[i].total;
    return s / 50.0;
  };
  const std::size_t quarter = tel.size() / 4;
  EXPECT_LT(moving_average(tel.size()), moving_average(quarter));
  for (const auto& s : tel) EXPECT_TRUE(std::isfinite(s.total));
}

TEST(Trainer, SameSeedSameResult) {
  const auto wc = small_world();
  auto tc = small_trainer(wc, 150);
  tc.upl.beta = 0.5;
  tc.ic.gamma0 = 0.1;
  const SyntheticWorld world(wc);
  const auto a = run_experiment(world, tc);
  const auto b = run_experiment(world, tc);
  std::ostringstream ca, cb;
  write_checkpoint(ca, a.model);
  write_checkpoint(cb, b.model);
  EXPECT_EQ(ca.str(), cb.str());
  EXPECT_EQ(a.report.ap_u, b.report.ap_u);
  EXPECT_EQ(a.report.aose, b.report.aose);
  EXPECT_EQ(a.report.wi, b.report.wi);
  EXPECT_EQ(a.report.map_k, b.report.map_k);
  ASSERT_EQ(a.telemetry.size(), b.telemetry.size());
  for (std::size_t i = 0; i < a.telemetry.size(); ++i) EXPECT_EQ(a.telemetry[i].total, b.telemetry[i].total);
}

TEST(Checkpoint, RoundTripsEveryParameter) {
  const ClassSpace cs(4);
  const auto m = ToyModel::initialize(cs, {5, 7, 6, 3, 12.5}, 99);
  std::stringstream buf;
  write_checkpoint(buf, m);
  const auto back = read_checkpoint(buf);
  EXPECT_EQ(back.classes.num_known(), 4);
  EXPECT_EQ(back.dims.scale, 12.5);
  const auto p = m.parameters();
  const auto q = back.parameters();
  ASSERT_EQ(p.size(), q.size());
  for (std::size_t k = 0; k < p.size(); ++k) {
    EXPECT_TRUE(std::equal(p[k].begin(), p[k].end(), q[k].begin(), q[k].end()));
  }
}

TEST(Checkpoint, RejectsDamagedInput) {
  std::stringstream bad("NOTACKPT");
  EXPECT_THROW(read_checkpoint(bad), std::runtime_error);
  const auto m = ToyModel::initialize(ClassSpace(2), {3, 4, 4, 2, 20.0}, 1);
  std::stringstream buf;
  write_checkpoint(buf, m);
  std::string bytes = buf.str();
  bytes.resize(bytes.size() - 3);
  std::stringstream cut(bytes);
  EXPECT_THROW(read_checkpoint(cut), std::runtime_error);
}

}  // namespace
}  // namespace opendet

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
#include <random>
#include <span>
#include <vector>

#include "opendet/gradcheck.hpp"
#include "opendet/losses.hpp"
#include "opendet/memory_bank.hpp"

namespace opendet {
namespace {

// Layout (known, known, unknown, background).
const Vector kLogits{2.0, 0.0, 0.0, 0.0};

TEST(CeLoss, ReferenceValues) {
  EXPECT_NEAR(ce_loss(kLogits, 0).value, -std::log(0.7112), 1e-3);
  EXPECT_NEAR(ce_loss(kLogits, 0).value, 0.3409, 1e-3);
  EXPECT_NEAR(ce_loss(Vector{0.0, 0.0, 0.0}, 2).value, std::log(3.0), 1e-12);
  EXPECT_NEAR(ce_loss(Vector{1.0, 1.0, -50.0, -50.0}, 0).value, std::log(2.0), 1e-12);
  EXPECT_NEAR(ce_loss(Vector{80.0, 0.0, 0.0, 0.0}, 0).value, 0.0, 1e-12);
}

TEST(CeLoss, GradientIsProbMinusOneHot) {
  const auto r = ce_loss(kLogits, 3);
  const auto p = softmax(kLogits);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(r.grad[j], p[j] - (j == 3 ? 1.0 : 0.0), 1e-15);
}

TEST(CeLoss, RejectsUnknownTarget) { EXPECT_THROW(ce_loss(kLogits, 2), std::invalid_argument); }

TEST(ConditionalUnknownProb, ReferenceValues) {
  EXPECT_NEAR(conditional_unknown_prob(kLogits, 0), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(conditional_unknown_prob(Vector(6, 0.4), 1), 1.0 / 5.0, 1e-12);
  EXPECT_NEAR(conditional_unknown_prob(Vector{0.0, 0.0, 60.0, 0.0}, 3), 1.0, 1e-12);
  // Background may be the gt; only its logit is removed.
  EXPECT_NEAR(conditional_unknown_prob(Vector{0.0, 0.0, 0.0, 9.0}, 3), 1.0 / 3.0, 1e-12);
}

TEST(UpWeight, PolynomialValues) {
  UPLConfig cfg;
  cfg.alpha = 1.0;
  EXPECT_EQ(up_weight(0.0, cfg), 0.0);
  EXPECT_EQ(up_weight(1.0, cfg), 0.0);
  EXPECT_DOUBLE_EQ(up_weight(0.5, cfg), 0.25);
  cfg.alpha = 2.0;
  EXPECT_DOUBLE_EQ(up_weight(0.5, cfg), 0.125);
}

TEST(UpWeight, OtherVariants) {
  UPLConfig cfg;
  cfg.variant = WeightingVariant::kIdentity;
  EXPECT_EQ(up_weight(0.3, cfg), 1.0);
  cfg.variant = WeightingVariant::kEntropyOfGt;
  EXPECT_NEAR(up_weight(0.5, cfg), 0.5 * std::log(2.0), 1e-15);
  EXPECT_EQ(up_weight(0.0, cfg), 0.0);

  const Vector p{0.6, 0.2, 0.1, 0.1};
  cfg.variant = WeightingVariant::kPolynomialMaxProb;
  cfg.alpha = 1.0;
  EXPECT_NEAR(up_weight(p, 1, cfg), 0.4 * 0.6, 1e-15);
  EXPECT_THROW(up_weight(0.6, cfg), std::invalid_argument);
  cfg.variant = WeightingVariant::kNormalizedEntropy;
  EXPECT_NEAR(up_weight(p, 1, cfg), entropy(p) / std::log(4.0), 1e-15);
  EXPECT_NEAR(up_weight(Vector(4, 0.25), 0, cfg), 1.0, 1e-15);
}

TEST(UpWeight, PolynomialShape) {
  for (double alpha : {0.5, 1.0, 2.0, 3.0}) {
    UPLConfig cfg;
    cfg.alpha = alpha;
    const double peak = 1.0 / (1.0 + alpha);
    const double height = std::pow(alpha, alpha) / std::pow(1.0 + alpha, 1.0 + alpha);
    EXPECT_NEAR(up_weight(peak, cfg), height, 1e-12) << alpha;
    for (int i = 0; i <= 1000; ++i) EXPECT_LE(up_weight(i / 1000.0, cfg), height + 1e-15);
  }
}

TEST(UpLoss, ReferenceValue) {
  UPLConfig cfg;
  const auto r = up_loss(kLogits, 0, cfg);
  const double w = 0.7112 * (1.0 - 0.7112);
  EXPECT_NEAR(w, 0.2054, 1e-4);
  EXPECT_NEAR(r.value, 0.2257, 1e-3);
  EXPECT_NEAR(r.value, w * std::log(3.0), 1e-3);
}

TEST(UpLoss, VanishesWhenGtIsCertain) {
  UPLConfig cfg;
  EXPECT_NEAR(up_loss(Vector{800.0, 3.0, -2.0, 1.0}, 0, cfg).value, 0.0, 1e-300);
  EXPECT_THROW(up_loss(kLogits, 2, cfg), std::invalid_argument);
}

TEST(UpLoss, DetachedWeightDropsItsGradient) {
  UPLConfig cfg;
  cfg.detach_weight = true;
  const auto r = up_loss(kLogits, 0, cfg);
  // With w held fixed the gt logit receives nothing.
  EXPECT_EQ(r.grad[0], 0.0);
  EXPECT_LT(r.grad[2], 0.0);
}

double finite_difference_error(const std::function<double(std::span<const double>)>& f, const Vector& x,
                               const Vector& g) {
  return max_relative_error(f, x, g);
}

TEST(UpLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(0.0, 2.0);
  for (auto v : kAllWeightingVariants) {
    for (int trial = 0; trial < 50; ++trial) {
      Vector s(6);
      for (double& x : s) x = n(rng);
      const int gt = trial % 2 == 0 ? 1 : 5;
      UPLConfig cfg;
      cfg.variant = v;
      cfg.alpha = 0.5 + trial % 3;
      const auto r = up_loss(s, gt, cfg);
      EXPECT_LT(finite_difference_error([&](std::span<const double> z) { return up_loss(z, gt, cfg).value; }, s, r.grad),
                1e-5)
          << to_string(v);
    }
  }
}

TEST(Losses, NonNegative) {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> n(0.0, 5.0);
  for (int trial = 0; trial < 500; ++trial) {
    Vector s(5);
    for (double& x : s) x = n(rng);
    const int gt = trial % 4 == 2 ? 4 : trial % 4 == 3 ? 0 : trial % 2;
    EXPECT_GE(ce_loss(s, gt).value, 0.0);
    for (auto v : kAllWeightingVariants) {
      UPLConfig cfg;
      cfg.variant = v;
      EXPECT_GE(up_loss(s, gt, cfg).value, 0.0);
    }
  }
}

std::vector<std::span<const double>> spans(const std::vector<Vector>& v) { return {v.begin(), v.end()}; }

TEST(IcLoss, ReferenceValues) {
  const Vector anchor{1.0, 0.0};
  const std::vector<Vector> pos{{1.0, 0.0}};
  const std::vector<Vector> neg{{0.0, 1.0}};
  ICConfig cfg;
  cfg.tau = 1.0;
  EXPECT_NEAR(ic_loss(anchor, spans(pos), spans(neg), cfg).value, 0.3133, 1e-4);
  EXPECT_NEAR(ic_loss(anchor, spans(pos), spans(neg), cfg).value, -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)),
              1e-12);
  cfg.denominator = DenominatorMode::kAsWritten;
  EXPECT_NEAR(ic_loss(anchor, spans(pos), spans(neg), cfg).value, -1.0, 1e-12);
}

TEST(IcLoss, DecreasesTowardsOwnClass) {
  const std::vector<Vector> pos{{1.0, 0.0}};
  const std::vector<Vector> neg{{0.0, 1.0}};
  ICConfig cfg;
  double previous = INFINITY;
  for (int i = 0; i <= 10; ++i) {
    const double t = i / 10.0;
    const Vector anchor = l2_normalize(Vector{t, 1.0 - t + 1e-9});
    const double v = ic_loss(anchor, spans(pos), spans(neg), cfg).value;
    EXPECT_LT(v, previous);
    previous = v;
  }
}

TEST(IcLoss, EmptyPositivesAreSkipped) {
  const std::vector<Vector> neg{{0.0, 1.0}};
  const auto r = ic_loss(Vector{1.0, 0.0}, {}, spans(neg), ICConfig{});
  EXPECT_TRUE(r.skipped);
  EXPECT_EQ(r.value, 0.0);
}

TEST(IcLoss, SupConIsNonNegative) {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Vector> pos(1 + trial % 4), neg(trial % 5);
    for (auto& v : pos) v = detail::random_unit(3, rng);
    for (auto& v : neg) v = detail::random_unit(3, rng);
    ICConfig cfg;
    cfg.tau = 0.1 + 0.1 * (trial % 5);
    EXPECT_GE(ic_loss(detail::random_unit(3, rng), spans(pos), spans(neg), cfg).value, -1e-12);
  }
}

TEST(IcLoss, BankFormUsesClassQueues) {
  MemoryBank bank(ClassSpace(2), 2, MemoryBankConfig{4, 4, 0.7, 0.5});
  std::vector<Proposal> seeds(2);
  seeds[0] = {{}, {1.0, 0.0}, 0, 0.9, true};
  seeds[1] = {{}, {0.0, 1.0}, 1, 0.9, true};
  bank.enqueue(seeds);
  ICConfig cfg;
  cfg.tau = 1.0;
  EXPECT_NEAR(ic_loss(Vector{1.0, 0.0}, 0, bank, cfg).value, 0.3133, 1e-4);
  EXPECT_THROW(ic_loss(Vector{1.0, 0.0}, 2, bank, cfg), std::invalid_argument);
}

TEST(IcWeight, LinearDecay) {
  EXPECT_DOUBLE_EQ(ic_weight_at(0.1, 0, 1000), 0.1);
  EXPECT_DOUBLE_EQ(ic_weight_at(0.1, 500, 1000), 0.05);
  EXPECT_EQ(ic_weight_at(0.1, 1000, 1000), 0.0);
  EXPECT_THROW(ic_weight_at(0.1, 1001, 1000), std::out_of_range);
}

struct JointFixture {
  MemoryBank bank{ClassSpace(2), 2, MemoryBankConfig{4, 4, 0.7, 0.5}};
  JointLossInput in;
  JointFixture() {
    std::vector<Proposal> seeds(3);
    seeds[0] = {{}, {1.0, 0.0}, 0, 0.9, true};
    seeds[1] = {{}, {0.0, 1.0}, 1, 0.9, true};
    seeds[2] = {{}, {0.6, 0.8}, 1, 0.9, true};
    bank.enqueue(seeds);
    in.logits = {{1.0, 0.5, -0.3, 0.2}, {0.1, 2.0, 0.4, -1.0}, {0.0, 0.3, 0.2, 1.5}};
    in.gt = {0, 1, 3};
    in.up_indices = {0, 2};
    in.anchor_embeddings = {l2_normalize(Vector{0.8, 0.3})};
    in.anchor_classes = {0};
  }
};

TEST(JointLoss, WarmupGatesTheUpTerm) {
  JointFixture fx;
  UPLConfig upl;
  ICConfig ic;
  const Schedule sched{1000, 100};
  const auto before = joint_loss(fx.in, fx.bank, upl, ic, sched, 99);
  EXPECT_EQ(before.up_weight, 0.0);
  upl.beta = 0.0;
  const auto no_up = joint_loss(fx.in, fx.bank, upl, ic, sched, 99);
  EXPECT_EQ(before.value, no_up.value);
  for (std::size_t i = 0; i < fx.in.logits.size(); ++i) EXPECT_EQ(before.grad_logits[i], no_up.grad_logits[i]);
  upl.beta = 0.5;
  EXPECT_EQ(joint_loss(fx.in, fx.bank, upl, ic, sched, 100).up_weight, 0.5);
}

TEST(JointLoss, GammaSchedule) {
  JointFixture fx;
  const Schedule sched{1000, 100};
  EXPECT_DOUBLE_EQ(joint_loss(fx.in, fx.bank, {}, {}, sched, 0).gamma_t, 0.1);
  EXPECT_EQ(joint_loss(fx.in, fx.bank, {}, {}, sched, 1000).gamma_t, 0.0);
  EXPECT_THROW(joint_loss(fx.in, fx.bank, {}, {}, sched, 1001), std::out_of_range);
}

TEST(JointLoss, ReducesToCrossEntropy) {
  JointFixture fx;
  UPLConfig upl;
  upl.beta = 0.0;
  ICConfig ic;
  ic.gamma0 = 0.0;
  const auto r = joint_loss(fx.in, fx.bank, upl, ic, {1000, 100}, 500);
  double ce = 0.0;
  for (std::size_t i = 0; i < fx.in.logits.size(); ++i) {
    const auto c = ce_loss(fx.in.logits[i], fx.in.gt[i]);
    ce += c.value / 3.0;
    for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(r.grad_logits[i][j], c.grad[j] / 3.0);
  }
  EXPECT_DOUBLE_EQ(r.value, ce);
  for (double g : r.grad_anchors[0]) EXPECT_EQ(g, 0.0);
}

TEST(JointLoss, LinearInWeights) {
  JointFixture fx;
  const Schedule sched{1000, 0};
  auto value = [&](double beta, double gamma0) {
    UPLConfig upl;
    upl.beta = beta;
    ICConfig ic;
    ic.gamma0 = gamma0;
    return joint_loss(fx.in, fx.bank, upl, ic, sched, 0);
  };
  const auto base = value(1e-300, 1e-300);
  const auto a = value(0.5, 0.0);
  const auto b = value(1.5, 0.0);
  const auto c = value(0.0, 0.2);
  EXPECT_NEAR(b.value - base.ce, 3.0 * (a.value - base.ce), 1e-12);
  EXPECT_NEAR(c.value - base.ce, 0.2 * c.ic, 1e-12);
  EXPECT_NEAR(value(0.5, 0.2).value, base.ce + 0.5 * a.up + 0.2 * c.ic, 1e-12);
}

}  // namespace
}  // namespace opendet

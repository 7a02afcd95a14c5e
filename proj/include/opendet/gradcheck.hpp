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

// Central finite-difference checks of every analytic loss gradient.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "opendet/io.hpp"
#include "opendet/losses.hpp"
#include "opendet/memory_bank.hpp"
#include "opendet/trainer.hpp"

namespace opendet {

inline constexpr double kGradcheckStep = 1e-5;
inline constexpr double kGradcheckTolerance = 1e-4;

// |a - n| / max(|a|, |n|, floor). Central differences carry roundoff of
// about eps * |f| / step, so components below 1e-6 * max(1, |f|) are compared
// against that floor rather than against their own size.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// Largest relative error between `analytic` and central differences of f at x.
inline double max_relative_error(const std::function<double(std::span<const double>)>& f, Vector x,
                                 std::span<const double> analytic, double step = kGradcheckStep) {
  const double floor = 1e-6 * std::max(1.0, std::abs(f(x)));
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = f(x);
    x[i] = orig - step;
    const double down = f(x);
    x[i] = orig;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * step), floor));
  }
  return worst;
}

struct GradcheckRow {
  std::string loss;
  std::size_t trials = 0;
  double max_relative_error = 0.0;
  bool passed = true;
};

// Lets a test corrupt an analytic gradient before comparison.
using GradientMutation = std::function<void(std::string_view loss, std::span<double> grad)>;

namespace detail {

inline Vector random_vector(std::size_t n, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, stddev);
  Vector v(n);
  for (double& x : v) x = d(rng);
  return v;
}

inline Vector random_unit(std::size_t n, std::mt19937_64& rng) {
  Vector v;
  do {
    v = random_vector(n, 1.0, rng);
  } while (l2_norm(v) == 0.0);
  return l2_normalize(v);
}

// Ground truth among known classes and background; never the unknown slot.
inline int random_gt(int num_known, std::mt19937_64& rng) {
  const int pick = static_cast<int>(bounded_draw(rng, static_cast<std::uint64_t>(num_known + 1)));
  return pick == num_known ? num_known + 1 : pick;
}

struct JointFixture {
  ToyModel model;
  MemoryBank bank;
  std::vector<Proposal> batch;
  TrainerConfig config;
  ObjectiveSelection selection;
  int t = 0;
};

inline JointFixture make_joint_fixture(std::mt19937_64& rng) {
  JointFixture fx;
  const int k = 3;
  const ClassSpace cs(k);
  ModelDims dims{4, 6, 5, 3, 20.0};
  fx.model = ToyModel::initialize(cs, dims, rng());
  for (double& v : fx.model.trunk.b) v = 0.5;
  fx.config.total_iterations = 100;
  fx.config.warmup_iterations = 0;
  fx.config.dims = dims;
  std::uniform_real_distribution<double> weight(0.5, 2.0);
  fx.config.upl.beta = weight(rng);
  fx.config.ic.gamma0 = weight(rng);
  fx.config.bank = MemoryBankConfig{8, 8, 0.7, 0.5};
  fx.t = static_cast<int>(bounded_draw(rng, 100));
  fx.bank = MemoryBank(cs, dims.embed_dim, fx.config.bank);
  std::vector<Proposal> seeds;
  for (int c = 0; c < k; ++c) {
    for (int j = 0; j < 4; ++j) {
      Proposal p;
      p.embedding = random_unit(dims.embed_dim, rng);
      p.gt_class = c;
      p.iou_with_gt = 0.9;
      p.is_foreground = true;
      seeds.push_back(std::move(p));
    }
  }
  fx.bank.enqueue(seeds);

  for (std::size_t i = 0; i < 8; ++i) {
    Proposal p;
    p.features = random_vector(dims.feature_dim, 1.0, rng);
    p.is_foreground = i % 2 == 0;
    p.gt_class = p.is_foreground ? static_cast<int>(bounded_draw(rng, k)) : cs.background();
    p.iou_with_gt = p.is_foreground ? 0.8 : 0.1;
    fx.batch.push_back(std::move(p));
  }
  fx.selection.up_indices = {0, 1, 3, 6};
  fx.selection.anchors = {0, 2, 4, 6};
  return fx;
}

// True when every ReLU input sits at least `margin` away from its kink and
// every embedding is at least 0.1 long before normalization, where the
// curvature of e / |e| grows like |e|^-3. Finite differences then neither
// straddle a kink nor drown in truncation error.
inline bool away_from_kinks(const JointFixture& fx, double margin) {
  for (const auto& p : fx.batch) {
    const auto f = classify(fx.model, p.features);
    for (double v : f.pre) {
      if (std::abs(v) < margin) return false;
    }
    auto u = fx.model.head1.forward(f.h);
    bool any_active = false;
    for (double v : u) {
      if (std::abs(v) < margin) return false;
      any_active = any_active || v > 0.0;
    }
    if (!any_active) return false;
    for (double& v : u) v = std::max(0.0, v);
    if (l2_norm(fx.model.head2.forward(u)) < 0.1) return false;
  }
  return true;
}

inline Vector flatten(const ToyModel& m) {
  Vector v;
  for (auto p : m.parameters()) v.insert(v.end(), p.begin(), p.end());
  return v;
}

inline void unflatten(ToyModel& m, std::span<const double> v) {
  std::size_t off = 0;
  for (auto p : m.parameters()) {
    std::copy(v.begin() + static_cast<std::ptrdiff_t>(off), v.begin() + static_cast<std::ptrdiff_t>(off + p.size()),
              p.begin());
    off += p.size();
  }
}

}  // namespace detail

// One row per loss: CE, UP for each weighting variant, IC in both
// denominator modes, and the joint objective through the toy model.
inline std::vector<GradcheckRow> run_gradcheck(std::uint64_t seed, std::size_t trials,
                                               const GradientMutation& mutate = {}) {
  std::vector<GradcheckRow> rows;
  if (trials == 0) return rows;
  auto record = [&](const std::string& name, auto&& one_trial) {
    GradcheckRow row{name, trials, 0.0, true};
    std::mt19937_64 rng(seed ^ fnv1a64(name));
    for (std::size_t i = 0; i < trials; ++i) row.max_relative_error = std::max(row.max_relative_error, one_trial(rng));
    row.passed = row.max_relative_error < kGradcheckTolerance;
    rows.push_back(row);
  };
  auto apply_mutation = [&](std::string_view name, Vector& g) {
    if (mutate) mutate(name, g);
  };

  record("ce", [&](std::mt19937_64& rng) {
    const int k = 1 + static_cast<int>(bounded_draw(rng, 6));
    const Vector logits = detail::random_vector(static_cast<std::size_t>(k + 2), 3.0, rng);
    const int gt = detail::random_gt(k, rng);
    auto r = ce_loss(logits, gt);
    apply_mutation("ce", r.grad);
    return max_relative_error([&](std::span<const double> z) { return ce_loss(z, gt).value; }, logits, r.grad);
  });

  for (WeightingVariant v : kAllWeightingVariants) {
    const std::string name = "up/" + std::string(to_string(v));
    record(name, [&](std::mt19937_64& rng) {
      const int k = 1 + static_cast<int>(bounded_draw(rng, 6));
      const Vector logits = detail::random_vector(static_cast<std::size_t>(k + 2), 3.0, rng);
      const int gt = detail::random_gt(k, rng);
      UPLConfig cfg;
      cfg.variant = v;
      cfg.alpha = std::uniform_real_distribution<double>(0.5, 3.0)(rng);
      auto r = up_loss(logits, gt, cfg);
      apply_mutation(name, r.grad);
      return max_relative_error([&](std::span<const double> z) { return up_loss(z, gt, cfg).value; }, logits, r.grad);
    });
  }

  for (DenominatorMode mode : {DenominatorMode::kSupCon, DenominatorMode::kAsWritten}) {
    const std::string name = "ic/" + std::string(to_string(mode));
    record(name, [&](std::mt19937_64& rng) {
      const std::size_t d = 2 + static_cast<std::size_t>(bounded_draw(rng, 7));
      const Vector anchor = detail::random_unit(d, rng);
      std::vector<Vector> pos(1 + bounded_draw(rng, 5));
      std::vector<Vector> neg(1 + bounded_draw(rng, 8));
      for (auto& p : pos) p = detail::random_unit(d, rng);
      for (auto& n : neg) n = detail::random_unit(d, rng);
      const std::vector<std::span<const double>> ps(pos.begin(), pos.end());
      const std::vector<std::span<const double>> ns(neg.begin(), neg.end());
      ICConfig cfg;
      cfg.denominator = mode;
      cfg.tau = std::uniform_real_distribution<double>(0.1, 1.0)(rng);
      auto r = ic_loss(anchor, ps, ns, cfg);
      apply_mutation(name, r.grad);
      return max_relative_error([&](std::span<const double> z) { return ic_loss(z, ps, ns, cfg).value; }, anchor,
                                r.grad);
    });
  }

  record("joint", [&](std::mt19937_64& rng) {
    auto fx = detail::make_joint_fixture(rng);
    while (!detail::away_from_kinks(fx, 1e-3)) fx = detail::make_joint_fixture(rng);
    ToyModel grad = fx.model.zeros_like();
    joint_objective(fx.model, fx.bank, fx.batch, fx.config, fx.t, fx.selection, &grad);
    Vector g = detail::flatten(grad);
    apply_mutation("joint", g);
    ToyModel probe = fx.model;
    return max_relative_error(
        [&](std::span<const double> theta) {
          detail::unflatten(probe, theta);
          return joint_objective(probe, fx.bank, fx.batch, fx.config, fx.t, fx.selection, nullptr).value;
        },
        detail::flatten(fx.model), g);
  });
  return rows;
}

}  // namespace opendet

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

// Randomized operation sequences against the memory bank, checked against a
// plain model of what every enqueue must do.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <random>
#include <vector>

#include "opendet/memory_bank.hpp"
#include "opendet/mining.hpp"

namespace bankprops {

struct Violations {
  std::size_t capacity = 0;
  std::size_t isolation = 0;
  std::size_t fifo = 0;
  std::size_t least_similar = 0;
  std::size_t threshold = 0;
  std::size_t unit_norm = 0;
  std::size_t sequences = 0;
  std::size_t operations = 0;

  std::size_t total() const { return capacity + isolation + fifo + least_similar + threshold + unit_norm; }
};

inline double max_sim(const std::deque<opendet::Exemplar>& q, const opendet::Vector& v) {
  double best = -2.0;
  for (const auto& e : q) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * e.embedding[i];
    best = std::max(best, s);
  }
  return best;
}

inline opendet::Vector unit(opendet::Vector v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

// One random sequence of enqueue operations; violations are accumulated.
inline void run_sequence(std::uint64_t seed, Violations& out) {
  std::mt19937_64 rng(seed);
  auto draw = [&](std::uint64_t n) { return static_cast<std::size_t>(opendet::bounded_draw(rng, n)); };
  const int k = 1 + static_cast<int>(draw(4));
  const std::size_t dim = 2 + draw(3);
  opendet::MemoryBankConfig cfg;
  cfg.capacity = 1 + draw(6);
  cfg.sample_count = 1 + draw(cfg.capacity);
  const double thresholds[] = {0.3, 0.5, 0.7, 0.9};
  cfg.memory_iou = thresholds[draw(4)];
  cfg.batch_iou = cfg.memory_iou / 2.0;
  const opendet::ClassSpace cs(k);
  opendet::MemoryBank bank(cs, dim, cfg);
  std::normal_distribution<double> normal;

  // A small pool of directions makes duplicates and similarity ties common.
  std::vector<opendet::Vector> pool(3 + draw(5));
  for (auto& v : pool) {
    v.resize(dim);
    do {
      for (double& x : v) x = normal(rng);
    } while (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; }));
  }

  const std::size_t ops = 1 + draw(6);
  for (std::size_t op = 0; op < ops; ++op) {
    std::vector<opendet::Proposal> batch(draw(9));
    for (auto& p : batch) {
      const std::size_t kind = draw(5);
      p.is_foreground = kind < 4;
      p.gt_class = p.is_foreground ? static_cast<int>(draw(static_cast<std::uint64_t>(k))) : cs.background();
      if (kind == 3) p.gt_class = cs.unknown();
      const double ious[] = {0.0, cfg.memory_iou, std::nextafter(cfg.memory_iou, 2.0), 0.95, 1.0};
      p.iou_with_gt = ious[draw(5)];
      p.embedding = pool[draw(pool.size())];
      // Stored vectors must come out unit norm whatever the input scale.
      for (double& x : p.embedding) x *= 0.5 + static_cast<double>(draw(4));
    }

    std::vector<std::deque<opendet::Exemplar>> before;
    for (int c = 0; c < k; ++c) before.push_back(bank.queue(c));
    const auto report = bank.enqueue(batch);
    ++out.operations;

    for (int c = 0; c < k; ++c) {
      const auto& now = bank.queue(c);
      const auto& old = before[static_cast<std::size_t>(c)];
      const auto& admitted = report.admitted[static_cast<std::size_t>(c)];
      if (now.size() > cfg.capacity) ++out.capacity;

      std::vector<std::size_t> eligible;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        if (batch[i].is_foreground && batch[i].gt_class == c && batch[i].iou_with_gt > cfg.memory_iou) {
          eligible.push_back(i);
        }
      }
      for (std::size_t i : admitted) {
        if (!(batch[i].iou_with_gt > cfg.memory_iou) || batch[i].gt_class != c || !batch[i].is_foreground) {
          ++out.threshold;
        }
      }
      if (admitted.size() != std::min(eligible.size(), cfg.sample_count)) ++out.threshold;

      // Nothing eligible for c: its queue must be untouched by the other
      // classes' admissions.
      if (eligible.empty()) {
        bool same = now.size() == old.size();
        for (std::size_t i = 0; same && i < now.size(); ++i) {
          same = now[i].timestamp == old[i].timestamp && now[i].embedding == old[i].embedding;
        }
        if (!same) ++out.isolation;
        continue;
      }

      if (old.empty()) {
        for (std::size_t j = 0; j < admitted.size(); ++j) {
          if (admitted[j] != eligible[j]) ++out.least_similar;
        }
      } else {
        double worst_admitted = -2.0;
        double best_rejected = 2.0;
        for (std::size_t i : eligible) {
          const double s = max_sim(old, unit(batch[i].embedding));
          if (std::find(admitted.begin(), admitted.end(), i) != admitted.end()) {
            worst_admitted = std::max(worst_admitted, s);
          } else {
            best_rejected = std::min(best_rejected, s);
          }
        }
        if (worst_admitted > best_rejected + 1e-12) ++out.least_similar;
      }

      // Expected queue: the old one plus the admitted vectors in batch order,
      // with the oldest entries dropped beyond capacity.
      std::deque<opendet::Vector> expected;
      for (const auto& e : old) expected.push_back(e.embedding);
      for (std::size_t i : admitted) expected.push_back(unit(batch[i].embedding));
      while (expected.size() > cfg.capacity) expected.pop_front();
      bool fifo = expected.size() == now.size();
      for (std::size_t i = 0; fifo && i < now.size(); ++i) {
        for (std::size_t d = 0; d < dim; ++d) fifo = fifo && std::abs(expected[i][d] - now[i].embedding[d]) < 1e-12;
        if (i > 0) fifo = fifo && now[i - 1].timestamp < now[i].timestamp;
      }
      // Whatever was evicted must be older than everything that stayed.
      const std::size_t survivors_from_old = now.size() - std::min(now.size(), admitted.size());
      if (survivors_from_old < old.size() && survivors_from_old > 0) {
        const auto& first_kept = now.front();
        for (std::size_t i = 0; i < old.size() - survivors_from_old; ++i) {
          fifo = fifo && old[i].timestamp < first_kept.timestamp;
        }
      }
      if (!fifo) ++out.fifo;

      for (const auto& e : now) {
        double n = 0.0;
        for (double x : e.embedding) n += x * x;
        if (std::abs(std::sqrt(n) - 1.0) > 1e-12) ++out.unit_norm;
      }
    }
  }
  ++out.sequences;
}

inline Violations run_suite(std::size_t sequences, std::uint64_t seed = 7) {
  Violations v;
  for (std::size_t i = 0; i < sequences; ++i) run_sequence(seed * 1000003ULL + i, v);
  return v;
}

}  // namespace bankprops

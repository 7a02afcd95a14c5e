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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "opendet/latent_core.hpp"

namespace opendet {

struct MemoryBankConfig {
  std::size_t capacity = 256;    // Q, per class
  std::size_t sample_count = 16;  // q, admitted per class per enqueue
  double memory_iou = 0.7;       // T_m
  double batch_iou = 0.5;        // T_b

  void validate() const {
    if (sample_count < 1 || sample_count > capacity) {
      throw std::invalid_argument("memory bank: need 1 <= q <= Q");
    }
    if (!(batch_iou >= 0.0 && batch_iou <= memory_iou && memory_iou <= 1.0)) {
      throw std::invalid_argument("memory bank: need 0 <= T_b <= T_m <= 1");
    }
  }
};

struct Proposal {
  Vector features;
  Vector embedding;
  int gt_class = 0;
  double iou_with_gt = 0.0;
  bool is_foreground = false;
};

struct Exemplar {
  Vector embedding;
  std::uint64_t timestamp = 0;
};

struct AdmissionReport {
  // Per known class: indices into the proposal list that were admitted.
  std::vector<std::vector<std::size_t>> admitted;
  std::size_t evicted = 0;
};

// Per-class FIFO queues of unit-norm embeddings. Single writer: enqueue must
// not overlap with readers.
class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(ClassSpace classes, std::size_t dim, MemoryBankConfig config)
      : classes_(classes), dim_(dim), config_(config), queues_(static_cast<std::size_t>(classes.num_known())) {
    config_.validate();
    if (dim == 0) throw std::invalid_argument("memory bank: zero embedding dimension");
  }

  const ClassSpace& classes() const { return classes_; }
  std::size_t dim() const { return dim_; }
  const MemoryBankConfig& config() const { return config_; }
  std::uint64_t clock() const { return clock_; }

  const std::deque<Exemplar>& queue(int c) const { return queues_.at(checked(c)); }
  std::size_t size(int c) const { return queue(c).size(); }
  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& q : queues_) n += q.size();
    return n;
  }

  // Largest cosine similarity between v and the current exemplars of class c.
  double max_similarity(int c, std::span<const double> v) const {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& e : queue(c)) best = std::max(best, dot(v, e.embedding));
    return best;
  }

  // Admits, per known class, up to q candidates with IoU > T_m, preferring
  // those least similar to the class's current exemplars. Overflow evicts the
  // oldest exemplars of that class only.
  AdmissionReport enqueue(const std::vector<Proposal>& proposals) {
    AdmissionReport report;
    report.admitted.resize(queues_.size());
    for (int c = 0; c < classes_.num_known(); ++c) {
      std::vector<std::size_t> candidates;
      for (std::size_t i = 0; i < proposals.size(); ++i) {
        const auto& p = proposals[i];
        if (p.is_foreground && p.gt_class == c && p.iou_with_gt > config_.memory_iou) {
          candidates.push_back(i);
        }
      }
      if (candidates.empty()) continue;

      std::vector<Vector> normalized;
      normalized.reserve(candidates.size());
      for (std::size_t i : candidates) {
        if (proposals[i].embedding.size() != dim_) {
          throw std::invalid_argument("memory bank: embedding dimension mismatch");
        }
        normalized.push_back(l2_normalize(proposals[i].embedding));
      }

      std::vector<std::size_t> order(candidates.size());
      for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
      if (!queues_[static_cast<std::size_t>(c)].empty()) {
        std::vector<double> score(candidates.size());
        for (std::size_t k = 0; k < candidates.size(); ++k) score[k] = max_similarity(c, normalized[k]);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
      }
      order.resize(std::min(order.size(), config_.sample_count));
      std::sort(order.begin(), order.end());

      auto& q = queues_[static_cast<std::size_t>(c)];
      for (std::size_t k : order) {
        q.push_back(Exemplar{std::move(normalized[k]), clock_++});
        report.admitted[static_cast<std::size_t>(c)].push_back(candidates[k]);
        if (q.size() > config_.capacity) {
          q.pop_front();
          ++report.evicted;
        }
      }
    }
    return report;
  }

  // Text snapshot: a header line, then one record per exemplar:
  // class timestamp v_0 ... v_{d-1}
  void write_snapshot(std::ostream& os) const {
    os << "opendet-memory-bank 1 " << classes_.num_known() << ' ' << dim_ << ' ' << config_.capacity << ' '
       << config_.sample_count << ' ' << std::setprecision(17) << config_.memory_iou << ' '
       << config_.batch_iou << ' ' << clock_ << '\n';
    for (int c = 0; c < classes_.num_known(); ++c) {
      for (const auto& e : queue(c)) {
        os << c << ' ' << e.timestamp;
        for (double v : e.embedding) os << ' ' << v;
        os << '\n';
      }
    }
  }

  static MemoryBank read_snapshot(std::istream& is) {
    std::string magic;
    int version = 0;
    int k = 0;
    std::size_t dim = 0;
    MemoryBankConfig cfg;
    std::uint64_t clock = 0;
    if (!(is >> magic >> version >> k >> dim >> cfg.capacity >> cfg.sample_count >> cfg.memory_iou >>
          cfg.batch_iou >> clock) ||
        magic != "opendet-memory-bank" || version != 1) {
      throw std::runtime_error("memory bank snapshot: bad header");
    }
    MemoryBank bank(ClassSpace(k), dim, cfg);
    bank.clock_ = clock;
    int c = 0;
    std::uint64_t ts = 0;
    std::size_t line = 1;
    while (is >> c >> ts) {
      ++line;
      Exemplar e{Vector(dim), ts};
      for (double& v : e.embedding) {
        if (!(is >> v)) throw std::runtime_error("memory bank snapshot: short record at line " + std::to_string(line));
      }
      auto& q = bank.queues_.at(bank.checked(c));
      if (!q.empty() && q.back().timestamp >= ts) {
        throw std::runtime_error("memory bank snapshot: timestamps not increasing at line " + std::to_string(line));
      }
      q.push_back(std::move(e));
      if (q.size() > cfg.capacity) throw std::runtime_error("memory bank snapshot: queue exceeds capacity");
    }
    return bank;
  }

 private:
  std::size_t checked(int c) const {
    if (!classes_.is_known(c)) throw std::out_of_range("memory bank: class " + std::to_string(c) + " is not known");
    return static_cast<std::size_t>(c);
  }

  ClassSpace classes_;
  std::size_t dim_ = 0;
  MemoryBankConfig config_;
  std::vector<std::deque<Exemplar>> queues_;
  std::uint64_t clock_ = 0;
};

// Foreground proposals with IoU > T_b, in input order.
inline std::vector<std::size_t> select_ic_anchors(const std::vector<Proposal>& proposals,
                                                  const MemoryBankConfig& config) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    if (proposals[i].is_foreground && proposals[i].iou_with_gt > config.batch_iou) out.push_back(i);
  }
  return out;
}

}  // namespace opendet

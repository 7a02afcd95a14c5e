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
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "opendet/latent_core.hpp"

namespace opendet {

enum class MiningMethod { kMaxEntropy, kMinMaxProbability, kRandom };
enum class MiningMode { kBalancedFgBg, kFgOnly, kAll };

inline std::string_view to_string(MiningMethod m) {
  switch (m) {
    case MiningMethod::kMaxEntropy: return "max_entropy";
    case MiningMethod::kMinMaxProbability: return "min_max_probability";
    case MiningMethod::kRandom: return "random";
  }
  return "?";
}

inline std::string_view to_string(MiningMode m) {
  switch (m) {
    case MiningMode::kBalancedFgBg: return "balanced_fg_bg";
    case MiningMode::kFgOnly: return "fg_only";
    case MiningMode::kAll: return "all";
  }
  return "?";
}

inline MiningMethod parse_mining_method(std::string_view s) {
  for (auto m : {MiningMethod::kMaxEntropy, MiningMethod::kMinMaxProbability, MiningMethod::kRandom}) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown mining method: " + std::string(s));
}

inline MiningMode parse_mining_mode(std::string_view s) {
  for (auto m : {MiningMode::kBalancedFgBg, MiningMode::kFgOnly, MiningMode::kAll}) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown mining mode: " + std::string(s));
}

struct MiningConfig {
  std::size_t k = 3;
  MiningMethod method = MiningMethod::kMinMaxProbability;
  MiningMode mode = MiningMode::kBalancedFgBg;

  void validate() const {
    if (k < 1) throw std::invalid_argument("mining.k must be >= 1");
  }
};

struct MiningCandidate {
  std::span<const double> probs;
  bool is_foreground = false;
};

// Uniform integer in [0, bound) from raw 64-bit draws; rejection keeps it
// unbiased and independent of the standard library's distribution code.
inline std::uint64_t bounded_draw(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return x % bound;
}

namespace detail {

// Larger uncertainty first; ties by lower index.
inline std::vector<std::size_t> rank_by_uncertainty(std::span<const MiningCandidate> cands,
                                                    const std::vector<std::size_t>& pool,
                                                    MiningMethod method) {
  std::vector<double> u(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto p = cands[pool[i]].probs;
    u[i] = method == MiningMethod::kMaxEntropy ? entropy(p) : -p[argmax(p)];
  }
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return u[a] > u[b]; });
  std::vector<std::size_t> out(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) out[i] = pool[order[i]];
  return out;
}

inline std::vector<std::size_t> take(std::span<const MiningCandidate> cands, const std::vector<std::size_t>& pool,
                                     std::size_t count, MiningMethod method, std::mt19937_64& rng) {
  count = std::min(count, pool.size());
  if (method == MiningMethod::kRandom) {
    // Partial Fisher-Yates.
    std::vector<std::size_t> p(pool);
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(bounded_draw(rng, p.size() - i));
      std::swap(p[i], p[j]);
    }
    p.resize(count);
    return p;
  }
  auto ranked = rank_by_uncertainty(cands, pool, method);
  ranked.resize(count);
  return ranked;
}

}  // namespace detail

// Selects proposals for the unknown-probability loss. Returns indices into
// `cands`: foreground picks first, then background picks.
inline std::vector<std::size_t> mine_hard_examples(std::span<const MiningCandidate> cands,
                                                   const MiningConfig& config, std::uint64_t seed) {
  config.validate();
  std::vector<std::size_t> fg;
  std::vector<std::size_t> bg;
  for (std::size_t i = 0; i < cands.size(); ++i) (cands[i].is_foreground ? fg : bg).push_back(i);

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> out;
  switch (config.mode) {
    case MiningMode::kBalancedFgBg: {
      out = detail::take(cands, fg, config.k, config.method, rng);
      const auto b = detail::take(cands, bg, config.k, config.method, rng);
      out.insert(out.end(), b.begin(), b.end());
      break;
    }
    case MiningMode::kFgOnly:
      out = detail::take(cands, fg, config.k, config.method, rng);
      break;
    case MiningMode::kAll: {
      out = detail::take(cands, fg, fg.size(), config.method, rng);
      const auto b = detail::take(cands, bg, fg.size(), config.method, rng);
      out.insert(out.end(), b.begin(), b.end());
      break;
    }
  }
  return out;
}

}  // namespace opendet

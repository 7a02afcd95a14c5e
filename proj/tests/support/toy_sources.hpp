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

// Seeded annotation sources for split construction. The known source holds
// close-set classes plus a stray class; the open source mixes close-set,
// group and unrelated objects per image.

#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "opendet/annotations.hpp"
#include "opendet/mining.hpp"

namespace toy_sources {

using opendet::CategoryId;

inline const std::vector<CategoryId> kCloseSet{1, 2, 3};
inline const std::vector<CategoryId> kGroupA{10, 11};
inline const std::vector<CategoryId> kGroupB{12, 13};
inline constexpr CategoryId kStray = 20;
inline constexpr CategoryId kUnknownLabel = 99;

inline opendet::AnnotationSet make_source(std::size_t n, std::uint64_t seed, opendet::ImageId first_id,
                                          const std::vector<std::vector<CategoryId>>& palettes) {
  std::mt19937_64 rng(seed);
  auto draw = [&](std::size_t bound) { return static_cast<std::size_t>(opendet::bounded_draw(rng, bound)); };
  opendet::AnnotationSet s;
  std::vector<CategoryId> all;
  for (const auto& p : palettes) all.insert(all.end(), p.begin(), p.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  for (CategoryId c : all) s.categories.push_back({c, "class_" + std::to_string(c)});
  std::int64_t ann = 1;
  for (std::size_t i = 0; i < n; ++i) {
    const opendet::ImageId id = first_id + static_cast<opendet::ImageId>(i);
    s.images.push_back({id, "img_" + std::to_string(id) + ".jpg", 64, 48});
    const auto& palette = palettes[draw(palettes.size())];
    const std::size_t objects = 1 + draw(4);
    for (std::size_t k = 0; k < objects; ++k) {
      const double x = static_cast<double>(draw(40));
      const double y = static_cast<double>(draw(30));
      s.annotations.push_back({id, palette[draw(palette.size())], {x, y, 8.0, 8.0}, ann++, false});
    }
  }
  return s;
}

inline opendet::AnnotationSet known_source(std::size_t n, std::uint64_t seed) {
  return make_source(n, seed, 1000, {{1, 2, 3}, {1, 2, 3, kStray}, {kStray}});
}

inline opendet::AnnotationSet open_source(std::size_t n, std::uint64_t seed) {
  return make_source(n, seed, 5000, {{1, 2, 3}, {10, 11}, {12, 13, kStray}, {1, 10, 12}, {2, 11, 13, kStray}});
}

}  // namespace toy_sources

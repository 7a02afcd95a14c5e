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

// Open-set test split construction from two annotation sources.
//
// The known source contributes images with close-set objects. The open source
// contributes images chosen by containment mode:
//   containing  images holding at least one object of the open-set groups;
//               close-set objects may co-occur
//   disjoint    images holding open-set objects and no close-set object
//
// Open-set objects are relabeled to the single unknown label. Objects of
// classes outside both lists are dropped.
//
// Spec file:
//   {"mode": "containing" | "disjoint",
//    "close_set": [ids], "open_set_groups": [[ids], ...],
//    "known_images": n,            optional, default all eligible
//    "open_images": m,             optional, exclusive with wilderness_ratio
//    "wilderness_ratio": r,        optional, m = round(r * n)
//    "unknown_label": id, "seed": s}

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "opendet/annotations.hpp"
#include "opendet/mining.hpp"

namespace opendet {

enum class ContainmentMode { kContaining, kDisjoint };

inline std::string_view to_string(ContainmentMode m) {
  return m == ContainmentMode::kContaining ? "containing" : "disjoint";
}

inline ContainmentMode parse_containment_mode(std::string_view s) {
  if (s == "containing") return ContainmentMode::kContaining;
  if (s == "disjoint") return ContainmentMode::kDisjoint;
  throw std::invalid_argument("unknown containment mode: " + std::string(s));
}

class SplitShortfall : public std::runtime_error {
 public:
  SplitShortfall(const std::string& what_source, std::size_t requested, std::size_t eligible)
      : std::runtime_error("insufficient eligible " + what_source + " images: requested " + std::to_string(requested) +
                           ", eligible " + std::to_string(eligible) + ", shortfall " +
                           std::to_string(requested - eligible)),
        requested_(requested),
        eligible_(eligible) {}

  std::size_t requested() const { return requested_; }
  std::size_t eligible() const { return eligible_; }
  std::size_t shortfall() const { return requested_ - eligible_; }

 private:
  std::size_t requested_;
  std::size_t eligible_;
};

struct SplitSpec {
  ContainmentMode mode = ContainmentMode::kContaining;
  std::vector<CategoryId> close_set;
  std::vector<std::vector<CategoryId>> open_set_groups;
  std::optional<std::size_t> known_images;
  std::optional<std::size_t> open_images;
  std::optional<double> wilderness_ratio;
  CategoryId unknown_label = -1;
  std::uint64_t seed = 0;

  std::set<CategoryId> open_set() const {
    std::set<CategoryId> s;
    for (const auto& g : open_set_groups) s.insert(g.begin(), g.end());
    return s;
  }

  void validate() const {
    if (close_set.empty()) throw std::invalid_argument("split spec: close_set is empty");
    const auto open = open_set();
    if (open.empty()) throw std::invalid_argument("split spec: open_set_groups is empty");
    for (CategoryId c : close_set) {
      if (open.contains(c)) {
        throw std::invalid_argument("split spec: class " + std::to_string(c) + " is in both close and open set");
      }
    }
    if (open.contains(unknown_label) ||
        std::find(close_set.begin(), close_set.end(), unknown_label) != close_set.end()) {
      throw std::invalid_argument("split spec: unknown_label collides with a class id");
    }
    if (wilderness_ratio && !(*wilderness_ratio >= 0.0)) {
      throw std::invalid_argument("split spec: wilderness_ratio must be >= 0");
    }
    if (wilderness_ratio && open_images) {
      throw std::invalid_argument("split spec: give open_images or wilderness_ratio, not both");
    }
  }
};

struct SplitResult {
  std::vector<ImageId> known_image_ids;
  std::vector<ImageId> open_image_ids;
  AnnotationSet open;   // selected open-source images only
  AnnotationSet joint;  // known and open images together
  EvalSplit eval_split;
  std::map<CategoryId, CategoryId> relabeling;

  // Images holding unknown objects over images holding known objects.
  double realized_wilderness_ratio() const {
    std::set<ImageId> with_known;
    std::set<ImageId> with_unknown;
    for (const auto& g : joint.annotations) (g.is_unknown ? with_unknown : with_known).insert(g.image_id);
    return with_known.empty() ? 0.0
                              : static_cast<double>(with_unknown.size()) / static_cast<double>(with_known.size());
  }
};

namespace detail {

// Seeded choice of `count` ids, returned in ascending order.
inline std::vector<ImageId> choose_images(std::vector<ImageId> eligible, std::optional<std::size_t> count,
                                          std::mt19937_64& rng, const std::string& source) {
  std::sort(eligible.begin(), eligible.end());
  const std::size_t want = count.value_or(eligible.size());
  if (want > eligible.size()) throw SplitShortfall(source, want, eligible.size());
  for (std::size_t i = 0; i < want; ++i) {
    const auto j = i + static_cast<std::size_t>(bounded_draw(rng, eligible.size() - i));
    std::swap(eligible[i], eligible[j]);
  }
  eligible.resize(want);
  std::sort(eligible.begin(), eligible.end());
  return eligible;
}

inline std::map<ImageId, std::vector<const GroundTruthRecord*>> by_image(const AnnotationSet& s) {
  std::map<ImageId, std::vector<const GroundTruthRecord*>> m;
  for (const auto& im : s.images) m[im.id];
  for (const auto& g : s.annotations) m[g.image_id].push_back(&g);
  return m;
}

}  // namespace detail

inline SplitResult build_split(const SplitSpec& spec, const AnnotationSet& known_source,
                               const AnnotationSet& open_source) {
  spec.validate();
  const std::set<CategoryId> close(spec.close_set.begin(), spec.close_set.end());
  const std::set<CategoryId> open = spec.open_set();
  for (CategoryId c : close) {
    if (!known_source.has_category(c)) {
      throw std::invalid_argument("split spec: close-set class " + std::to_string(c) + " not in the known source");
    }
  }
  for (CategoryId c : open) {
    if (!open_source.has_category(c)) {
      throw std::invalid_argument("split spec: open-set class " + std::to_string(c) + " not in the open source");
    }
  }

  const auto known_by_image = detail::by_image(known_source);
  const auto open_by_image = detail::by_image(open_source);
  auto has = [](const std::vector<const GroundTruthRecord*>& anns, const std::set<CategoryId>& classes) {
    return std::any_of(anns.begin(), anns.end(), [&](const auto* g) { return classes.contains(g->class_id); });
  };

  std::vector<ImageId> known_eligible;
  for (const auto& [id, anns] : known_by_image) {
    if (has(anns, close)) known_eligible.push_back(id);
  }
  std::vector<ImageId> open_eligible;
  for (const auto& [id, anns] : open_by_image) {
    if (!has(anns, open)) continue;
    if (spec.mode == ContainmentMode::kDisjoint && has(anns, close)) continue;
    open_eligible.push_back(id);
  }

  std::mt19937_64 rng(spec.seed);
  SplitResult r;
  r.known_image_ids = detail::choose_images(known_eligible, spec.known_images, rng, "known-source");
  std::optional<std::size_t> open_count = spec.open_images;
  if (spec.wilderness_ratio) {
    open_count = static_cast<std::size_t>(
        std::llround(*spec.wilderness_ratio * static_cast<double>(r.known_image_ids.size())));
  }
  r.open_image_ids = detail::choose_images(open_eligible, open_count, rng, "open-source");

  for (const auto& id : r.known_image_ids) {
    if (std::binary_search(r.open_image_ids.begin(), r.open_image_ids.end(), id)) {
      throw std::invalid_argument("split: image id " + std::to_string(id) + " selected from both sources");
    }
  }

  for (CategoryId c : open) r.relabeling[c] = spec.unknown_label;
  r.eval_split.known = spec.close_set;
  r.eval_split.unknown_label = spec.unknown_label;

  std::vector<CategoryInfo> categories;
  for (const auto& c : known_source.categories) {
    if (close.contains(c.id)) categories.push_back(c);
  }
  categories.push_back({spec.unknown_label, "unknown"});
  r.open.categories = categories;
  r.joint.categories = categories;

  auto append = [&](const AnnotationSet& src, const std::vector<ImageId>& ids,
                    const std::map<ImageId, std::vector<const GroundTruthRecord*>>& anns, bool to_open) {
    std::set<ImageId> chosen(ids.begin(), ids.end());
    for (const auto& im : src.images) {
      if (!chosen.contains(im.id)) continue;
      r.joint.images.push_back(im);
      if (to_open) r.open.images.push_back(im);
      for (const auto* g : anns.at(im.id)) {
        GroundTruthRecord out = *g;
        if (open.contains(g->class_id)) {
          out.class_id = spec.unknown_label;
          out.is_unknown = true;
        } else if (!close.contains(g->class_id)) {
          continue;
        }
        r.joint.annotations.push_back(out);
        if (to_open) r.open.annotations.push_back(out);
      }
    }
  };
  append(known_source, r.known_image_ids, known_by_image, false);
  append(open_source, r.open_image_ids, open_by_image, true);
  return r;
}

inline SplitSpec parse_split_spec(const nlohmann::json& doc, const std::string& src = "<split spec>") {
  using detail::number;
  using detail::require;
  SplitSpec s;
  try {
    s.mode = parse_containment_mode(require(doc, "mode", src).get<std::string>());
  } catch (const nlohmann::json::exception&) {
    throw ParseError(src + ": 'mode' must be a string");
  } catch (const std::invalid_argument& e) {
    throw ParseError(src + ": " + e.what());
  }
  const auto& close = require(doc, "close_set", src);
  if (!close.is_array()) throw ParseError(src + ": 'close_set' must be an array");
  for (std::size_t i = 0; i < close.size(); ++i) {
    s.close_set.push_back(number<CategoryId>(close[i], src + ": close_set[" + std::to_string(i) + "]"));
  }
  const auto& groups = require(doc, "open_set_groups", src);
  if (!groups.is_array()) throw ParseError(src + ": 'open_set_groups' must be an array of arrays");
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (!groups[g].is_array()) throw ParseError(src + ": open_set_groups[" + std::to_string(g) + "] must be an array");
    std::vector<CategoryId> ids;
    for (std::size_t i = 0; i < groups[g].size(); ++i) {
      ids.push_back(number<CategoryId>(groups[g][i], src + ": open_set_groups[" + std::to_string(g) + "][" +
                                                         std::to_string(i) + "]"));
    }
    s.open_set_groups.push_back(std::move(ids));
  }
  if (doc.contains("known_images")) s.known_images = number<std::size_t>(doc["known_images"], src + ": known_images");
  if (doc.contains("open_images")) s.open_images = number<std::size_t>(doc["open_images"], src + ": open_images");
  if (doc.contains("wilderness_ratio")) {
    s.wilderness_ratio = number<double>(doc["wilderness_ratio"], src + ": wilderness_ratio");
  }
  s.unknown_label = number<CategoryId>(require(doc, "unknown_label", src), src + ": unknown_label");
  if (doc.contains("seed")) s.seed = number<std::uint64_t>(doc["seed"], src + ": seed");
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ParseError(src + ": " + e.what());
  }
  return s;
}

inline SplitSpec ingest_split_spec(const std::string& path) {
  return parse_split_spec(detail::read_json_file(path), path);
}

// Interchange document plus the applied relabeling.
inline nlohmann::json manifest_to_json(const AnnotationSet& set, const std::map<CategoryId, CategoryId>& relabeling) {
  auto doc = annotations_to_json(set);
  doc["relabeling"] = nlohmann::json::array();
  for (const auto& [from, to] : relabeling) doc["relabeling"].push_back({{"from", from}, {"to", to}});
  return doc;
}

}  // namespace opendet

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

// Reader and writer for the COCO-style interchange document:
//
//   {
//     "images":      [{"id": 1, "file_name": "a.jpg", "width": 640, "height": 480}, ...],
//     "categories":  [{"id": 3, "name": "car"}, ...],
//     "annotations": [{"id": 7, "image_id": 1, "category_id": 3, "bbox": [x, y, w, h]}, ...]
//   }
//
// Detection files carry the same header and a "detections" array whose
// entries additionally hold "score".

#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "opendet/openset_eval.hpp"

namespace opendet {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ImageInfo {
  ImageId id = 0;
  std::string file_name;
  int width = 0;
  int height = 0;
  friend bool operator==(const ImageInfo&, const ImageInfo&) = default;
};

struct CategoryInfo {
  CategoryId id = 0;
  std::string name;
  friend bool operator==(const CategoryInfo&, const CategoryInfo&) = default;
};

struct AnnotationSet {
  std::vector<ImageInfo> images;
  std::vector<CategoryInfo> categories;
  std::vector<GroundTruthRecord> annotations;
  std::vector<DetectionRecord> detections;

  bool has_category(CategoryId c) const {
    for (const auto& k : categories) {
      if (k.id == c) return true;
    }
    return false;
  }
};

namespace detail {

using nlohmann::json;

inline const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) throw ParseError(where + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(where + ": missing field '" + key + "'");
  return *it;
}

template <typename T>
T number(const json& v, const std::string& where) {
  if (!v.is_number()) throw ParseError(where + ": expected a number");
  if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw ParseError(where + ": expected an integer");
  }
  return v.get<T>();
}

inline Box parse_bbox(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 4) throw ParseError(where + ": bbox must be [x, y, width, height]");
  Box b{number<double>(v[0], where + ".bbox[0]"), number<double>(v[1], where + ".bbox[1]"),
        number<double>(v[2], where + ".bbox[2]"), number<double>(v[3], where + ".bbox[3]")};
  if (!(b.width > 0.0)) throw ParseError(where + ": bbox width must be positive");
  if (!(b.height > 0.0)) throw ParseError(where + ": bbox height must be positive");
  return b;
}

inline std::string entry_name(const char* array, std::size_t i, const json& e) {
  std::string s = std::string(array) + "[" + std::to_string(i) + "]";
  if (e.is_object() && e.contains("id") && e["id"].is_number_integer()) {
    s += " (id " + std::to_string(e["id"].get<std::int64_t>()) + ")";
  }
  return s;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open file");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": malformed document at byte " + std::to_string(e.byte) + ": " + e.what());
  }
}

inline AnnotationSet parse_header(const json& doc, const std::string& src) {
  if (!doc.is_object()) throw ParseError(src + ": top-level value must be an object");
  AnnotationSet set;
  const auto& images = require(doc, "images", src);
  if (!images.is_array()) throw ParseError(src + ": 'images' must be an array");
  std::set<ImageId> seen_images;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto where = src + ": " + entry_name("images", i, images[i]);
    ImageInfo im;
    im.id = number<ImageId>(require(images[i], "id", where), where + ".id");
    if (images[i].contains("file_name")) im.file_name = images[i]["file_name"].get<std::string>();
    if (images[i].contains("width")) im.width = number<int>(images[i]["width"], where + ".width");
    if (images[i].contains("height")) im.height = number<int>(images[i]["height"], where + ".height");
    if (!seen_images.insert(im.id).second) throw ParseError(where + ": duplicate image id");
    set.images.push_back(std::move(im));
  }
  const auto& cats = require(doc, "categories", src);
  if (!cats.is_array()) throw ParseError(src + ": 'categories' must be an array");
  for (std::size_t i = 0; i < cats.size(); ++i) {
    const auto where = src + ": " + entry_name("categories", i, cats[i]);
    CategoryInfo c;
    c.id = number<CategoryId>(require(cats[i], "id", where), where + ".id");
    if (cats[i].contains("name")) c.name = cats[i]["name"].get<std::string>();
    if (set.has_category(c.id)) throw ParseError(where + ": duplicate category id");
    set.categories.push_back(std::move(c));
  }
  return set;
}

inline void check_refs(const AnnotationSet& set, const std::set<ImageId>& images, ImageId image,
                       CategoryId category, const std::string& where) {
  if (!images.contains(image)) throw ParseError(where + ": unknown image_id " + std::to_string(image));
  if (!set.has_category(category)) {
    throw ParseError(where + ": category_id " + std::to_string(category) + " not in the category list");
  }
}

}  // namespace detail

inline AnnotationSet parse_annotations(const nlohmann::json& doc, const std::string& src = "<document>") {
  using detail::number;
  auto set = detail::parse_header(doc, src);
  std::set<ImageId> images;
  for (const auto& im : set.images) images.insert(im.id);
  const auto& anns = detail::require(doc, "annotations", src);
  if (!anns.is_array()) throw ParseError(src + ": 'annotations' must be an array");
  for (std::size_t i = 0; i < anns.size(); ++i) {
    const auto where = src + ": " + detail::entry_name("annotations", i, anns[i]);
    GroundTruthRecord g;
    g.id = anns[i].is_object() && anns[i].contains("id") ? number<std::int64_t>(anns[i]["id"], where + ".id")
                                                        : static_cast<std::int64_t>(i);
    g.image_id = number<ImageId>(detail::require(anns[i], "image_id", where), where + ".image_id");
    g.class_id = number<CategoryId>(detail::require(anns[i], "category_id", where), where + ".category_id");
    g.box = detail::parse_bbox(detail::require(anns[i], "bbox", where), where);
    detail::check_refs(set, images, g.image_id, g.class_id, where);
    set.annotations.push_back(g);
  }
  return set;
}

inline AnnotationSet parse_detections(const nlohmann::json& doc, const std::string& src = "<document>") {
  using detail::number;
  auto set = detail::parse_header(doc, src);
  std::set<ImageId> images;
  for (const auto& im : set.images) images.insert(im.id);
  const auto& dets = detail::require(doc, "detections", src);
  if (!dets.is_array()) throw ParseError(src + ": 'detections' must be an array");
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const auto where = src + ": " + detail::entry_name("detections", i, dets[i]);
    DetectionRecord d;
    d.image_id = number<ImageId>(detail::require(dets[i], "image_id", where), where + ".image_id");
    d.class_id = number<CategoryId>(detail::require(dets[i], "category_id", where), where + ".category_id");
    d.score = number<double>(detail::require(dets[i], "score", where), where + ".score");
    if (!(d.score >= 0.0 && d.score <= 1.0)) throw ParseError(where + ": score outside [0, 1]");
    d.box = detail::parse_bbox(detail::require(dets[i], "bbox", where), where);
    detail::check_refs(set, images, d.image_id, d.class_id, where);
    set.detections.push_back(d);
  }
  return set;
}

inline AnnotationSet ingest_annotations(const std::string& path) {
  return parse_annotations(detail::read_json_file(path), path);
}

inline AnnotationSet ingest_detections(const std::string& path) {
  return parse_detections(detail::read_json_file(path), path);
}

inline nlohmann::json header_to_json(const AnnotationSet& set) {
  nlohmann::json doc;
  doc["images"] = nlohmann::json::array();
  for (const auto& im : set.images) {
    nlohmann::json j{{"id", im.id}};
    if (!im.file_name.empty()) j["file_name"] = im.file_name;
    if (im.width > 0) j["width"] = im.width;
    if (im.height > 0) j["height"] = im.height;
    doc["images"].push_back(std::move(j));
  }
  doc["categories"] = nlohmann::json::array();
  for (const auto& c : set.categories) doc["categories"].push_back({{"id", c.id}, {"name", c.name}});
  return doc;
}

inline nlohmann::json annotations_to_json(const AnnotationSet& set) {
  auto doc = header_to_json(set);
  doc["annotations"] = nlohmann::json::array();
  for (const auto& g : set.annotations) {
    doc["annotations"].push_back({{"id", g.id},
                                  {"image_id", g.image_id},
                                  {"category_id", g.class_id},
                                  {"bbox", {g.box.x, g.box.y, g.box.width, g.box.height}}});
  }
  return doc;
}

inline nlohmann::json detections_to_json(const AnnotationSet& set) {
  auto doc = header_to_json(set);
  doc["detections"] = nlohmann::json::array();
  for (const auto& d : set.detections) {
    doc["detections"].push_back({{"image_id", d.image_id},
                                 {"category_id", d.class_id},
                                 {"score", d.score},
                                 {"bbox", {d.box.x, d.box.y, d.box.width, d.box.height}}});
  }
  return doc;
}

inline void write_json_file(const std::string& path, const nlohmann::json& doc) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << doc.dump(1) << '\n';
}

// Split file: {"known": [ids], "unknown": [ids], "unknown_label": id}
inline EvalSplit parse_eval_split(const nlohmann::json& doc, const std::string& src = "<split>") {
  using detail::number;
  EvalSplit s;
  const auto& known = detail::require(doc, "known", src);
  if (!known.is_array()) throw ParseError(src + ": 'known' must be an array");
  for (std::size_t i = 0; i < known.size(); ++i) {
    s.known.push_back(number<CategoryId>(known[i], src + ": known[" + std::to_string(i) + "]"));
  }
  if (doc.contains("unknown")) {
    const auto& unknown = doc["unknown"];
    if (!unknown.is_array()) throw ParseError(src + ": 'unknown' must be an array");
    for (std::size_t i = 0; i < unknown.size(); ++i) {
      s.unknown.push_back(number<CategoryId>(unknown[i], src + ": unknown[" + std::to_string(i) + "]"));
    }
  }
  s.unknown_label = number<CategoryId>(detail::require(doc, "unknown_label", src), src + ": unknown_label");
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ParseError(src + ": " + e.what());
  }
  return s;
}

inline EvalSplit ingest_eval_split(const std::string& path) {
  return parse_eval_split(detail::read_json_file(path), path);
}

inline nlohmann::json eval_split_to_json(const EvalSplit& s) {
  return {{"known", s.known}, {"unknown", s.unknown}, {"unknown_label", s.unknown_label}};
}

}  // namespace opendet

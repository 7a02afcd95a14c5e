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

// Open-set detection metrics.
//
// Matching follows the VOC protocol: within one image and class, detections
// in descending score order (ties by input order) claim the unmatched ground
// truth with the highest IoU >= threshold. On top of it:
//
//   AP     all-point interpolated area under the PR curve
//   mAP_K  mean AP over known classes that have ground truth
//   WI     100 * FP_U / (TP_K + FP_K) at the largest score threshold whose
//          joint known-class recall reaches the requested level
//   AOSE   number of unknown objects claimed by known-labeled detections
//   AP_U   class-agnostic AP of unknown-labeled detections against the
//          merged unknown ground truth

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "opendet/latent_core.hpp"

namespace opendet {

struct Box {
  double x = 0.0;
  double y = 0.0;
  double width = 0.0;
  double height = 0.0;

  double area() const { return width * height; }
  friend bool operator==(const Box&, const Box&) = default;
};

inline double iou(const Box& a, const Box& b) {
  if (!(a.width > 0.0 && a.height > 0.0 && b.width > 0.0 && b.height > 0.0)) {
    throw std::invalid_argument("iou: zero-area box");
  }
  const double ix = std::max(0.0, std::min(a.x + a.width, b.x + b.width) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.height, b.y + b.height) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return inter / uni;
}

using ImageId = std::int64_t;
using CategoryId = std::int64_t;

struct GroundTruthRecord {
  ImageId image_id = 0;
  CategoryId class_id = 0;
  Box box;
  std::int64_t id = 0;
  bool is_unknown = false;
  friend bool operator==(const GroundTruthRecord&, const GroundTruthRecord&) = default;
};

struct DetectionRecord {
  ImageId image_id = 0;
  CategoryId class_id = 0;
  double score = 0.0;
  Box box;
  friend bool operator==(const DetectionRecord&, const DetectionRecord&) = default;
};

// Evaluation class registry: which category ids are known, which are unknown,
// and the single label detectors use for "unknown".
struct EvalSplit {
  std::vector<CategoryId> known;
  std::vector<CategoryId> unknown;
  CategoryId unknown_label = -1;

  bool is_known(CategoryId c) const { return std::find(known.begin(), known.end(), c) != known.end(); }
  bool is_unknown(CategoryId c) const {
    return c == unknown_label || std::find(unknown.begin(), unknown.end(), c) != unknown.end();
  }
  bool contains(CategoryId c) const { return is_known(c) || is_unknown(c); }

  void validate() const {
    for (CategoryId c : known) {
      if (std::find(unknown.begin(), unknown.end(), c) != unknown.end() || c == unknown_label) {
        throw std::invalid_argument("split: class " + std::to_string(c) + " is both known and unknown");
      }
    }
  }
};

struct EvalOptions {
  double iou_threshold = 0.5;
  double recall_level = 0.8;
  double score_floor = 0.05;
};

struct MatchLabel {
  bool tp = false;
  std::ptrdiff_t gt_index = -1;  // index into the gt span when tp
};

// Greedy single-assignment matching; all inputs are taken as one class.
inline std::vector<MatchLabel> match_detections(std::span<const DetectionRecord> dets,
                                                std::span<const GroundTruthRecord> gts,
                                                double iou_threshold = 0.5) {
  std::vector<MatchLabel> labels(dets.size());
  std::unordered_map<ImageId, std::vector<std::size_t>> gts_by_image;
  for (std::size_t g = 0; g < gts.size(); ++g) gts_by_image[gts[g].image_id].push_back(g);

  std::vector<std::size_t> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

  std::vector<char> taken(gts.size(), 0);
  for (std::size_t i : order) {
    auto it = gts_by_image.find(dets[i].image_id);
    if (it == gts_by_image.end()) continue;
    double best = -1.0;
    std::ptrdiff_t best_g = -1;
    for (std::size_t g : it->second) {
      if (taken[g]) continue;
      const double o = iou(dets[i].box, gts[g].box);
      if (o >= iou_threshold && o > best) {
        best = o;
        best_g = static_cast<std::ptrdiff_t>(g);
      }
    }
    if (best_g >= 0) {
      taken[static_cast<std::size_t>(best_g)] = 1;
      labels[i] = {true, best_g};
    }
  }
  return labels;
}

struct ScoredMatch {
  double score = 0.0;
  bool tp = false;
};

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

struct ApResult {
  double ap = 0.0;
  // Set when there is neither ground truth nor a detection to score.
  bool undefined = false;
  std::vector<PrPoint> curve;  // raw PR points in descending score order
};

// All-point interpolation: sum of recall steps times the running maximum of
// precision to the right.
inline ApResult average_precision(std::span<const ScoredMatch> matches, std::size_t num_gt) {
  ApResult r;
  std::size_t tps = 0;
  for (const auto& m : matches) tps += m.tp ? 1 : 0;
  if (tps > num_gt) throw std::invalid_argument("average_precision: more true positives than ground truths");
  if (num_gt == 0) {
    r.undefined = matches.empty();
    return r;
  }
  std::vector<std::size_t> order(matches.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return matches[a].score > matches[b].score; });
  std::size_t tp = 0;
  std::size_t fp = 0;
  r.curve.reserve(order.size());
  for (std::size_t i : order) {
    (matches[i].tp ? tp : fp) += 1;
    r.curve.push_back({static_cast<double>(tp) / static_cast<double>(num_gt),
                       static_cast<double>(tp) / static_cast<double>(tp + fp)});
  }
  double envelope = 0.0;
  std::vector<double> prec(r.curve.size());
  for (std::size_t i = r.curve.size(); i-- > 0;) {
    envelope = std::max(envelope, r.curve[i].precision);
    prec[i] = envelope;
  }
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < r.curve.size(); ++i) {
    r.ap += (r.curve[i].recall - prev_recall) * prec[i];
    prev_recall = r.curve[i].recall;
  }
  return r;
}

// Per-class matching of detections against ground truth of the same class.
inline std::vector<MatchLabel> match_by_class(std::span<const DetectionRecord> dets,
                                              std::span<const GroundTruthRecord> gts,
                                              double iou_threshold) {
  std::map<CategoryId, std::vector<std::size_t>> det_idx;
  std::map<CategoryId, std::vector<std::size_t>> gt_idx;
  for (std::size_t i = 0; i < dets.size(); ++i) det_idx[dets[i].class_id].push_back(i);
  for (std::size_t g = 0; g < gts.size(); ++g) gt_idx[gts[g].class_id].push_back(g);
  std::vector<MatchLabel> out(dets.size());
  for (const auto& [c, di] : det_idx) {
    std::vector<DetectionRecord> d;
    std::vector<GroundTruthRecord> g;
    for (std::size_t i : di) d.push_back(dets[i]);
    const auto git = gt_idx.find(c);
    if (git != gt_idx.end()) {
      for (std::size_t k : git->second) g.push_back(gts[k]);
    }
    const auto labels = match_detections(d, g, iou_threshold);
    for (std::size_t k = 0; k < di.size(); ++k) {
      out[di[k]].tp = labels[k].tp;
      out[di[k]].gt_index =
          labels[k].tp ? static_cast<std::ptrdiff_t>(git->second[static_cast<std::size_t>(labels[k].gt_index)]) : -1;
    }
  }
  return out;
}

inline ApResult class_average_precision(std::span<const DetectionRecord> dets,
                                        std::span<const GroundTruthRecord> gts, CategoryId c,
                                        double iou_threshold) {
  std::vector<DetectionRecord> d;
  std::vector<GroundTruthRecord> g;
  for (const auto& x : dets) {
    if (x.class_id == c) d.push_back(x);
  }
  for (const auto& x : gts) {
    if (x.class_id == c) g.push_back(x);
  }
  const auto labels = match_detections(d, g, iou_threshold);
  std::vector<ScoredMatch> sm(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) sm[i] = {d[i].score, labels[i].tp};
  return average_precision(sm, g.size());
}

// Unknown-labeled detections against all unknown ground truth merged into a
// single class.
inline ApResult ap_unknown(std::span<const DetectionRecord> dets, std::span<const GroundTruthRecord> gts,
                           const EvalSplit& split, double iou_threshold = 0.5) {
  std::vector<DetectionRecord> d;
  std::vector<GroundTruthRecord> g;
  for (const auto& x : dets) {
    if (x.class_id == split.unknown_label) d.push_back(x);
  }
  for (const auto& x : gts) {
    if (split.is_unknown(x.class_id)) g.push_back(x);
  }
  const auto labels = match_detections(d, g, iou_threshold);
  std::vector<ScoredMatch> sm(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) sm[i] = {d[i].score, labels[i].tp};
  return average_precision(sm, g.size());
}

struct WildernessImpact {
  double wi = 0.0;  // scaled by 100
  std::size_t tp_k = 0;
  std::size_t fp_k = 0;
  std::size_t fp_u = 0;
  double threshold = 0.0;
  double recall = 0.0;
  // False when the requested recall level was not reached; the operating
  // point is then the one with the maximum achievable recall.
  bool recall_reached = false;
};

inline bool recall_meets(std::size_t tp, std::size_t num_gt, double level) {
  return num_gt > 0 && static_cast<double>(tp) >= level * static_cast<double>(num_gt) - 1e-9;
}

inline WildernessImpact wilderness_impact(std::span<const DetectionRecord> dets,
                                          std::span<const GroundTruthRecord> gts, const EvalSplit& split,
                                          double recall_level = 0.8, double iou_threshold = 0.5) {
  std::vector<DetectionRecord> kd;
  for (const auto& d : dets) {
    if (split.is_known(d.class_id)) kd.push_back(d);
  }
  std::vector<GroundTruthRecord> kg;
  std::unordered_map<ImageId, std::vector<const GroundTruthRecord*>> unknown_by_image;
  for (const auto& g : gts) {
    if (split.is_known(g.class_id)) kg.push_back(g);
    if (split.is_unknown(g.class_id)) unknown_by_image[g.image_id].push_back(&g);
  }
  const auto labels = match_by_class(kd, kg, iou_threshold);

  // 0 = TP_K, 1 = FP_K, 2 = FP_U
  std::vector<int> kind(kd.size());
  for (std::size_t i = 0; i < kd.size(); ++i) {
    if (labels[i].tp) {
      kind[i] = 0;
      continue;
    }
    kind[i] = 1;
    auto it = unknown_by_image.find(kd[i].image_id);
    if (it == unknown_by_image.end()) continue;
    for (const auto* g : it->second) {
      if (iou(kd[i].box, g->box) >= iou_threshold) {
        kind[i] = 2;
        break;
      }
    }
  }

  std::vector<std::size_t> order(kd.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return kd[a].score > kd[b].score; });

  WildernessImpact r;
  std::size_t counts[3] = {0, 0, 0};
  bool have_point = false;
  for (std::size_t pos = 0; pos < order.size();) {
    const double s = kd[order[pos]].score;
    while (pos < order.size() && kd[order[pos]].score == s) ++counts[kind[order[pos++]]];
    // Keep the highest-threshold point among those with the best recall.
    if (have_point && counts[0] <= r.tp_k) continue;
    have_point = true;
    r.tp_k = counts[0];
    r.fp_k = counts[1];
    r.fp_u = counts[2];
    r.threshold = s;
    r.recall = kg.empty() ? 0.0 : static_cast<double>(counts[0]) / static_cast<double>(kg.size());
    if (recall_meets(counts[0], kg.size(), recall_level)) {
      r.recall_reached = true;
      break;
    }
  }
  const std::size_t denom = r.tp_k + r.fp_k;
  r.wi = denom == 0 ? 0.0 : 100.0 * static_cast<double>(r.fp_u) / static_cast<double>(denom);
  return r;
}

// Unknown objects claimed by known-labeled detections; each object counts
// once.
inline std::size_t aose(std::span<const DetectionRecord> dets, std::span<const GroundTruthRecord> gts,
                        const EvalSplit& split, double iou_threshold = 0.5) {
  std::vector<DetectionRecord> kd;
  for (const auto& d : dets) {
    if (split.is_known(d.class_id)) kd.push_back(d);
  }
  std::vector<GroundTruthRecord> ug;
  for (const auto& g : gts) {
    if (split.is_unknown(g.class_id)) ug.push_back(g);
  }
  const auto labels = match_detections(kd, ug, iou_threshold);
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](const MatchLabel& m) { return m.tp; }));
}

struct LatentStatistics {
  double intra_class_variance = 0.0;
  double inter_class_distance = 0.0;
};

// intra: mean over classes of the mean squared distance to the class
// centroid. inter: mean pairwise Euclidean distance between centroids.
inline LatentStatistics latent_statistics(const std::vector<Vector>& embeddings, std::span<const int> labels) {
  if (embeddings.size() != labels.size()) throw std::invalid_argument("latent_statistics: label count mismatch");
  if (embeddings.empty()) throw std::invalid_argument("latent_statistics: no samples");
  const std::size_t d = embeddings.front().size();
  std::map<int, std::pair<Vector, std::size_t>> acc;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (embeddings[i].size() != d) throw std::invalid_argument("latent_statistics: dimension mismatch");
    auto& [sum, n] = acc[labels[i]];
    if (sum.empty()) sum.assign(d, 0.0);
    for (std::size_t k = 0; k < d; ++k) sum[k] += embeddings[i][k];
    ++n;
  }
  if (acc.size() < 2) throw std::invalid_argument("latent_statistics: need at least two classes");
  std::map<int, Vector> centroid;
  for (auto& [c, sn] : acc) {
    Vector m = sn.first;
    for (double& v : m) v /= static_cast<double>(sn.second);
    centroid[c] = std::move(m);
  }
  std::map<int, double> sq;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    const auto& m = centroid[labels[i]];
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += (embeddings[i][k] - m[k]) * (embeddings[i][k] - m[k]);
    sq[labels[i]] += s;
  }
  LatentStatistics r;
  for (const auto& [c, s] : sq) r.intra_class_variance += s / static_cast<double>(acc[c].second);
  r.intra_class_variance /= static_cast<double>(acc.size());
  std::size_t pairs = 0;
  for (auto a = centroid.begin(); a != centroid.end(); ++a) {
    for (auto b = std::next(a); b != centroid.end(); ++b) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += (a->second[k] - b->second[k]) * (a->second[k] - b->second[k]);
      r.inter_class_distance += std::sqrt(s);
      ++pairs;
    }
  }
  r.inter_class_distance /= static_cast<double>(pairs);
  return r;
}

struct EvalReport {
  std::map<CategoryId, double> per_class_ap;
  std::vector<CategoryId> undefined_ap_classes;
  double map_k = 0.0;
  double wi = 0.0;
  std::size_t aose = 0;
  double ap_u = 0.0;
  std::size_t tp_k = 0;
  std::size_t fp_k = 0;
  std::size_t fp_u = 0;
  double wi_threshold = 0.0;
  double wi_recall = 0.0;
  bool wi_recall_reached = false;
  std::size_t num_detections = 0;
  std::size_t num_known_gt = 0;
  std::size_t num_unknown_gt = 0;
  std::optional<LatentStatistics> latent;
};

// Drops detections below the score floor. Every metric is computed on the
// surviving set.
inline std::vector<DetectionRecord> apply_score_floor(std::span<const DetectionRecord> dets, double floor) {
  std::vector<DetectionRecord> out;
  for (const auto& d : dets) {
    if (d.score >= floor) out.push_back(d);
  }
  return out;
}

inline EvalReport evaluate(std::span<const DetectionRecord> all_dets, std::span<const GroundTruthRecord> gts,
                           const EvalSplit& split, const EvalOptions& options = {}) {
  split.validate();
  for (const auto& d : all_dets) {
    if (!split.is_known(d.class_id) && d.class_id != split.unknown_label) {
      throw std::invalid_argument("evaluate: detection class " + std::to_string(d.class_id) + " not in split");
    }
  }
  for (const auto& g : gts) {
    if (!split.contains(g.class_id)) {
      throw std::invalid_argument("evaluate: ground-truth class " + std::to_string(g.class_id) + " not in split");
    }
  }
  const auto dets = apply_score_floor(all_dets, options.score_floor);
  EvalReport r;
  r.num_detections = dets.size();
  std::set<CategoryId> with_gt;
  for (const auto& g : gts) {
    if (split.is_known(g.class_id)) {
      ++r.num_known_gt;
      with_gt.insert(g.class_id);
    } else {
      ++r.num_unknown_gt;
    }
  }
  for (CategoryId c : split.known) {
    const auto ap = class_average_precision(dets, gts, c, options.iou_threshold);
    r.per_class_ap[c] = ap.ap;
    if (ap.undefined) r.undefined_ap_classes.push_back(c);
  }
  if (!with_gt.empty()) {
    for (CategoryId c : with_gt) r.map_k += r.per_class_ap[c];
    r.map_k /= static_cast<double>(with_gt.size());
  }
  const auto wi = wilderness_impact(dets, gts, split, options.recall_level, options.iou_threshold);
  r.wi = wi.wi;
  r.tp_k = wi.tp_k;
  r.fp_k = wi.fp_k;
  r.fp_u = wi.fp_u;
  r.wi_threshold = wi.threshold;
  r.wi_recall = wi.recall;
  r.wi_recall_reached = wi.recall_reached;
  r.aose = aose(dets, gts, split, options.iou_threshold);
  r.ap_u = ap_unknown(dets, gts, split, options.iou_threshold).ap;
  return r;
}

}  // namespace opendet

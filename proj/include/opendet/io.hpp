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

// Artifact writers. Numbers are printed in shortest round-trip form so that
// identical runs produce identical bytes.

#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "opendet/openset_eval.hpp"
#include "opendet/trainer.hpp"

namespace opendet {

inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open file");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error(path + ": write failed");
}

inline std::string telemetry_to_csv(std::span<const StepTelemetry> rows) {
  std::ostringstream os;
  os << "iteration,ce,up,ic,gamma_t,up_weight,total,up_examples,ic_anchors\n";
  for (const auto& t : rows) {
    os << t.iteration << ',' << format_double(t.ce) << ',' << format_double(t.up) << ',' << format_double(t.ic) << ','
       << format_double(t.gamma_t) << ',' << format_double(t.up_weight) << ',' << format_double(t.total) << ','
       << t.up_examples << ',' << t.ic_anchors << '\n';
  }
  return os.str();
}

// APs are reported as percentages.
inline std::string report_to_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "metric,value\n";
  auto row = [&os](std::string_view k, const std::string& v) { os << k << ',' << v << '\n'; };
  row("mAP_K", format_double(100.0 * r.map_k));
  row("WI", format_double(r.wi));
  row("AOSE", std::to_string(r.aose));
  row("AP_U", format_double(100.0 * r.ap_u));
  row("TP_K", std::to_string(r.tp_k));
  row("FP_K", std::to_string(r.fp_k));
  row("FP_U", std::to_string(r.fp_u));
  row("wi_threshold", format_double(r.wi_threshold));
  row("wi_recall", format_double(r.wi_recall));
  row("wi_recall_reached", r.wi_recall_reached ? "1" : "0");
  row("num_detections", std::to_string(r.num_detections));
  row("num_known_gt", std::to_string(r.num_known_gt));
  row("num_unknown_gt", std::to_string(r.num_unknown_gt));
  for (const auto& [c, ap] : r.per_class_ap) row("AP/" + std::to_string(c), format_double(100.0 * ap));
  if (r.latent) {
    row("intra_class_variance", format_double(r.latent->intra_class_variance));
    row("inter_class_distance", format_double(r.latent->inter_class_distance));
  }
  return os.str();
}

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["mAP_K"] = 100.0 * r.map_k;
  j["WI"] = r.wi;
  j["AOSE"] = r.aose;
  j["AP_U"] = 100.0 * r.ap_u;
  j["TP_K"] = r.tp_k;
  j["FP_K"] = r.fp_k;
  j["FP_U"] = r.fp_u;
  j["wi_threshold"] = r.wi_threshold;
  j["wi_recall"] = r.wi_recall;
  j["wi_recall_reached"] = r.wi_recall_reached;
  j["num_detections"] = r.num_detections;
  j["num_known_gt"] = r.num_known_gt;
  j["num_unknown_gt"] = r.num_unknown_gt;
  auto& per = j["per_class_ap"] = nlohmann::ordered_json::object();
  for (const auto& [c, ap] : r.per_class_ap) per[std::to_string(c)] = 100.0 * ap;
  j["undefined_ap_classes"] = r.undefined_ap_classes;
  if (r.latent) {
    j["intra_class_variance"] = r.latent->intra_class_variance;
    j["inter_class_distance"] = r.latent->inter_class_distance;
  }
  return j;
}

struct ArtifactChecksum {
  std::string name;
  std::string fnv1a64;
};

struct RunManifest {
  std::string command;
  std::string config;  // resolved key=value snapshot, empty when not applicable
  std::uint64_t seed = 0;
  std::string output_directory;
  std::vector<ArtifactChecksum> artifacts;

  void add_artifact(const std::string& name, std::string_view content) {
    artifacts.push_back({name, hex64(fnv1a64(content))});
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["seed"] = seed;
    j["output_directory"] = output_directory;
    j["config"] = config;
    auto& arts = j["artifacts"] = nlohmann::ordered_json::array();
    for (const auto& a : artifacts) arts.push_back({{"name", a.name}, {"fnv1a64", a.fnv1a64}});
    return j;
  }
};

}  // namespace opendet

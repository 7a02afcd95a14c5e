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

#include <cmath>
#include <string>
#include <vector>

#include "metric_oracle.hpp"
#include "opendet/openset_eval.hpp"
#include "scenes.hpp"

namespace oracle {

// Real-valued metrics may differ from the reference only by rounding in the
// last bits; counts must agree exactly.
inline constexpr long double kRealTolerance = 1e-12L;

// Human-readable disagreements between the library and the reference on one
// scene; empty when they agree.
inline std::vector<std::string> disagreements(const scenes::Scene& sc) {
  std::vector<std::string> out;
  const auto lib = opendet::evaluate(sc.dets, sc.gts, sc.split);
  const auto ref = evaluate(sc.dets, sc.gts, sc.split);
  auto real = [&](const std::string& what, double got, long double want, long double scale = 1.0L) {
    if (std::fabs(static_cast<long double>(got) - want) > kRealTolerance * scale) {
      out.push_back(sc.name + ": " + what + " " + std::to_string(got) + " != " + std::to_string(static_cast<double>(want)));
    }
  };
  auto count = [&](const std::string& what, std::size_t got, std::size_t want) {
    if (got != want) out.push_back(sc.name + ": " + what + " " + std::to_string(got) + " != " + std::to_string(want));
  };
  for (const auto& [c, ap] : ref.per_class_ap) real("AP/" + std::to_string(c), lib.per_class_ap.at(c), ap);
  real("mAP_K", lib.map_k, ref.map_k);
  real("WI", lib.wi, ref.wi, 100.0L);
  real("AP_U", lib.ap_u, ref.ap_u);
  count("AOSE", lib.aose, ref.aose);
  count("TP_K", lib.tp_k, ref.tp_k);
  count("FP_K", lib.fp_k, ref.fp_k);
  count("FP_U", lib.fp_u, ref.fp_u);
  return out;
}

}  // namespace oracle

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
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace opendet {

using Vector = std::vector<double>;

// Raised for zero-norm inputs where a direction is required.
class DegenerateVectorError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Class index layout: known classes 0..K-1, unknown K, background K+1.
class ClassSpace {
 public:
  constexpr ClassSpace() = default;
  constexpr explicit ClassSpace(int num_known) : num_known_(num_known) {
    if (num_known < 1) throw std::invalid_argument("ClassSpace: num_known must be >= 1");
  }

  constexpr int num_known() const { return num_known_; }
  constexpr int unknown() const { return num_known_; }
  constexpr int background() const { return num_known_ + 1; }
  constexpr int total() const { return num_known_ + 2; }

  constexpr bool is_known(int c) const { return c >= 0 && c < num_known_; }
  constexpr bool is_valid(int c) const { return c >= 0 && c < total(); }

  friend constexpr bool operator==(const ClassSpace&, const ClassSpace&) = default;

 private:
  int num_known_ = 1;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: dimension mismatch");
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

inline Vector l2_normalize(std::span<const double> v) {
  const double n = l2_norm(v);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw DegenerateVectorError("l2_normalize: zero-norm or non-finite vector");
  }
  Vector out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (!(na > 0.0) || !(nb > 0.0)) {
    throw DegenerateVectorError("cosine_similarity: zero-norm vector");
  }
  return dot(a, b) / (na * nb);
}

// Row-major weight matrix, one row per class, and the logit scale.
struct ClassifierWeights {
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  Vector weights;
  double scale = 20.0;

  ClassifierWeights() = default;
  ClassifierWeights(std::size_t classes, std::size_t d, double s = 20.0)
      : num_classes(classes), dim(d), weights(classes * d, 0.0), scale(s) {}

  std::span<double> row(std::size_t j) { return {weights.data() + j * dim, dim}; }
  std::span<const double> row(std::size_t j) const { return {weights.data() + j * dim, dim}; }
};

// logit_j = scale * cos(features, w_j)
inline Vector cosine_logits(std::span<const double> features, const ClassifierWeights& w) {
  if (features.size() != w.dim) throw std::invalid_argument("cosine_logits: dimension mismatch");
  if (!(w.scale > 0.0)) throw std::invalid_argument("cosine_logits: scale must be positive");
  const double nf = l2_norm(features);
  if (!(nf > 0.0)) throw DegenerateVectorError("cosine_logits: zero-norm feature vector");
  Vector logits(w.num_classes);
  for (std::size_t j = 0; j < w.num_classes; ++j) {
    const auto wj = w.row(j);
    const double nw = l2_norm(wj);
    if (!(nw > 0.0)) {
      throw DegenerateVectorError("cosine_logits: zero-norm weight for class " + std::to_string(j));
    }
    logits[j] = w.scale * dot(features, wj) / (nf * nw);
  }
  return logits;
}

inline double log_sum_exp(std::span<const double> x) {
  if (x.empty()) throw std::invalid_argument("log_sum_exp: empty input");
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

inline Vector softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  for (double v : logits) {
    if (std::isnan(v)) throw std::invalid_argument("softmax: NaN logit");
    if (!std::isfinite(v)) throw std::invalid_argument("softmax: non-finite logit");
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  Vector p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    s += p[i];
  }
  for (double& v : p) v /= s;
  return p;
}

// H(p) = -sum p log p with 0 log 0 = 0.
inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return std::max(h, 0.0);
}

// Lowest index wins ties.
inline std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace opendet

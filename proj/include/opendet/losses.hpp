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

// Classification losses of the open-set detector head: softmax cross-entropy,
// the uncertainty-weighted unknown-probability loss and the instance
// contrastive loss against a class-balanced memory bank. Every loss returns
// its value together with the analytic gradient with respect to its input
// (logits, or the normalized embedding for the contrastive loss).

#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <utility>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "opendet/latent_core.hpp"
#include "opendet/memory_bank.hpp"

namespace opendet {

enum class WeightingVariant {
  kIdentity,           // w = 1
  kEntropyOfGt,        // w = -p log p
  kPolynomial,         // w = (1 - p)^alpha p
  kPolynomialMaxProb,  // w = (1 - p_m)^alpha p_m, p_m = max(p)
  kNormalizedEntropy,  // w = H(p) / log C
};

inline constexpr WeightingVariant kAllWeightingVariants[] = {
    WeightingVariant::kIdentity, WeightingVariant::kEntropyOfGt, WeightingVariant::kPolynomial,
    WeightingVariant::kPolynomialMaxProb, WeightingVariant::kNormalizedEntropy};

inline std::string_view to_string(WeightingVariant v) {
  switch (v) {
    case WeightingVariant::kIdentity: return "identity";
    case WeightingVariant::kEntropyOfGt: return "entropy_of_gt";
    case WeightingVariant::kPolynomial: return "polynomial";
    case WeightingVariant::kPolynomialMaxProb: return "polynomial_maxprob";
    case WeightingVariant::kNormalizedEntropy: return "normalized_entropy";
  }
  return "?";
}

inline WeightingVariant parse_weighting_variant(std::string_view s) {
  for (auto v : kAllWeightingVariants) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument("unknown weighting variant: " + std::string(s));
}

struct UPLConfig {
  double alpha = 1.0;
  double beta = 0.5;
  WeightingVariant variant = WeightingVariant::kPolynomial;
  // Treat w(p) as a constant when differentiating.
  bool detach_weight = false;

  void validate() const {
    if (!(alpha >= 0.0)) throw std::invalid_argument("upl.alpha must be >= 0");
    if (!(beta >= 0.0)) throw std::invalid_argument("upl.beta must be >= 0");
  }
};

enum class DenominatorMode {
  kSupCon,     // all bank exemplars, positives included
  kAsWritten,  // only exemplars of other classes
};

inline std::string_view to_string(DenominatorMode m) {
  return m == DenominatorMode::kSupCon ? "supcon" : "as_written";
}

inline DenominatorMode parse_denominator_mode(std::string_view s) {
  if (s == "supcon") return DenominatorMode::kSupCon;
  if (s == "as_written") return DenominatorMode::kAsWritten;
  throw std::invalid_argument("unknown denominator mode: " + std::string(s));
}

struct ICConfig {
  double tau = 0.1;
  double gamma0 = 0.1;
  DenominatorMode denominator = DenominatorMode::kSupCon;

  void validate() const {
    if (!(tau > 0.0)) throw std::invalid_argument("ic.tau must be > 0");
    if (!(gamma0 >= 0.0)) throw std::invalid_argument("ic.gamma0 must be >= 0");
  }
};

struct LossValueWithGrad {
  double value = 0.0;
  Vector grad;
  // Set when the loss could not be formed (e.g. empty positive set); value and
  // grad are then zero.
  bool skipped = false;
};

namespace detail {

inline void check_logits(std::span<const double> logits, int gt, const char* who) {
  if (logits.size() < 2) throw std::invalid_argument(std::string(who) + ": need at least two logits");
  if (gt < 0 || static_cast<std::size_t>(gt) >= logits.size()) {
    throw std::invalid_argument(std::string(who) + ": gt class out of range");
  }
  for (double v : logits) {
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(who) + ": non-finite logit");
  }
}

// ClassSpace is implied by the logit count: C = K + 2, unknown = C - 2.
inline int unknown_index(std::size_t num_classes) { return static_cast<int>(num_classes) - 2; }

struct WeightWithGrad {
  double value = 0.0;
  Vector grad;  // d w / d logits
};

// 1 - p_i summed from the other entries, which keeps its relative accuracy
// when p_i is close to one.
inline double complement(std::span<const double> p, std::size_t i) {
  double q = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (j != i) q += p[j];
  }
  return q;
}

// d p_i / d s_j = p_i (delta_ij - p_j)
inline void add_prob_grad(std::span<const double> p, std::size_t i, double scale, Vector& grad) {
  for (std::size_t j = 0; j < p.size(); ++j) {
    grad[j] += scale * p[i] * (i == j ? complement(p, i) : -p[j]);
  }
}

// q is 1 - p; callers holding a probability vector pass the complement sum.
inline double polynomial_weight(double p, double alpha, double q) { return std::pow(q, alpha) * p; }
inline double polynomial_weight(double p, double alpha) { return polynomial_weight(p, alpha, 1.0 - p); }

// d/dp [(1-p)^alpha p]; the (1-p)^(alpha-1) term is dropped at p == 1, where
// every probability derivative it multiplies vanishes as well.
inline double polynomial_weight_derivative(double p, double alpha, double q) {
  double d = std::pow(q, alpha);
  if (alpha != 0.0 && q > 0.0) d -= alpha * std::pow(q, alpha - 1.0) * p;
  return d;
}
inline double polynomial_weight_derivative(double p, double alpha) {
  return polynomial_weight_derivative(p, alpha, 1.0 - p);
}

inline WeightWithGrad weight_with_grad(std::span<const double> p, int gt, const UPLConfig& config) {
  WeightWithGrad out;
  out.grad.assign(p.size(), 0.0);
  const double pg = p[static_cast<std::size_t>(gt)];
  switch (config.variant) {
    case WeightingVariant::kIdentity:
      out.value = 1.0;
      break;
    case WeightingVariant::kEntropyOfGt:
      out.value = pg > 0.0 ? -pg * std::log(pg) : 0.0;
      if (pg > 0.0) add_prob_grad(p, static_cast<std::size_t>(gt), -(std::log(pg) + 1.0), out.grad);
      break;
    case WeightingVariant::kPolynomial: {
      const auto g = static_cast<std::size_t>(gt);
      const double q = complement(p, g);
      out.value = polynomial_weight(pg, config.alpha, q);
      add_prob_grad(p, g, polynomial_weight_derivative(pg, config.alpha, q), out.grad);
      break;
    }
    case WeightingVariant::kPolynomialMaxProb: {
      const std::size_t m = argmax(p);
      const double q = complement(p, m);
      out.value = polynomial_weight(p[m], config.alpha, q);
      add_prob_grad(p, m, polynomial_weight_derivative(p[m], config.alpha, q), out.grad);
      break;
    }
    case WeightingVariant::kNormalizedEntropy: {
      const double norm = std::log(static_cast<double>(p.size()));
      const double h = entropy(p);
      out.value = h / norm;
      // dH/ds_j = -p_j (log p_j + H)
      for (std::size_t j = 0; j < p.size(); ++j) {
        if (p[j] > 0.0) out.grad[j] = -p[j] * (std::log(p[j]) + h) / norm;
      }
      break;
    }
  }
  return out;
}

}  // namespace detail

// -log softmax(logits)[gt]; the unknown class is never a training target.
inline LossValueWithGrad ce_loss(std::span<const double> logits, int gt) {
  detail::check_logits(logits, gt, "ce_loss");
  if (gt == detail::unknown_index(logits.size())) {
    throw std::invalid_argument("ce_loss: the unknown class cannot be a training target");
  }
  LossValueWithGrad out;
  out.value = log_sum_exp(logits) - logits[static_cast<std::size_t>(gt)];
  out.grad = softmax(logits);
  out.grad[static_cast<std::size_t>(gt)] -= 1.0;
  return out;
}

// Softmax probability of the unknown class with the gt logit removed.
inline double conditional_unknown_prob(std::span<const double> logits, int gt) {
  detail::check_logits(logits, gt, "conditional_unknown_prob");
  const int u = detail::unknown_index(logits.size());
  if (gt == u) throw std::invalid_argument("conditional_unknown_prob: gt is the unknown class");
  Vector rest;
  rest.reserve(logits.size() - 1);
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (static_cast<int>(j) != gt) rest.push_back(logits[j]);
  }
  return std::exp(logits[static_cast<std::size_t>(u)] - log_sum_exp(rest));
}

// Scalar form; only the variants that depend on p_gt alone are accepted.
inline double up_weight(double p_gt, const UPLConfig& config) {
  if (!(p_gt >= 0.0 && p_gt <= 1.0)) throw std::invalid_argument("up_weight: p outside [0,1]");
  switch (config.variant) {
    case WeightingVariant::kIdentity: return 1.0;
    case WeightingVariant::kEntropyOfGt: return p_gt > 0.0 ? -p_gt * std::log(p_gt) : 0.0;
    case WeightingVariant::kPolynomial: return detail::polynomial_weight(p_gt, config.alpha);
    default:
      throw std::invalid_argument("up_weight: variant " + std::string(to_string(config.variant)) +
                                  " needs the full probability vector");
  }
}

inline double up_weight(std::span<const double> probs, int gt, const UPLConfig& config) {
  if (gt < 0 || static_cast<std::size_t>(gt) >= probs.size()) {
    throw std::invalid_argument("up_weight: gt class out of range");
  }
  return detail::weight_with_grad(probs, gt, config).value;
}

// -w(p_gt) log p_u'. Gradient flows through both factors unless the config
// detaches the weight.
inline LossValueWithGrad up_loss(std::span<const double> logits, int gt, const UPLConfig& config) {
  detail::check_logits(logits, gt, "up_loss");
  const std::size_t n = logits.size();
  const int u = detail::unknown_index(n);
  if (gt == u) throw std::invalid_argument("up_loss: gt is the unknown class");

  const Vector p = softmax(logits);
  const auto w = detail::weight_with_grad(p, gt, config);

  // q = softmax over all classes except gt
  Vector q(n, 0.0);
  {
    double m = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      if (static_cast<int>(j) != gt) m = std::max(m, logits[j]);
    }
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (static_cast<int>(j) == gt) continue;
      q[j] = std::exp(logits[j] - m);
      s += q[j];
    }
    for (double& v : q) v /= s;
  }
  const double log_pu = std::log(q[static_cast<std::size_t>(u)]);

  LossValueWithGrad out;
  out.value = -w.value * log_pu;
  out.grad.assign(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    if (static_cast<int>(j) == gt) continue;
    const double dlog = (static_cast<int>(j) == u ? 1.0 : 0.0) - q[j];
    out.grad[j] = -w.value * dlog;
  }
  if (!config.detach_weight) {
    for (std::size_t j = 0; j < n; ++j) out.grad[j] -= w.grad[j] * log_pu;
  }
  return out;
}

// Instance contrastive loss of one anchor against explicit positive and
// negative exemplar sets. Similarities are plain inner products, so the anchor
// and exemplars are expected to be unit-norm.
inline LossValueWithGrad ic_loss(std::span<const double> anchor,
                                 const std::vector<std::span<const double>>& positives,
                                 const std::vector<std::span<const double>>& negatives,
                                 const ICConfig& config) {
  config.validate();
  LossValueWithGrad out;
  out.grad.assign(anchor.size(), 0.0);
  const bool supcon = config.denominator == DenominatorMode::kSupCon;
  if (positives.empty() || (!supcon && negatives.empty())) {
    out.skipped = true;
    return out;
  }

  // Denominator set: negatives, plus positives in supcon mode.
  const std::size_t n_denom = negatives.size() + (supcon ? positives.size() : 0);
  auto denom_at = [&](std::size_t k) -> std::span<const double> {
    return k < negatives.size() ? negatives[k] : positives[k - negatives.size()];
  };
  Vector weights(n_denom);
  double m = -INFINITY;
  for (std::size_t k = 0; k < n_denom; ++k) {
    weights[k] = dot(anchor, denom_at(k)) / config.tau;
    m = std::max(m, weights[k]);
  }
  double sum = 0.0;
  for (double& w : weights) {
    w = std::exp(w - m);
    sum += w;
  }
  const double lse = m + std::log(sum);

  const double inv_p = 1.0 / static_cast<double>(positives.size());
  double mean_pos = 0.0;
  for (const auto& zp : positives) {
    mean_pos += dot(anchor, zp) / config.tau;
    for (std::size_t i = 0; i < anchor.size(); ++i) out.grad[i] -= inv_p * zp[i] / config.tau;
  }
  mean_pos *= inv_p;
  for (std::size_t k = 0; k < n_denom; ++k) {
    const auto zk = denom_at(k);
    const double a = weights[k] / (sum * config.tau);
    for (std::size_t i = 0; i < anchor.size(); ++i) out.grad[i] += a * zk[i];
  }
  out.value = lse - mean_pos;
  return out;
}

// Exemplar spans of a memory bank grouped per known class.
class BankView {
 public:
  explicit BankView(const MemoryBank& bank) : bank_(&bank), per_class_(static_cast<std::size_t>(bank.classes().num_known())) {
    for (int c = 0; c < bank.classes().num_known(); ++c) {
      for (const auto& e : bank.queue(c)) per_class_[static_cast<std::size_t>(c)].emplace_back(e.embedding);
    }
  }

  const MemoryBank& bank() const { return *bank_; }

  // M(c) and A(c) = M \ M(c)
  std::pair<std::vector<std::span<const double>>, std::vector<std::span<const double>>> split(int c) const {
    if (!bank_->classes().is_known(c)) throw std::invalid_argument("ic_loss: anchor class must be a known class");
    std::vector<std::span<const double>> negatives;
    for (std::size_t k = 0; k < per_class_.size(); ++k) {
      if (static_cast<int>(k) != c) negatives.insert(negatives.end(), per_class_[k].begin(), per_class_[k].end());
    }
    return {per_class_[static_cast<std::size_t>(c)], std::move(negatives)};
  }

 private:
  const MemoryBank* bank_;
  std::vector<std::vector<std::span<const double>>> per_class_;
};

// Positives are M(anchor_class), negatives the union of the other queues.
inline LossValueWithGrad ic_loss(std::span<const double> anchor, int anchor_class,
                                 const MemoryBank& bank, const ICConfig& config) {
  if (anchor.size() != bank.dim()) throw std::invalid_argument("ic_loss: dimension mismatch");
  const auto [positives, negatives] = BankView(bank).split(anchor_class);
  return ic_loss(anchor, positives, negatives, config);
}

// Linear decay from gamma0 at t = 0 to zero at t = T.
inline double ic_weight_at(double gamma0, int t, int total_iterations) {
  if (total_iterations <= 0) throw std::invalid_argument("total_iterations must be positive");
  if (t < 0 || t > total_iterations) {
    throw std::out_of_range("iteration " + std::to_string(t) + " outside schedule [0, " +
                            std::to_string(total_iterations) + "]");
  }
  return gamma0 * (1.0 - static_cast<double>(t) / static_cast<double>(total_iterations));
}

struct Schedule {
  int total_iterations = 10000;
  int warmup_iterations = 100;
};

// Inputs of the classification part of the multi-task loss for one batch.
struct JointLossInput {
  std::vector<Vector> logits;           // one row per proposal
  std::vector<int> gt;                  // per proposal; background allowed
  std::vector<std::size_t> up_indices;  // proposals selected for the UP term
  std::vector<Vector> anchor_embeddings;
  std::vector<int> anchor_classes;
};

struct JointLossResult {
  double value = 0.0;
  double ce = 0.0;
  double up = 0.0;
  double ic = 0.0;
  double up_weight = 0.0;  // beta, or 0 before warmup
  double gamma_t = 0.0;
  std::size_t ic_anchors_used = 0;
  std::vector<Vector> grad_logits;
  std::vector<Vector> grad_anchors;
};

// L = mean CE + beta mean UP [t >= warmup] + gamma_t mean IC
inline JointLossResult joint_loss(const JointLossInput& in, const MemoryBank& bank,
                                  const UPLConfig& upl, const ICConfig& ic,
                                  const Schedule& schedule, int t) {
  upl.validate();
  ic.validate();
  if (in.gt.size() != in.logits.size()) throw std::invalid_argument("joint_loss: gt/logit count mismatch");
  if (in.anchor_classes.size() != in.anchor_embeddings.size()) {
    throw std::invalid_argument("joint_loss: anchor count mismatch");
  }
  JointLossResult r;
  r.gamma_t = ic_weight_at(ic.gamma0, t, schedule.total_iterations);
  r.up_weight = t >= schedule.warmup_iterations ? upl.beta : 0.0;

  const std::size_t n = in.logits.size();
  r.grad_logits.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto ce = ce_loss(in.logits[i], in.gt[i]);
    r.ce += ce.value;
    r.grad_logits[i] = std::move(ce.grad);
    for (double& g : r.grad_logits[i]) g /= static_cast<double>(n);
  }
  if (n > 0) r.ce /= static_cast<double>(n);

  if (r.up_weight > 0.0 && !in.up_indices.empty()) {
    const double scale = r.up_weight / static_cast<double>(in.up_indices.size());
    for (std::size_t idx : in.up_indices) {
      if (idx >= n) throw std::out_of_range("joint_loss: UP index out of range");
      const auto up = up_loss(in.logits[idx], in.gt[idx], upl);
      r.up += up.value;
      for (std::size_t j = 0; j < up.grad.size(); ++j) r.grad_logits[idx][j] += scale * up.grad[j];
    }
    r.up /= static_cast<double>(in.up_indices.size());
  }

  r.grad_anchors.resize(in.anchor_embeddings.size());
  std::vector<LossValueWithGrad> per_anchor;
  per_anchor.reserve(in.anchor_embeddings.size());
  if (r.gamma_t > 0.0 && !in.anchor_embeddings.empty()) {
    const BankView view(bank);
    std::map<int, std::pair<std::vector<std::span<const double>>, std::vector<std::span<const double>>>> sets;
    for (std::size_t a = 0; a < in.anchor_embeddings.size(); ++a) {
      if (in.anchor_embeddings[a].size() != bank.dim()) throw std::invalid_argument("ic_loss: dimension mismatch");
      const int c = in.anchor_classes[a];
      auto it = sets.find(c);
      if (it == sets.end()) it = sets.emplace(c, view.split(c)).first;
      per_anchor.push_back(ic_loss(in.anchor_embeddings[a], it->second.first, it->second.second, ic));
      if (!per_anchor.back().skipped) ++r.ic_anchors_used;
    }
  }
  for (std::size_t a = 0; a < in.anchor_embeddings.size(); ++a) {
    r.grad_anchors[a].assign(in.anchor_embeddings[a].size(), 0.0);
  }
  if (r.ic_anchors_used > 0) {
    const double scale = r.gamma_t / static_cast<double>(r.ic_anchors_used);
    for (std::size_t a = 0; a < per_anchor.size(); ++a) {
      if (per_anchor[a].skipped) continue;
      r.ic += per_anchor[a].value;
      for (std::size_t i = 0; i < per_anchor[a].grad.size(); ++i) {
        r.grad_anchors[a][i] = scale * per_anchor[a].grad[i];
      }
    }
    r.ic /= static_cast<double>(r.ic_anchors_used);
  }

  r.value = r.ce + r.up_weight * r.up + r.gamma_t * r.ic;
  return r;
}

}  // namespace opendet

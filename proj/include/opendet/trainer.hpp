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

// Deterministic toy training harness.
//
// Proposals are feature vectors drawn from Gaussian class clusters. The model
// mirrors the classification branch of the detector head:
//
//   x --FC,ReLU--> h --cosine classifier--> logits over K + 2 classes
//                  h --FC,ReLU,FC,L2--> z   (contrastive head, training only)
//
// Gradients are analytic and the update is plain gradient descent.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "opendet/latent_core.hpp"
#include "opendet/losses.hpp"
#include "opendet/memory_bank.hpp"
#include "opendet/mining.hpp"
#include "opendet/openset_eval.hpp"

namespace opendet {

// ---------------------------------------------------------------------------
// Synthetic world

struct SyntheticWorldConfig {
  int num_known = 5;
  int num_unknown = 3;
  std::size_t feature_dim = 16;
  // Generated known means are object_offset * e0 + cluster_radius * v with v a
  // random unit direction orthogonal to e0, so objects surround a common
  // center away from the background mass at the origin. Ignored when
  // cluster_means is given.
  double cluster_radius = 2.5;
  double cluster_stddev = 0.5;
  double object_offset = 3.0;
  // When unknown_mix > 0, generated unknown cluster u is centered on the
  // average of known means u, u+1, ..., u+unknown_mix-1 (mod K), displaced by
  // a random vector of norm unknown_offset. With unknown_mix = 0 it is placed
  // like a known cluster.
  int unknown_mix = 5;
  double unknown_offset = 0.5;
  // Optional explicit means: num_known rows followed by num_unknown rows.
  std::vector<Vector> cluster_means;
  double fg_iou_low = 0.5;
  double fg_iou_high = 1.0;
  double bg_iou_high = 0.3;
  double bg_fraction = 0.5;
  // Background features: isotropic Gaussian around the origin.
  double bg_stddev = 0.5;
  std::uint64_t seed = 1;

  void validate() const {
    if (num_known < 1) throw std::invalid_argument("world.num_known must be >= 1");
    if (num_unknown < 0) throw std::invalid_argument("world.num_unknown must be >= 0");
    if (unknown_mix < 0 || unknown_mix > num_known) throw std::invalid_argument("world.unknown_mix must be in [0, num_known]");
    if (feature_dim < 1) throw std::invalid_argument("world.feature_dim must be >= 1");
    if (object_offset != 0.0 && feature_dim < 2) {
      throw std::invalid_argument("world.object_offset needs world.feature_dim >= 2");
    }
    if (!(cluster_radius >= 0.0)) throw std::invalid_argument("world.cluster_radius must be >= 0");
    if (!(cluster_stddev >= 0.0)) throw std::invalid_argument("world.cluster_stddev must be >= 0");
    if (!(bg_stddev >= 0.0)) throw std::invalid_argument("world.bg_stddev must be >= 0");
    if (!(bg_fraction >= 0.0 && bg_fraction <= 1.0)) throw std::invalid_argument("world.bg_fraction must be in [0,1]");
    if (!(0.0 <= fg_iou_low && fg_iou_low <= fg_iou_high && fg_iou_high <= 1.0)) {
      throw std::invalid_argument("world: need 0 <= fg_iou_low <= fg_iou_high <= 1");
    }
    if (!(bg_iou_high >= 0.0 && bg_iou_high <= 1.0)) throw std::invalid_argument("world.bg_iou_high must be in [0,1]");
    if (!cluster_means.empty()) {
      if (cluster_means.size() != static_cast<std::size_t>(num_known + num_unknown)) {
        throw std::invalid_argument("world.cluster_means must hold num_known + num_unknown rows");
      }
      for (const auto& m : cluster_means) {
        if (m.size() != feature_dim) throw std::invalid_argument("world.cluster_means row has wrong dimension");
      }
    }
  }
};

class SyntheticWorld {
 public:
  explicit SyntheticWorld(SyntheticWorldConfig config) : config_(std::move(config)) {
    config_.validate();
    const std::size_t total = static_cast<std::size_t>(config_.num_known + config_.num_unknown);
    if (!config_.cluster_means.empty()) {
      means_ = config_.cluster_means;
    } else {
      std::mt19937_64 rng(config_.seed ^ 0x9e3779b97f4a7c15ULL);
      std::normal_distribution<double> n01;
      auto random_direction = [&](bool orthogonal_to_e0) {
        Vector v(config_.feature_dim);
        do {
          for (double& x : v) x = n01(rng);
          if (orthogonal_to_e0) v[0] = 0.0;
        } while (l2_norm(v) == 0.0);
        return l2_normalize(v);
      };
      const bool shifted = config_.object_offset != 0.0;
      for (std::size_t c = 0; c < total; ++c) {
        Vector v = random_direction(shifted);
        const int u = static_cast<int>(c) - config_.num_known;
        if (u >= 0 && config_.unknown_mix > 0) {
          Vector mid(config_.feature_dim, 0.0);
          for (int j = 0; j < config_.unknown_mix; ++j) {
            const auto& a = means_[static_cast<std::size_t>((u + j) % config_.num_known)];
            for (std::size_t i = 0; i < mid.size(); ++i) mid[i] += a[i] / config_.unknown_mix;
          }
          for (std::size_t i = 0; i < mid.size(); ++i) mid[i] += config_.unknown_offset * v[i];
          means_.push_back(std::move(mid));
          continue;
        }
        for (double& x : v) x *= config_.cluster_radius;
        v[0] += config_.object_offset;
        means_.push_back(std::move(v));
      }
    }
    for (std::size_t a = 0; a < means_.size(); ++a) {
      for (std::size_t b = a + 1; b < means_.size(); ++b) {
        if (means_[a] == means_[b]) throw std::invalid_argument("world: cluster means must be pairwise distinct");
      }
    }
  }

  const SyntheticWorldConfig& config() const { return config_; }
  ClassSpace classes() const { return ClassSpace(config_.num_known); }
  const Vector& known_mean(int c) const { return means_.at(static_cast<std::size_t>(c)); }
  const Vector& unknown_mean(int u) const { return means_.at(static_cast<std::size_t>(config_.num_known + u)); }

  Vector sample_around(const Vector& mean, double stddev, std::mt19937_64& rng) const {
    std::normal_distribution<double> n01;
    Vector x(mean);
    for (double& v : x) v += stddev * n01(rng);
    return x;
  }

  Proposal foreground(int c, std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> iou(config_.fg_iou_low, config_.fg_iou_high);
    Proposal p;
    p.features = sample_around(known_mean(c), config_.cluster_stddev, rng);
    p.gt_class = c;
    p.iou_with_gt = iou(rng);
    p.is_foreground = true;
    return p;
  }

  Proposal background(std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> iou(0.0, config_.bg_iou_high);
    Proposal p;
    p.gt_class = classes().background();
    p.iou_with_gt = iou(rng);
    p.is_foreground = false;
    p.features = sample_around(Vector(config_.feature_dim, 0.0), config_.bg_stddev, rng);
    return p;
  }

 private:
  SyntheticWorldConfig config_;
  std::vector<Vector> means_;
};

// Training batch: round(bg_fraction * n) background proposals, the rest
// foreground with uniformly drawn known classes. Unknown clusters are never
// sampled.
inline std::vector<Proposal> generate_batch(const SyntheticWorld& world, std::size_t n, std::mt19937_64& rng) {
  const auto n_bg = static_cast<std::size_t>(std::llround(world.config().bg_fraction * static_cast<double>(n)));
  std::vector<Proposal> batch;
  batch.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_bg) {
      batch.push_back(world.background(rng));
    } else {
      const int c = static_cast<int>(bounded_draw(rng, static_cast<std::uint64_t>(world.config().num_known)));
      batch.push_back(world.foreground(c, rng));
    }
  }
  return batch;
}

// Held-out open-set draw. Unknown proposals carry gt_class = unknown index and
// `cluster` distinguishes the original unknown clusters.
struct OpenSetSample {
  Vector features;
  int gt_class = 0;
  int cluster = 0;
};

inline std::vector<OpenSetSample> draw_open_set(const SyntheticWorld& world, std::size_t per_known,
                                                std::size_t per_unknown, std::mt19937_64& rng) {
  std::vector<OpenSetSample> out;
  const auto& cfg = world.config();
  for (int c = 0; c < cfg.num_known; ++c) {
    for (std::size_t i = 0; i < per_known; ++i) {
      out.push_back({world.sample_around(world.known_mean(c), cfg.cluster_stddev, rng), c, c});
    }
  }
  for (int u = 0; u < cfg.num_unknown; ++u) {
    for (std::size_t i = 0; i < per_unknown; ++i) {
      out.push_back({world.sample_around(world.unknown_mean(u), cfg.cluster_stddev, rng), world.classes().unknown(), u});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model

struct Dense {
  std::size_t out = 0;
  std::size_t in = 0;
  Vector w;  // out x in, row-major
  Vector b;

  Dense() = default;
  Dense(std::size_t o, std::size_t i) : out(o), in(i), w(o * i, 0.0), b(o, 0.0) {}

  Vector forward(std::span<const double> x) const {
    Vector y(b);
    for (std::size_t r = 0; r < out; ++r) {
      const double* row = w.data() + r * in;
      double s = 0.0;
      for (std::size_t c = 0; c < in; ++c) s += row[c] * x[c];
      y[r] += s;
    }
    return y;
  }

  // Accumulates parameter gradients into `grad` and returns d/dx.
  Vector backward(std::span<const double> x, std::span<const double> dy, Dense& grad) const {
    Vector dx(in, 0.0);
    for (std::size_t r = 0; r < out; ++r) {
      if (dy[r] == 0.0) continue;
      const double* row = w.data() + r * in;
      double* grow = grad.w.data() + r * in;
      for (std::size_t c = 0; c < in; ++c) {
        grow[c] += dy[r] * x[c];
        dx[c] += dy[r] * row[c];
      }
      grad.b[r] += dy[r];
    }
    return dx;
  }
};

struct ModelDims {
  std::size_t feature_dim = 16;
  std::size_t trunk_dim = 32;
  std::size_t head_hidden = 32;
  std::size_t embed_dim = 128;
  double scale = 20.0;
};

struct ToyModel {
  ClassSpace classes;
  ModelDims dims;
  Dense trunk;
  ClassifierWeights classifier;
  Dense head1;
  Dense head2;

  ToyModel() = default;
  ToyModel(ClassSpace cs, ModelDims d)
      : classes(cs),
        dims(d),
        trunk(d.trunk_dim, d.feature_dim),
        classifier(static_cast<std::size_t>(cs.total()), d.trunk_dim, d.scale),
        head1(d.head_hidden, d.trunk_dim),
        head2(d.embed_dim, d.head_hidden) {}

  static ToyModel initialize(ClassSpace cs, ModelDims d, std::uint64_t seed) {
    ToyModel m(cs, d);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    auto fill = [&](Dense& layer) {
      const double s = std::sqrt(2.0 / static_cast<double>(layer.in));
      for (double& v : layer.w) v = s * n01(rng);
    };
    fill(m.trunk);
    for (double& v : m.trunk.b) v = 0.1;
    for (double& v : m.classifier.weights) v = n01(rng);
    fill(m.head1);
    for (double& v : m.head1.b) v = 0.1;
    fill(m.head2);
    return m;
  }

  // Zero-valued model of the same shape, used as a gradient accumulator.
  ToyModel zeros_like() const { return ToyModel(classes, dims); }

  std::vector<std::span<double>> parameters() {
    return {trunk.w, trunk.b, classifier.weights, head1.w, head1.b, head2.w, head2.b};
  }
  std::vector<std::span<const double>> parameters() const {
    return {trunk.w, trunk.b, classifier.weights, head1.w, head1.b, head2.w, head2.b};
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto p : parameters()) n += p.size();
    return n;
  }
};

struct ClassifierPass {
  Vector pre;  // trunk pre-activation
  Vector h;    // classification-branch feature
  Vector logits;
  Vector probs;
};

inline ClassifierPass classify(const ToyModel& m, std::span<const double> x) {
  ClassifierPass f;
  f.pre = m.trunk.forward(x);
  f.h.resize(f.pre.size());
  for (std::size_t i = 0; i < f.pre.size(); ++i) f.h[i] = f.pre[i] > 0.0 ? f.pre[i] : 0.0;
  // A fully inactive trunk has no direction; its logits are taken as zero.
  f.logits = l2_norm(f.h) > 0.0 ? cosine_logits(f.h, m.classifier) : Vector(m.classifier.num_classes, 0.0);
  f.probs = softmax(f.logits);
  return f;
}

struct HeadPass {
  Vector u;
  Vector v;
  Vector e;
  Vector z;
};

inline HeadPass embed(const ToyModel& m, std::span<const double> h) {
  HeadPass f;
  f.u = m.head1.forward(h);
  f.v.resize(f.u.size());
  for (std::size_t i = 0; i < f.u.size(); ++i) f.v[i] = f.u[i] > 0.0 ? f.u[i] : 0.0;
  f.e = m.head2.forward(f.v);
  f.z = l2_normalize(f.e);
  return f;
}

// d/dx of x/|x| applied to upstream g: (g - (g.n) n) / |x|
inline Vector normalize_backward(std::span<const double> x, std::span<const double> g) {
  const double nx = l2_norm(x);
  Vector out(x.size());
  double gn = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) gn += g[i] * x[i] / nx;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (g[i] - gn * x[i] / nx) / nx;
  return out;
}

// Backpropagates dL/dlogits through the cosine classifier; returns dL/dh.
inline Vector classifier_backward(const ToyModel& m, std::span<const double> h, std::span<const double> g,
                                  ToyModel& grad) {
  const std::size_t d = h.size();
  const double nh = l2_norm(h);
  if (nh == 0.0) return Vector(d, 0.0);
  Vector hn(d);
  for (std::size_t i = 0; i < d; ++i) hn[i] = h[i] / nh;
  Vector d_hn(d, 0.0);
  for (std::size_t j = 0; j < m.classifier.num_classes; ++j) {
    if (g[j] == 0.0) continue;
    const auto w = m.classifier.row(j);
    const double nw = l2_norm(w);
    const double a = m.classifier.scale * g[j];
    double proj = 0.0;
    for (std::size_t i = 0; i < d; ++i) proj += hn[i] * w[i] / nw;
    auto gw = grad.classifier.row(j);
    for (std::size_t i = 0; i < d; ++i) {
      const double wn = w[i] / nw;
      d_hn[i] += a * wn;
      gw[i] += a * (hn[i] - proj * wn) / nw;
    }
  }
  double dot_hn = 0.0;
  for (std::size_t i = 0; i < d; ++i) dot_hn += d_hn[i] * hn[i];
  Vector dh(d);
  for (std::size_t i = 0; i < d; ++i) dh[i] = (d_hn[i] - dot_hn * hn[i]) / nh;
  return dh;
}

inline Vector head_backward(const ToyModel& m, std::span<const double> h, const HeadPass& f,
                            std::span<const double> dz, ToyModel& grad) {
  const Vector de = normalize_backward(f.e, dz);
  Vector dv = m.head2.backward(f.v, de, grad.head2);
  for (std::size_t i = 0; i < dv.size(); ++i) {
    if (!(f.u[i] > 0.0)) dv[i] = 0.0;
  }
  return m.head1.backward(h, dv, grad.head1);
}

inline void trunk_backward(const ToyModel& m, std::span<const double> x, const ClassifierPass& f,
                           std::span<const double> dh, ToyModel& grad) {
  Vector da(dh.begin(), dh.end());
  for (std::size_t i = 0; i < da.size(); ++i) {
    if (!(f.pre[i] > 0.0)) da[i] = 0.0;
  }
  m.trunk.backward(x, da, grad.trunk);
}

// ---------------------------------------------------------------------------
// Training

struct TrainerConfig {
  int total_iterations = 10000;
  int warmup_iterations = 100;
  double learning_rate = 0.1;
  std::size_t batch_size = 32;
  ModelDims dims;
  UPLConfig upl;
  ICConfig ic;
  MemoryBankConfig bank;
  MiningConfig mining;
  std::uint64_t seed = 1;
  std::size_t eval_per_known = 200;
  std::size_t eval_per_unknown = 200;

  void validate() const {
    if (total_iterations < 1) throw std::invalid_argument("train.iterations must be >= 1");
    if (warmup_iterations < 0 || warmup_iterations >= total_iterations) {
      throw std::invalid_argument("train.warmup must satisfy 0 <= warmup < iterations");
    }
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train.learning_rate must be > 0");
    if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
    if (dims.trunk_dim < 1 || dims.head_hidden < 1 || dims.embed_dim < 1) {
      throw std::invalid_argument("model dimensions must be >= 1");
    }
    if (!(dims.scale > 0.0)) throw std::invalid_argument("model.scale must be > 0");
    upl.validate();
    ic.validate();
    bank.validate();
    mining.validate();
  }

  Schedule schedule() const { return {total_iterations, warmup_iterations}; }
  bool uses_contrastive() const { return ic.gamma0 > 0.0; }
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepTelemetry {
  int iteration = 0;
  double ce = 0.0;
  double up = 0.0;
  double ic = 0.0;
  double gamma_t = 0.0;
  double up_weight = 0.0;
  double total = 0.0;
  std::size_t up_examples = 0;
  std::size_t ic_anchors = 0;
};

// The joint objective on a frozen batch, bank and example selection, with the
// gradient with respect to every model parameter accumulated into `grad`.
struct ObjectiveSelection {
  std::vector<std::size_t> up_indices;
  std::vector<std::size_t> anchors;
};

inline JointLossResult joint_objective(const ToyModel& model, const MemoryBank& bank,
                                       const std::vector<Proposal>& batch, const TrainerConfig& config, int t,
                                       const ObjectiveSelection& sel, ToyModel* grad,
                                       const std::vector<ClassifierPass>* precomputed = nullptr) {
  std::vector<ClassifierPass> local;
  if (precomputed == nullptr) {
    local.reserve(batch.size());
    for (const auto& p : batch) local.push_back(classify(model, p.features));
  }
  const auto& passes = precomputed != nullptr ? *precomputed : local;
  JointLossInput in;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    in.logits.push_back(passes[i].logits);
    in.gt.push_back(batch[i].gt_class);
  }
  in.up_indices = sel.up_indices;
  std::vector<HeadPass> heads;
  for (std::size_t a : sel.anchors) {
    heads.push_back(embed(model, passes[a].h));
    in.anchor_embeddings.push_back(heads.back().z);
    in.anchor_classes.push_back(batch[a].gt_class);
  }
  auto r = joint_loss(in, bank, config.upl, config.ic, config.schedule(), t);

  if (grad != nullptr) {
    std::vector<Vector> dh(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      dh[i] = classifier_backward(model, passes[i].h, r.grad_logits[i], *grad);
    }
    for (std::size_t k = 0; k < sel.anchors.size(); ++k) {
      const auto& g = r.grad_anchors[k];
      bool zero = true;
      for (double v : g) zero = zero && v == 0.0;
      if (zero) continue;
      const Vector d = head_backward(model, passes[sel.anchors[k]].h, heads[k], g, *grad);
      auto& target = dh[sel.anchors[k]];
      for (std::size_t i = 0; i < d.size(); ++i) target[i] += d[i];
    }
    for (std::size_t i = 0; i < batch.size(); ++i) trunk_backward(model, batch[i].features, passes[i], dh[i], *grad);
  }
  return r;
}

inline std::uint64_t step_seed(std::uint64_t seed, int t) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(t + 1);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline ObjectiveSelection select_examples(const std::vector<Proposal>& batch,
                                          const std::vector<ClassifierPass>& passes, const TrainerConfig& config,
                                          int t) {
  ObjectiveSelection sel;
  if (t >= config.warmup_iterations && config.upl.beta > 0.0) {
    std::vector<MiningCandidate> cands;
    cands.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) cands.push_back({passes[i].probs, batch[i].is_foreground});
    sel.up_indices = mine_hard_examples(cands, config.mining, step_seed(config.seed, t));
  }
  if (config.uses_contrastive()) sel.anchors = select_ic_anchors(batch, config.bank);
  return sel;
}

inline std::string dump_state(const StepTelemetry& s) {
  std::ostringstream os;
  os << "iteration=" << s.iteration << " ce=" << s.ce << " up=" << s.up << " ic=" << s.ic << " gamma_t=" << s.gamma_t
     << " up_weight=" << s.up_weight << " total=" << s.total;
  return os.str();
}

// One gradient-descent update on the joint loss, followed by enqueueing the
// batch's embeddings (computed before the update) into the memory bank.
inline StepTelemetry train_step(ToyModel& model, MemoryBank& bank, std::vector<Proposal>& batch,
                                const TrainerConfig& config, int t) {
  if (t < 0 || t >= config.total_iterations) throw std::out_of_range("train_step: t outside [0, T)");
  std::vector<ClassifierPass> passes;
  passes.reserve(batch.size());
  for (const auto& p : batch) passes.push_back(classify(model, p.features));
  const auto sel = select_examples(batch, passes, config, t);

  ToyModel grad = model.zeros_like();
  const auto r = joint_objective(model, bank, batch, config, t, sel, &grad, &passes);

  StepTelemetry s;
  s.iteration = t;
  s.ce = r.ce;
  s.up = r.up;
  s.ic = r.ic;
  s.gamma_t = r.gamma_t;
  s.up_weight = r.up_weight;
  s.total = r.value;
  s.up_examples = r.up_weight > 0.0 ? sel.up_indices.size() : 0;
  s.ic_anchors = r.ic_anchors_used;
  if (!std::isfinite(r.value)) throw TrainingDiverged("non-finite loss: " + dump_state(s));

  // Embeddings for the bank come from the pre-update parameters.
  if (config.uses_contrastive()) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (batch[i].is_foreground && batch[i].iou_with_gt > config.bank.memory_iou) {
        batch[i].embedding = embed(model, passes[i].h).z;
      }
    }
  }

  auto params = model.parameters();
  auto grads = grad.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      if (!std::isfinite(grads[k][i])) throw TrainingDiverged("non-finite gradient: " + dump_state(s));
      params[k][i] -= config.learning_rate * grads[k][i];
    }
  }

  if (config.uses_contrastive()) bank.enqueue(batch);
  return s;
}

struct Prediction {
  int predicted_class = 0;
  double score = 0.0;
  Vector probs;
  bool is_background = false;
  bool is_unknown = false;
};

// Argmax over all classes, lowest index on ties. The contrastive head is not
// used.
inline Prediction infer(const ToyModel& model, std::span<const double> features) {
  const auto f = classify(model, features);
  Prediction p;
  p.predicted_class = static_cast<int>(argmax(f.probs));
  p.score = f.probs[static_cast<std::size_t>(p.predicted_class)];
  p.is_background = p.predicted_class == model.classes.background();
  p.is_unknown = p.predicted_class == model.classes.unknown();
  p.probs = f.probs;
  return p;
}

// Prediction from a probability vector alone, same tie rule.
inline Prediction predict_from_probs(const ClassSpace& cs, std::span<const double> probs) {
  Prediction p;
  p.predicted_class = static_cast<int>(argmax(probs));
  p.score = probs[static_cast<std::size_t>(p.predicted_class)];
  p.is_background = p.predicted_class == cs.background();
  p.is_unknown = p.predicted_class == cs.unknown();
  p.probs.assign(probs.begin(), probs.end());
  return p;
}

// ---------------------------------------------------------------------------
// Experiment

struct ExperimentResult {
  ToyModel initial_model;
  ToyModel model;
  std::vector<StepTelemetry> telemetry;
  EvalReport report;
  EvalSplit split;
  std::vector<GroundTruthRecord> ground_truth;
  std::vector<DetectionRecord> detections;
  double known_accuracy = 0.0;       // fraction of known test proposals given their class
  std::size_t unknown_as_known = 0;  // unknown test proposals given a known class
  std::size_t unknown_as_unknown = 0;
  LatentStatistics latent_initial;
  LatentStatistics latent_final;
  std::vector<OpenSetSample> test_samples;
};

// Category ids of the open-set evaluation: known classes keep their index,
// the unknown label is K and the unknown clusters get K + 2 + u.
inline EvalSplit experiment_split(const ClassSpace& cs, int num_unknown) {
  EvalSplit s;
  for (int c = 0; c < cs.num_known(); ++c) s.known.push_back(c);
  for (int u = 0; u < num_unknown; ++u) s.unknown.push_back(cs.total() + u);
  s.unknown_label = cs.unknown();
  return s;
}

inline std::vector<Vector> latent_features(const ToyModel& m, const std::vector<OpenSetSample>& samples,
                                           std::vector<int>* labels, bool known_only = true) {
  std::vector<Vector> out;
  for (const auto& s : samples) {
    if (known_only && !m.classes.is_known(s.gt_class)) continue;
    out.push_back(classify(m, s.features).h);
    if (labels != nullptr) labels->push_back(s.gt_class);
  }
  return out;
}

// Each test proposal becomes its own image holding one unit box, so matching
// reduces to comparing labels.
inline void evaluate_model(const ToyModel& model, const std::vector<OpenSetSample>& samples, int num_unknown,
                           ExperimentResult& out) {
  const ClassSpace cs = model.classes;
  out.split = experiment_split(cs, num_unknown);
  out.ground_truth.clear();
  out.detections.clear();
  std::size_t known_total = 0;
  std::size_t known_correct = 0;
  out.unknown_as_known = 0;
  out.unknown_as_unknown = 0;
  const Box unit{0.0, 0.0, 1.0, 1.0};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto image = static_cast<ImageId>(i);
    const bool known = cs.is_known(s.gt_class);
    const CategoryId gt_cat = known ? s.gt_class : cs.total() + s.cluster;
    out.ground_truth.push_back({image, gt_cat, unit, static_cast<std::int64_t>(i), !known});
    const auto p = infer(model, s.features);
    if (known) {
      ++known_total;
      known_correct += p.predicted_class == s.gt_class ? 1 : 0;
    } else {
      out.unknown_as_known += cs.is_known(p.predicted_class) ? 1 : 0;
      out.unknown_as_unknown += p.is_unknown ? 1 : 0;
    }
    if (!p.is_background) out.detections.push_back({image, p.predicted_class, p.score, unit});
  }
  out.known_accuracy = known_total == 0 ? 0.0 : static_cast<double>(known_correct) / static_cast<double>(known_total);
  out.report = evaluate(out.detections, out.ground_truth, out.split);
}

inline ExperimentResult run_experiment(const SyntheticWorld& world, const TrainerConfig& config,
                                       const std::function<void(const StepTelemetry&)>& on_step = {}) {
  config.validate();
  if (config.dims.feature_dim != world.config().feature_dim) {
    throw std::invalid_argument("model.feature_dim does not match world.feature_dim");
  }
  const ClassSpace cs = world.classes();
  ExperimentResult out;
  out.initial_model = ToyModel::initialize(cs, config.dims, config.seed);
  out.model = out.initial_model;
  MemoryBank bank(cs, config.dims.embed_dim, config.bank);

  std::mt19937_64 train_rng(config.seed * 2 + 1);
  out.telemetry.reserve(static_cast<std::size_t>(config.total_iterations));
  for (int t = 0; t < config.total_iterations; ++t) {
    auto batch = generate_batch(world, config.batch_size, train_rng);
    out.telemetry.push_back(train_step(out.model, bank, batch, config, t));
    if (on_step) on_step(out.telemetry.back());
  }

  std::mt19937_64 test_rng(config.seed * 2 + 2);
  out.test_samples = draw_open_set(world, config.eval_per_known, config.eval_per_unknown, test_rng);
  evaluate_model(out.model, out.test_samples, world.config().num_unknown, out);

  std::vector<int> labels;
  const auto initial = latent_features(out.initial_model, out.test_samples, &labels);
  out.latent_initial = latent_statistics(initial, labels);
  labels.clear();
  const auto final_features = latent_features(out.model, out.test_samples, &labels);
  out.latent_final = latent_statistics(final_features, labels);
  out.report.latent = out.latent_final;
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: "ODETCKPT", u32 version, u32 K, five u64 dims, f64 scale, then
// each parameter array as u64 length followed by raw f64 values.

inline constexpr char kCheckpointMagic[8] = {'O', 'D', 'E', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("checkpoint: truncated");
  return v;
}
}  // namespace detail

inline void write_checkpoint(std::ostream& os, const ToyModel& m) {
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put<std::uint32_t>(os, kCheckpointVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.classes.num_known()));
  for (std::size_t v : {m.dims.feature_dim, m.dims.trunk_dim, m.dims.head_hidden, m.dims.embed_dim,
                        static_cast<std::size_t>(m.classes.total())}) {
    detail::put<std::uint64_t>(os, v);
  }
  detail::put<double>(os, m.dims.scale);
  for (auto p : m.parameters()) {
    detail::put<std::uint64_t>(os, p.size());
    os.write(reinterpret_cast<const char*>(p.data()), static_cast<std::streamsize>(p.size() * sizeof(double)));
  }
}

inline ToyModel read_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  const auto version = detail::get<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const auto k = detail::get<std::uint32_t>(is);
  ModelDims d;
  d.feature_dim = detail::get<std::uint64_t>(is);
  d.trunk_dim = detail::get<std::uint64_t>(is);
  d.head_hidden = detail::get<std::uint64_t>(is);
  d.embed_dim = detail::get<std::uint64_t>(is);
  const auto total = detail::get<std::uint64_t>(is);
  d.scale = detail::get<double>(is);
  const ClassSpace cs(static_cast<int>(k));
  if (total != static_cast<std::uint64_t>(cs.total())) throw std::runtime_error("checkpoint: class count mismatch");
  ToyModel m(cs, d);
  for (auto p : m.parameters()) {
    const auto n = detail::get<std::uint64_t>(is);
    if (n != p.size()) throw std::runtime_error("checkpoint: parameter array size mismatch");
    if (!is.read(reinterpret_cast<char*>(p.data()), static_cast<std::streamsize>(n * sizeof(double)))) {
      throw std::runtime_error("checkpoint: truncated");
    }
  }
  return m;
}

}  // namespace opendet

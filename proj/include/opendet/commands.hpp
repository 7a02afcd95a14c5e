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

// Command implementations behind the opendet tool. Each command writes its
// artifacts plus manifest.json into the output directory.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "opendet/annotations.hpp"
#include "opendet/config.hpp"
#include "opendet/gradcheck.hpp"
#include "opendet/io.hpp"
#include "opendet/plot.hpp"
#include "opendet/split.hpp"
#include "opendet/trainer.hpp"

namespace opendet {

namespace detail {

class ArtifactWriter {
 public:
  ArtifactWriter(std::string command, std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
    manifest_.command = std::move(command);
    manifest_.output_directory = dir_.string();
  }

  RunManifest& manifest() { return manifest_; }

  void write(const std::string& name, std::string_view content) {
    write_file((dir_ / name).string(), content);
    manifest_.add_artifact(name, content);
  }

  void finish() { write_file((dir_ / "manifest.json").string(), manifest_.to_json().dump(1) + "\n"); }

 private:
  std::filesystem::path dir_;
  RunManifest manifest_;
};

inline std::string dump(const nlohmann::json& j) { return j.dump(1) + "\n"; }

}  // namespace detail

// ---------------------------------------------------------------------------
// train

struct TrainOutcome {
  ExperimentResult result;
  ExperimentConfig config;
};

inline TrainOutcome cmd_train(const ExperimentConfig& config, const std::filesystem::path& out, std::ostream& log) {
  config.validate();
  detail::ArtifactWriter w("train", out);
  w.manifest().seed = config.trainer.seed;
  w.manifest().config = serialize_config(config);

  const SyntheticWorld world(config.world);
  TrainOutcome o{run_experiment(world, config.trainer), config};
  const auto& r = o.result;

  w.write("config.txt", w.manifest().config);
  std::ostringstream ckpt;
  write_checkpoint(ckpt, r.model);
  w.write("checkpoint.bin", ckpt.str());
  w.write("telemetry.csv", telemetry_to_csv(r.telemetry));
  w.write("report.csv", report_to_csv(r.report));
  w.write("report.json", detail::dump(report_to_json(r.report)));

  AnnotationSet gt;
  AnnotationSet det;
  std::set<ImageId> images;
  for (const auto& g : r.ground_truth) images.insert(g.image_id);
  for (ImageId id : images) gt.images.push_back({id, "", 1, 1});
  for (CategoryId c : r.split.known) gt.categories.push_back({c, "known_" + std::to_string(c)});
  gt.categories.push_back({r.split.unknown_label, "unknown"});
  for (CategoryId c : r.split.unknown) gt.categories.push_back({c, "unknown_cluster_" + std::to_string(c)});
  det.images = gt.images;
  det.categories = gt.categories;
  gt.annotations = r.ground_truth;
  det.detections = r.detections;
  w.write("ground_truth.json", detail::dump(annotations_to_json(gt)));
  w.write("detections.json", detail::dump(detections_to_json(det)));
  w.write("split.json", detail::dump(eval_split_to_json(r.split)));

  std::vector<LabeledEmbedding> latent;
  for (const auto& s : r.test_samples) {
    const bool known = r.model.classes.is_known(s.gt_class);
    latent.push_back({classify(r.model, s.features).h, known ? s.gt_class : -1, !known});
  }
  w.write("latent.csv", latent_to_csv(latent));

  std::ostringstream summary;
  summary << "metric,value\n"
          << "known_accuracy," << format_double(r.known_accuracy) << '\n'
          << "unknown_as_known," << r.unknown_as_known << '\n'
          << "unknown_as_unknown," << r.unknown_as_unknown << '\n'
          << "intra_class_variance_initial," << format_double(r.latent_initial.intra_class_variance) << '\n'
          << "intra_class_variance_final," << format_double(r.latent_final.intra_class_variance) << '\n'
          << "inter_class_distance_initial," << format_double(r.latent_initial.inter_class_distance) << '\n'
          << "inter_class_distance_final," << format_double(r.latent_final.inter_class_distance) << '\n';
  w.write("summary.csv", summary.str());
  w.finish();

  log << "known accuracy " << format_double(r.known_accuracy) << ", unknown->known " << r.unknown_as_known
      << ", unknown->unknown " << r.unknown_as_unknown << "\n"
      << "mAP_K " << format_double(100.0 * r.report.map_k) << "  WI " << format_double(r.report.wi) << "  AOSE "
      << r.report.aose << "  AP_U " << format_double(100.0 * r.report.ap_u) << "\n";
  return o;
}

// ---------------------------------------------------------------------------
// eval

inline EvalReport cmd_eval(const std::string& gt_path, const std::string& det_path, const std::string& split_path,
                           const EvalOptions& options, const std::filesystem::path& out, std::ostream& log) {
  const auto gt = ingest_annotations(gt_path);
  const auto det = ingest_detections(det_path);
  const auto split = ingest_eval_split(split_path);
  const auto report = evaluate(det.detections, gt.annotations, split, options);

  detail::ArtifactWriter w("eval", out);
  std::ostringstream cfg;
  cfg << "gt=" << gt_path << "\ndetections=" << det_path << "\nsplit=" << split_path
      << "\niou=" << format_double(options.iou_threshold) << "\nrecall_level=" << format_double(options.recall_level)
      << "\nscore_floor=" << format_double(options.score_floor) << "\n";
  w.manifest().config = cfg.str();
  w.write("report.csv", report_to_csv(report));
  w.write("report.json", detail::dump(report_to_json(report)));
  w.finish();
  log << report_to_csv(report);
  return report;
}

// ---------------------------------------------------------------------------
// split

inline SplitResult cmd_split(const std::string& spec_path, const std::string& known_source_path,
                             const std::string& open_source_path, std::optional<std::uint64_t> seed,
                             const std::filesystem::path& out, std::ostream& log) {
  auto spec = ingest_split_spec(spec_path);
  if (seed) spec.seed = *seed;
  const auto known = ingest_annotations(known_source_path);
  const auto open = ingest_annotations(open_source_path);
  auto r = build_split(spec, known, open);

  detail::ArtifactWriter w("split", out);
  w.manifest().seed = spec.seed;
  w.manifest().config = "spec=" + spec_path + "\nknown_source=" + known_source_path +
                        "\nopen_source=" + open_source_path + "\n";
  w.write("open_manifest.json", detail::dump(manifest_to_json(r.open, r.relabeling)));
  w.write("joint_manifest.json", detail::dump(manifest_to_json(r.joint, r.relabeling)));
  w.write("split.json", detail::dump(eval_split_to_json(r.eval_split)));
  std::ostringstream summary;
  summary << "metric,value\n"
          << "known_images," << r.known_image_ids.size() << '\n'
          << "open_images," << r.open_image_ids.size() << '\n'
          << "wilderness_ratio," << format_double(r.realized_wilderness_ratio()) << '\n';
  w.write("summary.csv", summary.str());
  w.finish();
  log << summary.str();
  return r;
}

// ---------------------------------------------------------------------------
// gradcheck

// Returns true when every row passed; zero trials is a neutral pass.
inline bool cmd_gradcheck(std::uint64_t seed, std::size_t trials, const std::optional<std::filesystem::path>& out,
                          std::ostream& log, const GradientMutation& mutate = {}) {
  const auto rows = run_gradcheck(seed, trials, mutate);
  std::ostringstream csv;
  csv << "loss,trials,max_relative_error,passed\n";
  bool ok = true;
  for (const auto& r : rows) {
    csv << r.loss << ',' << r.trials << ',' << format_double(r.max_relative_error) << ',' << (r.passed ? 1 : 0) << '\n';
    ok = ok && r.passed;
  }
  log << csv.str();
  if (out) {
    detail::ArtifactWriter w("gradcheck", *out);
    w.manifest().seed = seed;
    w.manifest().config = "trials=" + std::to_string(trials) + "\n";
    w.write("gradcheck.csv", csv.str());
    w.finish();
  }
  return ok;
}

// ---------------------------------------------------------------------------
// plot

struct PlotRequest {
  std::string kind;
  std::vector<double> alphas{0.5, 1.0, 2.0, 3.0};
  std::string latent_path;
  std::string gt_path;
  std::string det_path;
  std::string split_path;
  std::optional<CategoryId> category;  // pr_curve: a known class, or the unknown curve when absent
  EvalOptions options;
};

inline PlotOutput cmd_plot(const PlotRequest& req, const std::filesystem::path& out) {
  PlotOutput p;
  if (req.kind == "weighting_curves") {
    p = weighting_curves(req.alphas);
  } else if (req.kind == "latent_scatter") {
    if (req.latent_path.empty()) throw std::invalid_argument("latent_scatter needs an input file");
    p = latent_scatter(parse_latent_csv(read_file(req.latent_path)));
  } else if (req.kind == "pr_curve") {
    if (req.gt_path.empty() || req.det_path.empty() || req.split_path.empty()) {
      throw std::invalid_argument("pr_curve needs ground truth, detections and split files");
    }
    const auto gt = ingest_annotations(req.gt_path);
    const auto det = ingest_detections(req.det_path);
    const auto split = ingest_eval_split(req.split_path);
    const auto dets = apply_score_floor(det.detections, req.options.score_floor);
    ApResult ap;
    if (req.category) {
      ap = class_average_precision(dets, gt.annotations, *req.category, req.options.iou_threshold);
    } else {
      ap = ap_unknown(dets, gt.annotations, split, req.options.iou_threshold);
    }
    p = pr_curve(ap);
  } else {
    throw std::invalid_argument("unknown plot kind '" + req.kind + "'");
  }
  detail::ArtifactWriter w("plot", out);
  w.manifest().config = "kind=" + req.kind + "\n";
  w.write(req.kind + ".svg", p.svg);
  w.write(req.kind + ".csv", p.csv);
  w.finish();
  return p;
}

}  // namespace opendet

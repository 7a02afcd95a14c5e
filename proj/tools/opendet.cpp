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

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "opendet/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Open-set detection toolkit: toy training, evaluation, splits, gradient checks, plots"};
  app.require_subcommand(1);

  std::string out;
  std::optional<std::uint64_t> seed;

  auto* train = app.add_subcommand("train", "Train the toy model and evaluate it on an open-set draw");
  std::string config_path;
  train->add_option("--config", config_path, "key=value config file")->required();
  train->add_option("--seed", seed, "Override the configured seed");
  train->add_option("--out", out, "Output directory")->required();

  auto* eval = app.add_subcommand("eval", "Open-set metrics for detections against ground truth");
  std::string gt_path, det_path, split_path;
  opendet::EvalOptions options;
  eval->add_option("--gt", gt_path, "Ground-truth annotation file")->required();
  eval->add_option("--det", det_path, "Detection file")->required();
  eval->add_option("--split", split_path, "Known/unknown class split file")->required();
  eval->add_option("--recall-level", options.recall_level, "Known recall of the WI operating point")
      ->capture_default_str();
  eval->add_option("--iou", options.iou_threshold, "IoU threshold for matching")->capture_default_str();
  eval->add_option("--score-floor", options.score_floor, "Drop detections scoring below this")
      ->capture_default_str();
  eval->add_option("--out", out, "Output directory")->required();

  auto* split = app.add_subcommand("split", "Build an open-set test split from two annotation sources");
  std::string spec_path, known_source, open_source;
  split->add_option("--spec", spec_path, "Split spec file")->required();
  split->add_option("--known-source", known_source, "Annotations providing known images")->required();
  split->add_option("--open-source", open_source, "Annotations providing open-set images")->required();
  split->add_option("--seed", seed, "Override the spec seed");
  split->add_option("--out", out, "Output directory")->required();

  auto* grad = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  std::uint64_t grad_seed = 1;
  std::size_t trials = 100;
  grad->add_option("--seed", grad_seed, "Seed")->capture_default_str();
  grad->add_option("--trials", trials, "Random instances per loss")->capture_default_str();
  grad->add_option("--out", out, "Optional output directory");

  auto* plot = app.add_subcommand("plot", "Emit an SVG plot and its CSV data");
  opendet::PlotRequest req;
  std::optional<long long> category;
  plot->add_option("--kind", req.kind, "weighting_curves, latent_scatter or pr_curve")
      ->required()
      ->check(CLI::IsMember({"weighting_curves", "latent_scatter", "pr_curve"}));
  plot->add_option("--alpha", req.alphas, "Polynomial exponents for weighting_curves");
  plot->add_option("--input", req.latent_path, "Latent CSV for latent_scatter");
  plot->add_option("--gt", req.gt_path, "Ground truth for pr_curve");
  plot->add_option("--det", req.det_path, "Detections for pr_curve");
  plot->add_option("--split", req.split_path, "Split for pr_curve");
  plot->add_option("--class", category, "Known class for pr_curve; the unknown curve when omitted");
  plot->add_option("--iou", req.options.iou_threshold, "IoU threshold")->capture_default_str();
  plot->add_option("--score-floor", req.options.score_floor, "Score floor")->capture_default_str();
  plot->add_option("--out", out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      auto config = opendet::load_config(config_path);
      if (seed) config.set_seed(*seed);
      opendet::cmd_train(config, out, std::cout);
    } else if (*eval) {
      opendet::cmd_eval(gt_path, det_path, split_path, options, out, std::cout);
    } else if (*split) {
      opendet::cmd_split(spec_path, known_source, open_source, seed, out, std::cout);
    } else if (*grad) {
      std::optional<std::filesystem::path> dir;
      if (!out.empty()) dir = out;
      return opendet::cmd_gradcheck(grad_seed, trials, dir, std::cout) ? 0 : 1;
    } else if (*plot) {
      if (category) req.category = *category;
      opendet::cmd_plot(req, out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

// Copyright (c) 2026 MSDiff Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "msdiff/classify.hpp"
#include "msdiff/config.hpp"
#include "msdiff/diffuse.hpp"
#include "msdiff/embed.hpp"
#include "msdiff/hsi.hpp"

// Staged-pipeline glue shared by the CLI and the acceptance suite: the
// stage order is embed -> diffusion -> classifier, with upstream parameters
// frozen at each later stage.
namespace msdiff::pipeline {

struct Dataset {
  hsi::HsiCube cube;
  hsi::LabelMap labels;
  hsi::Split split;
};

inline Dataset load_dataset(const std::string& path, const config::RunConfig& cfg) {
  auto file = hsi::read_cube(path);
  if (!file.labels) {
    throw ValidationError(path + ": cube has no label block; training needs labels");
  }
  Dataset ds{std::move(file.cube), std::move(*file.labels), {}};
  ds.labels.validate_against(ds.cube);
  for (float v : ds.cube.values) {
    if (v < 0.0f || v > 1.0f) {
      throw ValidationError(path + ": values outside [0,1]; normalize the cube first");
    }
  }
  ds.split = hsi::split_pixels(ds.labels, cfg.split_spec());
  return ds;
}

inline std::vector<hsi::Patch> patches_at(const hsi::HsiCube& cube,
                                          const hsi::LabelMap& labels,
                                          const std::vector<hsi::PixelCoord>& coords,
                                          std::int64_t patch_size) {
  std::vector<hsi::Patch> out;
  out.reserve(coords.size());
  for (const auto& c : coords) {
    out.push_back(hsi::extract_patch(cube, labels, c.row, c.col, patch_size));
  }
  return out;
}

/// u_raw latents of clean patches at the given coordinates (stage-2 input).
inline diffuse::LatentSet extract_latents(const hsi::HsiCube& cube,
                                          const hsi::LabelMap& labels,
                                          const std::vector<hsi::PixelCoord>& coords,
                                          const embed::EmbedParams& embed_params) {
  diffuse::LatentSet set;
  set.dim = embed_params.cfg.embed_dim;
  set.latents.reserve(coords.size());
  set.labels.reserve(coords.size());
  for (const auto& c : coords) {
    hsi::Patch patch =
        hsi::extract_patch(cube, labels, c.row, c.col, embed_params.cfg.patch_size);
    set.latents.push_back(embed::embed_coordinate(patch, embed_params).u);
    set.labels.push_back(patch.label);
  }
  return set;
}

/// Stage-3 classifier on clean training features of the requested kind.
inline classify::ClassifierTrainResult train_stage3(
    const Dataset& ds, const embed::EmbedParams& embed_params,
    const diffuse::DiffusionHeadParams* diffusion_params, const config::RunConfig& cfg,
    classify::FeatureKind kind) {
  auto patches = patches_at(ds.cube, ds.labels, ds.split.train, cfg.patch_size);
  std::vector<std::vector<double>> features;
  std::vector<std::uint16_t> labels;
  features.reserve(patches.size());
  labels.reserve(patches.size());
  for (const auto& p : patches) labels.push_back(p.label);
  switch (kind) {
    case classify::FeatureKind::RawSpectra:
      for (const auto& p : patches) features.push_back(classify::center_spectrum(p));
      break;
    case classify::FeatureKind::RawManifold:
      features = classify::extract_features(patches, embed_params, nullptr, cfg.t_star, false);
      break;
    case classify::FeatureKind::DiffusionRefined:
      features = classify::extract_features(patches, embed_params, diffusion_params,
                                            cfg.t_star, true);
      break;
  }
  classify::ClassifierConfig ccfg;
  ccfg.input_dim = static_cast<std::int64_t>(features.front().size());
  ccfg.n_classes = ds.labels.n_classes;
  ccfg.features = kind;
  ccfg.t_star = cfg.t_star;
  classify::ClassifierTrainOptions opt;
  opt.learning_rate = cfg.lr;
  opt.weight_decay = cfg.weight_decay;
  opt.epochs = cfg.epochs;
  opt.seed = cfg.seed;
  return classify::train_classifier(features, labels, ccfg, opt);
}

/// Fixed machine-readable metrics line: case=<label> oa=… aa=… kappa=….
inline std::string metric_line(const std::string& case_label,
                               const classify::MetricsReport& report) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "case=%s oa=%.4f aa=%.4f kappa=%.4f",
                case_label.c_str(), report.oa, report.aa, report.kappa);
  return buf;
}

struct StagedRun {
  embed::EmbedParams embed_params;
  diffuse::DiffusionHeadParams diffusion_params;
  classify::ClassifierParams classifier;
};

/// Full staged training: embed under composite degradation, diffusion head
/// on frozen clean-train latents, classifier on refined features.
inline StagedRun run_stages(const Dataset& ds, const config::RunConfig& cfg) {
  embed::EmbedConfig ecfg = cfg.embed_config(ds.cube.bands, ds.labels.n_classes);
  embed::TrainOptions eopt;
  eopt.learning_rate = cfg.lr;
  eopt.weight_decay = cfg.weight_decay;
  eopt.epochs = cfg.epochs;
  eopt.seed = cfg.seed;
  auto stage1 = embed::train_embed(ds.cube, ds.labels, ds.split.train, ecfg, eopt);

  auto latents = extract_latents(ds.cube, ds.labels, ds.split.train, stage1.params);
  diffuse::DiffusionTrainOptions dopt;
  dopt.learning_rate = cfg.lr;
  dopt.weight_decay = cfg.weight_decay;
  dopt.epochs = cfg.epochs;
  dopt.seed = cfg.seed;
  auto stage2 = diffuse::train_diffusion(latents, cfg.diffusion_config(), dopt);

  auto stage3 = train_stage3(ds, stage1.params, &stage2.params, cfg,
                             classify::FeatureKind::DiffusionRefined);
  return {std::move(stage1.params), std::move(stage2.params), std::move(stage3.params)};
}

/// Nearest-centroid classifier on raw center-pixel spectra; the brute-force
/// separability oracle for synthetic scenes.
inline double nearest_centroid_accuracy(const Dataset& ds) {
  const std::int64_t bands = ds.cube.bands;
  std::vector<std::vector<double>> centroid(
      static_cast<std::size_t>(ds.labels.n_classes), std::vector<double>(bands, 0.0));
  std::vector<std::int64_t> count(static_cast<std::size_t>(ds.labels.n_classes), 0);
  for (const auto& c : ds.split.train) {
    const auto cls = static_cast<std::size_t>(ds.labels.at(c.row, c.col) - 1);
    for (std::int64_t b = 0; b < bands; ++b) {
      centroid[cls][static_cast<std::size_t>(b)] += ds.cube.at(c.row, c.col, b);
    }
    ++count[cls];
  }
  for (std::size_t cls = 0; cls < centroid.size(); ++cls) {
    for (auto& v : centroid[cls]) v /= static_cast<double>(count[cls]);
  }
  std::int64_t correct = 0;
  for (const auto& c : ds.split.test) {
    double best = std::numeric_limits<double>::max();
    std::size_t best_cls = 0;
    for (std::size_t cls = 0; cls < centroid.size(); ++cls) {
      double d2 = 0.0;
      for (std::int64_t b = 0; b < bands; ++b) {
        const double diff = ds.cube.at(c.row, c.col, b) - centroid[cls][static_cast<std::size_t>(b)];
        d2 += diff * diff;
      }
      if (d2 < best) {
        best = d2;
        best_cls = cls;
      }
    }
    if (static_cast<std::uint16_t>(best_cls + 1) == ds.labels.at(c.row, c.col)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.split.test.size());
}

}  // namespace msdiff::pipeline

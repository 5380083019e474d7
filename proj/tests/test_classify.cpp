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

#include <catch2/catch.hpp>
#include <cmath>
#include <filesystem>

#include "msdiff/classify.hpp"

using namespace msdiff;
using namespace msdiff::classify;

namespace {

// Independent brute-force recomputation of OA/AA/kappa for the oracle check.
struct BruteMetrics {
  double oa, aa, kappa;
};

BruteMetrics brute_force_metrics(const ConfusionMatrix& cm) {
  const std::int64_t n = cm.n_classes;
  double total = 0.0, diag = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < n; ++j) total += static_cast<double>(cm.at(i, j));
  }
  for (std::int64_t i = 0; i < n; ++i) diag += static_cast<double>(cm.at(i, i));
  double aa = 0.0;
  int n_rows = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::int64_t j = 0; j < n; ++j) row += static_cast<double>(cm.at(i, j));
    if (row > 0.0) {
      aa += static_cast<double>(cm.at(i, i)) / row;
      ++n_rows;
    }
  }
  aa /= static_cast<double>(n_rows);
  double pe = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    double row = 0.0, col = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      row += static_cast<double>(cm.at(i, j));
      col += static_cast<double>(cm.at(j, i));
    }
    pe += row * col;
  }
  pe /= total * total;
  const double oa = diag / total;
  const double kappa = pe >= 1.0 - 1e-15 ? 0.0 : (oa - pe) / (1.0 - pe);
  return {oa, aa, kappa};
}

ConfusionMatrix make_cm(std::int64_t n, const std::vector<std::int64_t>& counts) {
  ConfusionMatrix cm(n);
  cm.counts = counts;
  return cm;
}

}  // namespace

TEST_CASE("confusion matrix construction") {
  SECTION("perfect predictions are diagonal") {
    ConfusionMatrix cm = confusion({0, 1, 2, 1}, {0, 1, 2, 1}, 3);
    REQUIRE(cm.total() == 4);
    for (std::int64_t i = 0; i < 3; ++i) {
      for (std::int64_t j = 0; j < 3; ++j) {
        if (i != j) REQUIRE(cm.at(i, j) == 0);
      }
    }
  }

  SECTION("empty input gives a zero matrix") {
    ConfusionMatrix cm = confusion({}, {}, 3);
    REQUIRE(cm.total() == 0);
  }

  SECTION("out-of-range entries are rejected") {
    REQUIRE_THROWS_AS(confusion({3}, {0}, 3), ValidationError);
    REQUIRE_THROWS_AS(confusion({0}, {-1}, 3), ValidationError);
  }
}

TEST_CASE("metrics reproduce the worked examples") {
  SECTION("perfect two-class matrix") {
    MetricsReport r = metrics(make_cm(2, {50, 0, 0, 50}));
    REQUIRE(r.oa == 1.0);
    REQUIRE(r.aa == 1.0);
    REQUIRE(r.kappa == 1.0);
  }

  SECTION("chance-level matrix") {
    MetricsReport r = metrics(make_cm(2, {25, 25, 25, 25}));
    REQUIRE(r.oa == 0.5);
    REQUIRE(r.kappa == 0.0);
  }

  SECTION("mixed matrix") {
    MetricsReport r = metrics(make_cm(2, {40, 10, 20, 30}));
    REQUIRE(r.oa == Approx(0.7));
    REQUIRE(r.aa == Approx(0.7));
    REQUIRE(r.kappa == Approx(0.4));
  }

  SECTION("empty matrices are rejected") {
    REQUIRE_THROWS_AS(metrics(make_cm(2, {0, 0, 0, 0})), ValidationError);
  }

  SECTION("classes absent from the ground truth are excluded from AA") {
    MetricsReport r = metrics(make_cm(3, {8, 2, 0, 1, 9, 0, 0, 0, 0}));
    REQUIRE(std::isnan(r.per_class_recall[2]));
    REQUIRE(r.aa == Approx((0.8 + 0.9) / 2.0));
  }
}

TEST_CASE("metrics agree with a brute-force recomputation") {
  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const std::int64_t n = 2 + static_cast<std::int64_t>(rng.below(5));
    ConfusionMatrix cm(n);
    for (auto& c : cm.counts) c = static_cast<std::int64_t>(rng.below(40));
    if (cm.total() == 0) cm.counts[0] = 1;
    MetricsReport r = metrics(cm);
    BruteMetrics b = brute_force_metrics(cm);
    REQUIRE(std::abs(r.oa - b.oa) < 1e-12);
    REQUIRE(std::abs(r.aa - b.aa) < 1e-12);
    REQUIRE(std::abs(r.kappa - b.kappa) < 1e-12);
  }
}

TEST_CASE("kappa boundary behavior") {
  SECTION("diagonal matrices with at least two classes score 1") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      ConfusionMatrix cm(3);
      cm.at(0, 0) = 1 + static_cast<std::int64_t>(rng.below(50));
      cm.at(1, 1) = 1 + static_cast<std::int64_t>(rng.below(50));
      cm.at(2, 2) = static_cast<std::int64_t>(rng.below(50));
      REQUIRE(metrics(cm).kappa == 1.0);
    }
  }

  SECTION("chance predictors score exactly 0") {
    // cm[i][j] = a_i * b_j makes rows proportional to column marginals.
    const std::vector<std::int64_t> a = {3, 5, 2}, b = {4, 1, 5};
    ConfusionMatrix cm(3);
    for (std::int64_t i = 0; i < 3; ++i) {
      for (std::int64_t j = 0; j < 3; ++j) {
        cm.at(i, j) = a[static_cast<std::size_t>(i)] * b[static_cast<std::size_t>(j)];
      }
    }
    REQUIRE(metrics(cm).kappa == Approx(0.0).margin(1e-15));
  }

  SECTION("all mass in one cell degenerates to 0") {
    ConfusionMatrix cm(2);
    cm.at(0, 0) = 10;
    REQUIRE(metrics(cm).kappa == 0.0);
  }

  SECTION("balanced rows with uniform per-class accuracy make AA equal OA") {
    // Both classes have 10 samples and 80% recall.
    MetricsReport r = metrics(make_cm(2, {8, 2, 2, 8}));
    REQUIRE(r.aa == r.oa);
    REQUIRE(r.oa == Approx(0.8));
  }
}

TEST_CASE("classifier training on separable latents") {
  // Two linearly separable clusters in 2-D.
  std::vector<std::vector<double>> features;
  std::vector<std::uint16_t> labels;
  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    features.push_back({1.0 + 0.1 * rng.normal(), 0.1 * rng.normal()});
    labels.push_back(1);
    features.push_back({-1.0 + 0.1 * rng.normal(), 0.1 * rng.normal()});
    labels.push_back(2);
  }
  ClassifierConfig cfg;
  cfg.input_dim = 2;
  cfg.n_classes = 2;
  ClassifierTrainOptions opt;
  opt.epochs = 25;  // 25 x 20 = 500 optimizer steps
  opt.seed = 5;
  auto result = train_classifier(features, labels, cfg, opt);

  int correct = 0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (predict(features[i], result.params) == labels[i]) ++correct;
  }
  REQUIRE(correct == static_cast<int>(features.size()));

  SECTION("identical seeds give identical parameters") {
    auto again = train_classifier(features, labels, cfg, opt);
    for (std::int64_t i = 0; i < result.params.w1.size(); ++i) {
      REQUIRE(again.params.w1.at(i) == result.params.w1.at(i));
    }
  }

  SECTION("checkpoint round trip preserves the feature kind") {
    namespace fs = std::filesystem;
    const auto path = (fs::temp_directory_path() / "msdiff_cls.bin").string();
    ClassifierConfig c2 = cfg;
    c2.features = FeatureKind::RawSpectra;
    auto r2 = train_classifier(features, labels, c2, opt);
    r2.params.save(path);
    ClassifierParams back = ClassifierParams::load(path);
    REQUIRE(back.cfg.features == FeatureKind::RawSpectra);
    REQUIRE(back.cfg.input_dim == 2);
    fs::remove(path);
  }
}

namespace {

struct MiniPipeline {
  hsi::SynthResult scene;
  hsi::Split split;
  embed::EmbedParams embed_params;
  diffuse::DiffusionTrainResult diffusion;

  static MiniPipeline make() {
    auto scene = hsi::synth_cube(20, 20, 8, 3, 77);
    hsi::SplitSpec split_spec;
    split_spec.train_fraction = 0.2;
    split_spec.val_fraction = 0.1;
    split_spec.test_fraction = 0.7;
    split_spec.seed = 13;
    auto split = hsi::split_pixels(scene.labels, split_spec);

    embed::EmbedConfig cfg;
    cfg.patch_size = 3;
    cfg.stride = 3;
    cfg.embed_dim = 8;
    cfg.bottleneck_rank = 3;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.ffn_mult = 2;
    cfg.n_classes = 3;
    cfg.bands = 8;
    embed::TrainOptions opt;
    opt.epochs = 6;
    opt.seed = 9;
    auto trained = embed::train_embed(scene.cube, scene.labels, split.train, cfg, opt);

    diffuse::LatentSet latents;
    latents.dim = 8;
    for (const auto& coord : split.train) {
      auto patch = hsi::extract_patch(scene.cube, scene.labels, coord.row, coord.col, 3);
      latents.latents.push_back(embed::embed_coordinate(patch, trained.params).u);
      latents.labels.push_back(patch.label);
    }
    diffuse::DiffusionConfig dcfg;
    dcfg.latent_dim = 8;
    dcfg.n_freqs = 4;
    dcfg.hidden_mult = 2;
    diffuse::DiffusionTrainOptions dopt;
    dopt.epochs = 10;
    dopt.seed = 21;
    auto diffusion = diffuse::train_diffusion(latents, dcfg, dopt);

    return {std::move(scene), std::move(split), std::move(trained.params),
            std::move(diffusion)};
  }
};

}  // namespace

TEST_CASE("feature extraction paths") {
  static MiniPipeline pipe = MiniPipeline::make();

  std::vector<hsi::Patch> patches;
  for (int i = 0; i < 12; ++i) {
    const auto& c = pipe.split.test[static_cast<std::size_t>(i)];
    patches.push_back(hsi::extract_patch(pipe.scene.cube, pipe.scene.labels, c.row, c.col, 3));
  }

  SECTION("without diffusion the features equal the pooled coordinates") {
    auto feats = extract_features(patches, pipe.embed_params, nullptr, 0.25, false);
    REQUIRE(feats.size() == patches.size());
    for (std::size_t i = 0; i < patches.size(); ++i) {
      REQUIRE(feats[i] == embed::embed_coordinate(patches[i], pipe.embed_params).u);
    }
  }

  SECTION("repeated extraction is identical") {
    auto a = extract_features(patches, pipe.embed_params, &pipe.diffusion.params, 0.25, true);
    auto b = extract_features(patches, pipe.embed_params, &pipe.diffusion.params, 0.25, true);
    REQUIRE(a == b);
  }

  SECTION("checkpoint dimension mismatches are rejected") {
    diffuse::DiffusionConfig bad;
    bad.latent_dim = 6;
    bad.n_freqs = 4;
    auto bad_params = diffuse::DiffusionHeadParams::init(bad, 1);
    REQUIRE_THROWS_AS(extract_features(patches, pipe.embed_params, &bad_params, 0.25, true),
                      ShapeError);
  }
}

TEST_CASE("evaluate runs the staged pipeline") {
  static MiniPipeline pipe = MiniPipeline::make();

  // Stage-3 classifier on refined features of the clean training patches.
  std::vector<hsi::Patch> train_patches;
  std::vector<std::uint16_t> train_labels;
  for (const auto& c : pipe.split.train) {
    train_patches.push_back(
        hsi::extract_patch(pipe.scene.cube, pipe.scene.labels, c.row, c.col, 3));
    train_labels.push_back(train_patches.back().label);
  }
  auto train_features =
      extract_features(train_patches, pipe.embed_params, &pipe.diffusion.params, 0.25, true);

  ClassifierConfig ccfg;
  ccfg.input_dim = 8;
  ccfg.n_classes = 3;
  ccfg.features = FeatureKind::DiffusionRefined;
  ClassifierTrainOptions copt;
  copt.epochs = 15;
  copt.seed = 33;
  auto cls = train_classifier(train_features, train_labels, ccfg, copt);

  SECTION("clean evaluation is deterministic and train OA bounds test OA") {
    auto train_eval = evaluate(pipe.scene.cube, pipe.scene.labels, pipe.split.train,
                               pipe.embed_params, &pipe.diffusion.params, cls.params,
                               nullptr, 1);
    auto test_eval = evaluate(pipe.scene.cube, pipe.scene.labels, pipe.split.test,
                              pipe.embed_params, &pipe.diffusion.params, cls.params,
                              nullptr, 1);
    REQUIRE(train_eval.report.oa >= test_eval.report.oa);
    auto again = evaluate(pipe.scene.cube, pipe.scene.labels, pipe.split.test,
                          pipe.embed_params, &pipe.diffusion.params, cls.params, nullptr, 1);
    REQUIRE(again.report.oa == test_eval.report.oa);
    REQUIRE(again.cm.counts == test_eval.cm.counts);
  }

  SECTION("every benchmark label is accepted") {
    std::vector<hsi::PixelCoord> coords(pipe.split.test.begin(), pipe.split.test.begin() + 10);
    for (const auto& bench : degrade::benchmark_suite()) {
      auto r = evaluate(pipe.scene.cube, pipe.scene.labels, coords, pipe.embed_params,
                        &pipe.diffusion.params, cls.params, &bench, 5);
      REQUIRE(r.cm.total() == 10);
    }
    REQUIRE_FALSE(degrade::find_benchmark("C-11").has_value());
  }

  SECTION("stage-3 training leaves upstream checkpoints byte-identical") {
    namespace fs = std::filesystem;
    const auto embed_path = (fs::temp_directory_path() / "msdiff_embed_frozen.bin").string();
    const auto diff_path = (fs::temp_directory_path() / "msdiff_diff_frozen.bin").string();
    pipe.embed_params.save(embed_path);
    pipe.diffusion.params.save(diff_path);
    const auto d1 = file_digest(embed_path);
    const auto d2 = file_digest(diff_path);
    auto cls2 = train_classifier(train_features, train_labels, ccfg, copt);
    (void)cls2;
    REQUIRE(file_digest(embed_path) == d1);
    REQUIRE(file_digest(diff_path) == d2);
    fs::remove(embed_path);
    fs::remove(diff_path);
  }
}

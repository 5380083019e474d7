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

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "msdiff/diagnostics.hpp"
#include "msdiff/pipeline.hpp"

namespace fs = std::filesystem;
using namespace msdiff;

namespace {

// A missing upstream artifact; the staged protocol is embed -> diffusion ->
// classifier, so later commands refuse to run without the earlier outputs.
class StageOrderError : public std::runtime_error {
 public:
  StageOrderError(const std::string& stage, const std::string& path)
      : std::runtime_error("missing " + stage + " artifact '" + path + "' (run " + stage +
                           " first)") {}
};

void require_stage_file(const std::string& path, const std::string& stage) {
  if (!fs::exists(path)) throw StageOrderError(stage, path);
}

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

config::RunConfig load_config(const std::string& config_path, std::int64_t seed_override) {
  config::RunConfig cfg;
  if (!config_path.empty()) cfg = config::RunConfig::parse_file(config_path);
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  return cfg;
}

void write_manifest(const std::string& command, const config::RunConfig& cfg,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs, double wall_seconds) {
  if (outputs.empty()) return;
  config::RunManifest manifest;
  manifest.command = command;
  manifest.config_snapshot = cfg.serialize();
  manifest.seed = cfg.seed;
  manifest.wall_seconds = wall_seconds;
  for (const auto& p : inputs) manifest.add_input(p);
  for (const auto& p : outputs) manifest.add_output(p);
  manifest.write(outputs.front() + ".manifest");
}

void print_report(const std::string& case_label, const classify::EvaluationResult& result) {
  std::cout << pipeline::metric_line(case_label, result.report) << "\n";
  std::cout << "class  recall\n";
  for (std::size_t c = 0; c < result.report.per_class_recall.size(); ++c) {
    const double r = result.report.per_class_recall[c];
    if (std::isnan(r)) {
      std::printf("%5zu  (no ground truth)\n", c + 1);
    } else {
      std::printf("%5zu  %.4f\n", c + 1, r);
    }
  }
}

std::string cm_csv(const classify::ConfusionMatrix& cm) {
  std::string out;
  for (std::int64_t i = 0; i < cm.n_classes; ++i) {
    for (std::int64_t j = 0; j < cm.n_classes; ++j) {
      out += std::to_string(cm.at(i, j));
      out += (j + 1 < cm.n_classes) ? ',' : '\n';
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"manifold-space diffusion pipeline for degraded hyperspectral classification"};
  app.require_subcommand(1);

  // ---- synth -------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "generate a labeled synthetic cube");
  std::string synth_out;
  std::int64_t synth_h = 100, synth_w = 100, synth_c = 16;
  int synth_classes = 4;
  std::uint64_t synth_seed = 1;
  double synth_jitter = 0.02;
  synth->add_option("--out", synth_out, "output cube path (.hsc)")->required();
  synth->add_option("--height", synth_h, "cube height");
  synth->add_option("--width", synth_w, "cube width");
  synth->add_option("--bands", synth_c, "spectral bands");
  synth->add_option("--classes", synth_classes, "number of classes");
  synth->add_option("--seed", synth_seed, "generation seed");
  synth->add_option("--jitter", synth_jitter, "per-pixel spectral jitter sigma");

  // ---- degrade -----------------------------------------------------------
  auto* degrade_cmd = app.add_subcommand("degrade", "apply composite degradations to a cube");
  std::string deg_in, deg_out, deg_case, deg_weights;
  double deg_rho = 0.5;
  std::uint64_t deg_seed = 0;
  bool deg_stats = false;
  degrade_cmd->add_option("--in", deg_in, "input cube")->required();
  degrade_cmd->add_option("--out", deg_out, "output cube")->required();
  degrade_cmd->add_option("--case", deg_case, "benchmark case label (e.g. C-9)");
  degrade_cmd->add_option("--weights", deg_weights, "comma-separated mixing weights (9 values)");
  degrade_cmd->add_option("--rho", deg_rho, "global intensity for --weights");
  degrade_cmd->add_option("--seed", deg_seed, "degradation seed");
  degrade_cmd->add_flag("--stats", deg_stats, "emit per-band MSE and corrupted fraction");

  // ---- train-embed -------------------------------------------------------
  auto* tembed = app.add_subcommand("train-embed", "stage 1: train the manifold embedding");
  std::string te_data, te_config, te_out;
  std::int64_t te_seed = -1;
  tembed->add_option("--data", te_data, "labeled cube (.hsc)")->required();
  tembed->add_option("--config", te_config, "key=value config file");
  tembed->add_option("--out", te_out, "embedding checkpoint path")->required();
  tembed->add_option("--seed", te_seed, "seed override");

  // ---- extract-latents ---------------------------------------------------
  auto* extract = app.add_subcommand("extract-latents", "manifold coordinates of a split");
  std::string ex_data, ex_embed, ex_out, ex_split = "train", ex_config;
  std::int64_t ex_seed = -1;
  extract->add_option("--data", ex_data, "labeled cube (.hsc)")->required();
  extract->add_option("--ckpt-embed", ex_embed, "embedding checkpoint")->required();
  extract->add_option("--out", ex_out, "latents file (.bin)")->required();
  extract->add_option("--split", ex_split, "train|val|test|all (default train)");
  extract->add_option("--config", ex_config, "key=value config file");
  extract->add_option("--seed", ex_seed, "seed override");

  // ---- train-diffusion ---------------------------------------------------
  auto* tdiff = app.add_subcommand("train-diffusion", "stage 2: train the diffusion head");
  std::string td_latents, td_embed, td_out, td_config;
  std::int64_t td_seed = -1;
  tdiff->add_option("--latents", td_latents, "latents file from extract-latents")->required();
  tdiff->add_option("--ckpt-embed", td_embed, "frozen embedding checkpoint")->required();
  tdiff->add_option("--out", td_out, "diffusion checkpoint path")->required();
  tdiff->add_option("--config", td_config, "key=value config file");
  tdiff->add_option("--seed", td_seed, "seed override");

  // ---- train-classifier --------------------------------------------------
  auto* tcls = app.add_subcommand("train-classifier", "stage 3: train the frozen-feature classifier");
  std::string tc_data, tc_embed, tc_diff, tc_out, tc_config;
  std::int64_t tc_seed = -1;
  bool tc_no_diffusion = false, tc_raw_spectra = false;
  tcls->add_option("--data", tc_data, "labeled cube (.hsc)")->required();
  tcls->add_option("--ckpt-embed", tc_embed, "frozen embedding checkpoint")->required();
  tcls->add_option("--ckpt-diff", tc_diff, "frozen diffusion checkpoint");
  tcls->add_option("--out", tc_out, "classifier checkpoint path")->required();
  tcls->add_option("--config", tc_config, "key=value config file");
  tcls->add_option("--seed", tc_seed, "seed override");
  tcls->add_flag("--no-diffusion", tc_no_diffusion, "train on raw manifold coordinates");
  tcls->add_flag("--raw-spectra", tc_raw_spectra, "train on center-pixel spectra");

  // ---- evaluate ----------------------------------------------------------
  auto* eval = app.add_subcommand("evaluate", "metrics on the test split");
  std::string ev_data, ev_embed, ev_diff, ev_cls, ev_case, ev_dump_cm, ev_config;
  std::int64_t ev_seed = -1;
  eval->add_option("--data", ev_data, "labeled cube (.hsc)")->required();
  eval->add_option("--ckpt-embed", ev_embed, "embedding checkpoint")->required();
  eval->add_option("--ckpt-diff", ev_diff, "diffusion checkpoint");
  eval->add_option("--ckpt-cls", ev_cls, "classifier checkpoint")->required();
  eval->add_option("--case", ev_case, "benchmark case label; omit for clean evaluation");
  eval->add_option("--dump-cm", ev_dump_cm, "write the confusion matrix as CSV");
  eval->add_option("--config", ev_config, "key=value config file");
  eval->add_option("--seed", ev_seed, "seed override");

  // ---- id ----------------------------------------------------------------
  auto* idcmd = app.add_subcommand("id", "TwoNN intrinsic dimensionality per stage");
  std::string id_data, id_embed, id_diff, id_cases = "C-3-3,C-5-1,C-7,C-9", id_out, id_config;
  std::int64_t id_n = 1000, id_seed = -1;
  idcmd->add_option("--data", id_data, "labeled cube (.hsc)")->required();
  idcmd->add_option("--ckpt-embed", id_embed, "embedding checkpoint")->required();
  idcmd->add_option("--ckpt-diff", id_diff, "diffusion checkpoint")->required();
  idcmd->add_option("--cases", id_cases, "comma-separated benchmark labels");
  idcmd->add_option("--n", id_n, "sample size per case");
  idcmd->add_option("--out", id_out, "also write the CSV table here");
  idcmd->add_option("--config", id_config, "key=value config file");
  idcmd->add_option("--seed", id_seed, "seed override");

  // ---- export ------------------------------------------------------------
  auto* exp = app.add_subcommand("export", "latents file to CSV for external projection");
  std::string xp_latents, xp_out;
  exp->add_option("--latents", xp_latents, "latents file")->required();
  exp->add_option("--out", xp_out, "CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    Timer timer;

    if (*synth) {
      auto result = hsi::synth_cube(synth_h, synth_w, synth_c, synth_classes, synth_seed,
                                    synth_jitter);
      hsi::write_cube(result.cube, result.labels, synth_out);
      config::RunConfig cfg;
      cfg.seed = synth_seed;
      write_manifest("synth", cfg, {}, {synth_out}, timer.seconds());
      std::cout << "cube=" << synth_out << " height=" << synth_h << " width=" << synth_w
                << " bands=" << synth_c << " classes=" << synth_classes << "\n";
      return 0;
    }

    if (*degrade_cmd) {
      auto file = hsi::read_cube(deg_in);
      for (float v : file.cube.values) {
        if (v < 0.0f || v > 1.0f) {
          throw ValidationError(deg_in + ": values outside [0,1]; normalize first");
        }
      }
      hsi::HsiCube out;
      if (!deg_case.empty()) {
        auto bench = degrade::find_benchmark(deg_case);
        if (!bench) throw ValidationError("unknown benchmark case '" + deg_case + "'");
        out = degrade::apply_benchmark(file.cube, *bench, deg_seed);
      } else if (!deg_weights.empty()) {
        degrade::DegradationSpec spec;
        std::stringstream ss(deg_weights);
        std::string field;
        std::size_t i = 0;
        while (std::getline(ss, field, ',')) {
          if (i >= spec.weights.size()) throw ValidationError("--weights needs exactly 9 values");
          spec.weights[i++] = std::stod(field);
        }
        if (i != spec.weights.size()) throw ValidationError("--weights needs exactly 9 values");
        spec.rho = deg_rho;
        spec.seed = deg_seed;
        out = degrade::apply_composite(file.cube, spec);
      } else {
        throw ValidationError("degrade needs --case or --weights");
      }
      hsi::write_cube(out, file.labels, deg_out);
      if (deg_stats) {
        auto st = degrade::degradation_stats(file.cube, out);
        for (std::size_t b = 0; b < st.band_mse.size(); ++b) {
          std::printf("band=%zu mse=%.6e\n", b, st.band_mse[b]);
        }
        std::printf("corrupted_fraction=%.6f\n", st.corrupted_fraction);
      }
      config::RunConfig cfg;
      cfg.seed = deg_seed;
      write_manifest("degrade", cfg, {deg_in}, {deg_out}, timer.seconds());
      return 0;
    }

    if (*tembed) {
      auto cfg = load_config(te_config, te_seed);
      auto ds = pipeline::load_dataset(te_data, cfg);
      embed::EmbedConfig ecfg = cfg.embed_config(ds.cube.bands, ds.labels.n_classes);
      embed::TrainOptions opt;
      opt.learning_rate = cfg.lr;
      opt.weight_decay = cfg.weight_decay;
      opt.epochs = cfg.epochs;
      opt.seed = cfg.seed;
      auto result = embed::train_embed(ds.cube, ds.labels, ds.split.train, ecfg, opt);
      for (std::size_t e = 0; e < result.history.size(); ++e) {
        std::printf("epoch=%zu total=%.6f rec=%.6f cls=%.6f\n", e + 1,
                    result.history[e].total, result.history[e].reconstruction,
                    result.history[e].classification);
      }
      result.params.save(te_out);
      write_manifest("train-embed", cfg, {te_data}, {te_out}, timer.seconds());
      return 0;
    }

    if (*extract) {
      require_stage_file(ex_embed, "train-embed");
      auto cfg = load_config(ex_config, ex_seed);
      auto ds = pipeline::load_dataset(ex_data, cfg);
      auto embed_params = embed::EmbedParams::load(ex_embed);
      std::vector<hsi::PixelCoord> coords;
      if (ex_split == "train") {
        coords = ds.split.train;
      } else if (ex_split == "val") {
        coords = ds.split.val;
      } else if (ex_split == "test") {
        coords = ds.split.test;
      } else if (ex_split == "all") {
        coords = ds.split.train;
        coords.insert(coords.end(), ds.split.val.begin(), ds.split.val.end());
        coords.insert(coords.end(), ds.split.test.begin(), ds.split.test.end());
      } else {
        throw ValidationError("--split must be train, val, test, or all");
      }
      auto latents = pipeline::extract_latents(ds.cube, ds.labels, coords, embed_params);
      diffuse::save_latents(latents, ex_out);
      std::cout << "latents=" << latents.latents.size() << " dim=" << latents.dim << "\n";
      write_manifest("extract-latents", cfg, {ex_data, ex_embed}, {ex_out}, timer.seconds());
      return 0;
    }

    if (*tdiff) {
      require_stage_file(td_embed, "train-embed");
      require_stage_file(td_latents, "extract-latents");
      auto cfg = load_config(td_config, td_seed);
      auto embed_params = embed::EmbedParams::load(td_embed);
      auto latents = diffuse::load_latents(td_latents);
      if (latents.dim != embed_params.cfg.embed_dim) {
        throw ShapeError("latent width " + std::to_string(latents.dim) +
                         " does not match embedding checkpoint width " +
                         std::to_string(embed_params.cfg.embed_dim));
      }
      diffuse::DiffusionConfig dcfg = cfg.diffusion_config();
      dcfg.latent_dim = latents.dim;
      diffuse::DiffusionTrainOptions opt;
      opt.learning_rate = cfg.lr;
      opt.weight_decay = cfg.weight_decay;
      opt.epochs = cfg.epochs;
      opt.seed = cfg.seed;
      auto result = diffuse::train_diffusion(latents, dcfg, opt);
      for (std::size_t e = 0; e < result.history.size(); ++e) {
        std::printf("epoch=%zu total=%.6f noise=%.6f clean=%.6f\n", e + 1,
                    result.history[e].total, result.history[e].noise,
                    result.history[e].clean);
      }
      result.params.save(td_out);
      write_manifest("train-diffusion", cfg, {td_latents, td_embed}, {td_out},
                     timer.seconds());
      return 0;
    }

    if (*tcls) {
      require_stage_file(tc_embed, "train-embed");
      if (tc_no_diffusion && tc_raw_spectra) {
        throw ValidationError("--no-diffusion and --raw-spectra are mutually exclusive");
      }
      classify::FeatureKind kind = classify::FeatureKind::DiffusionRefined;
      if (tc_no_diffusion) kind = classify::FeatureKind::RawManifold;
      if (tc_raw_spectra) kind = classify::FeatureKind::RawSpectra;
      auto cfg = load_config(tc_config, tc_seed);
      auto ds = pipeline::load_dataset(tc_data, cfg);
      auto embed_params = embed::EmbedParams::load(tc_embed);
      std::optional<diffuse::DiffusionHeadParams> diff_params;
      if (kind == classify::FeatureKind::DiffusionRefined) {
        if (tc_diff.empty()) {
          throw StageOrderError("train-diffusion", "(--ckpt-diff not given)");
        }
        require_stage_file(tc_diff, "train-diffusion");
        diff_params = diffuse::DiffusionHeadParams::load(tc_diff);
      }
      auto result = pipeline::train_stage3(
          ds, embed_params, diff_params ? &*diff_params : nullptr, cfg, kind);
      for (std::size_t e = 0; e < result.history.size(); ++e) {
        std::printf("epoch=%zu loss=%.6f\n", e + 1, result.history[e]);
      }
      result.params.save(tc_out);
      std::vector<std::string> inputs = {tc_data, tc_embed};
      if (!tc_diff.empty()) inputs.push_back(tc_diff);
      write_manifest("train-classifier", cfg, inputs, {tc_out}, timer.seconds());
      return 0;
    }

    if (*eval) {
      require_stage_file(ev_embed, "train-embed");
      require_stage_file(ev_cls, "train-classifier");
      auto cfg = load_config(ev_config, ev_seed);
      auto ds = pipeline::load_dataset(ev_data, cfg);
      auto embed_params = embed::EmbedParams::load(ev_embed);
      auto cls = classify::ClassifierParams::load(ev_cls);
      std::optional<diffuse::DiffusionHeadParams> diff_params;
      if (cls.cfg.features == classify::FeatureKind::DiffusionRefined) {
        if (ev_diff.empty()) {
          throw StageOrderError("train-diffusion", "(--ckpt-diff not given)");
        }
        require_stage_file(ev_diff, "train-diffusion");
        diff_params = diffuse::DiffusionHeadParams::load(ev_diff);
      }
      const degrade::BenchmarkCase* bench = nullptr;
      std::optional<degrade::BenchmarkCase> bench_storage;
      std::string case_label = "none";
      if (!ev_case.empty()) {
        bench_storage = degrade::find_benchmark(ev_case);
        if (!bench_storage) throw ValidationError("unknown benchmark case '" + ev_case + "'");
        bench = &*bench_storage;
        case_label = ev_case;
      }
      auto result = classify::evaluate(ds.cube, ds.labels, ds.split.test, embed_params,
                                       diff_params ? &*diff_params : nullptr, cls, bench,
                                       cfg.seed);
      print_report(case_label, result);
      if (!ev_dump_cm.empty()) {
        std::ofstream out(ev_dump_cm, std::ios::trunc);
        if (!out) throw FormatError("cannot write " + ev_dump_cm);
        out << cm_csv(result.cm);
        out.close();
        write_manifest("evaluate", cfg, {ev_data, ev_embed, ev_cls}, {ev_dump_cm},
                       timer.seconds());
      }
      return 0;
    }

    if (*idcmd) {
      require_stage_file(id_embed, "train-embed");
      require_stage_file(id_diff, "train-diffusion");
      auto cfg = load_config(id_config, id_seed);
      auto ds = pipeline::load_dataset(id_data, cfg);
      auto embed_params = embed::EmbedParams::load(id_embed);
      auto diff_params = diffuse::DiffusionHeadParams::load(id_diff);
      std::vector<degrade::BenchmarkCase> cases;
      std::stringstream ss(id_cases);
      std::string label;
      while (std::getline(ss, label, ',')) {
        auto bench = degrade::find_benchmark(label);
        if (!bench) throw ValidationError("unknown benchmark case '" + label + "'");
        cases.push_back(*bench);
      }
      auto rows = diag::id_report(ds.cube, ds.labels, embed_params, diff_params, cases,
                                  id_n, cfg.seed, cfg.t_star, &ds.split.test);
      const std::string csv = diag::id_table_csv(rows);
      std::cout << csv;
      if (!id_out.empty()) {
        std::ofstream out(id_out, std::ios::trunc);
        if (!out) throw FormatError("cannot write " + id_out);
        out << csv;
        out.close();
        write_manifest("id", cfg, {id_data, id_embed, id_diff}, {id_out}, timer.seconds());
      }
      return 0;
    }

    if (*exp) {
      require_stage_file(xp_latents, "extract-latents");
      auto latents = diffuse::load_latents(xp_latents);
      diag::export_embeddings(latents.latents, latents.labels, xp_out);
      config::RunConfig cfg;
      write_manifest("export", cfg, {xp_latents}, {xp_out}, timer.seconds());
      std::cout << "rows=" << latents.latents.size() << " dim=" << latents.dim << "\n";
      return 0;
    }
  } catch (const StageOrderError& e) {
    std::cerr << "error: stage-order: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: validation: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "error: shape: " << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "error: format: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

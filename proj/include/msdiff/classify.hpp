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

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "msdiff/checkpoint.hpp"
#include "msdiff/degrade.hpp"
#include "msdiff/diffuse.hpp"
#include "msdiff/embed.hpp"
#include "msdiff/hsi.hpp"
#include "msdiff/optim.hpp"

// Stage-3 classification on frozen features plus the evaluation metrics
// (overall accuracy, average per-class recall, kappa).
namespace msdiff::classify {

using numkit::Tensor;

// Which features the classifier was trained on; stored in its checkpoint so
// evaluation replays the same path.
enum class FeatureKind : int {
  DiffusionRefined = 0,  // refine(u_raw, t*)
  RawManifold = 1,       // u_raw, the w/o-diffusion ablation
  RawSpectra = 2,        // center-pixel spectrum, the w/o-manifold analog
};

inline const char* feature_kind_name(FeatureKind k) {
  switch (k) {
    case FeatureKind::DiffusionRefined: return "diffusion-refined";
    case FeatureKind::RawManifold: return "manifold";
    case FeatureKind::RawSpectra: return "raw-spectra";
  }
  return "?";
}

struct ClassifierConfig {
  std::int64_t input_dim = 0;
  std::int64_t n_classes = 0;
  FeatureKind features = FeatureKind::DiffusionRefined;
  double t_star = 0.25;

  std::int64_t hidden_dim() const { return 2 * input_dim; }

  void validate() const {
    if (input_dim < 1) throw ValidationError("classifier: input_dim must be positive");
    if (n_classes < 2) throw ValidationError("classifier: need at least two classes");
    if (!(t_star > 0.0 && t_star < 1.0)) {
      throw ValidationError("classifier: t* must lie in (0,1)");
    }
  }
};

/// Shallow MLP: D -> 2D (GELU) -> n_classes.
struct ClassifierParams {
  ClassifierConfig cfg;
  Tensor w1, b1, w2, b2;

  static ClassifierParams init(const ClassifierConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ClassifierParams p;
    p.cfg = cfg;
    const auto in = cfg.input_dim, hid = cfg.hidden_dim();
    p.w1 = Tensor::randn_param({in, hid}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    p.b1 = Tensor::zeros_param({hid});
    p.w2 = Tensor::randn_param({hid, cfg.n_classes}, rng,
                               1.0 / std::sqrt(static_cast<double>(hid)));
    p.b2 = Tensor::zeros_param({cfg.n_classes});
    return p;
  }

  std::vector<Tensor> trainable() const { return {w1, b1, w2, b2}; }

  numkit::NamedTensors named() const {
    numkit::NamedTensors out;
    Tensor meta = Tensor::of({4}, {static_cast<double>(cfg.input_dim),
                                   static_cast<double>(cfg.n_classes),
                                   static_cast<double>(static_cast<int>(cfg.features)),
                                   cfg.t_star});
    out.emplace_back("classifier.meta", meta);
    out.emplace_back("classifier.w1", w1);
    out.emplace_back("classifier.b1", b1);
    out.emplace_back("classifier.w2", w2);
    out.emplace_back("classifier.b2", b2);
    return out;
  }

  void save(const std::string& path) const { numkit::save_checkpoint(named(), path); }

  static ClassifierParams load(const std::string& path) {
    auto ts = numkit::load_checkpoint(path);
    numkit::ensure_finite(ts, path);
    const Tensor& meta = numkit::find_tensor(ts, "classifier.meta");
    if (meta.size() != 4) throw FormatError(path + ": classifier.meta has wrong size");
    ClassifierConfig cfg;
    cfg.input_dim = static_cast<std::int64_t>(meta.at(0));
    cfg.n_classes = static_cast<std::int64_t>(meta.at(1));
    cfg.features = static_cast<FeatureKind>(static_cast<int>(meta.at(2)));
    cfg.t_star = meta.at(3);
    ClassifierParams p = init(cfg, 0);
    auto grab = [&](const std::string& name, Tensor& dst) {
      const Tensor& src = numkit::find_tensor(ts, name);
      if (src.shape != dst.shape) {
        throw FormatError(path + ": tensor '" + name + "' has unexpected shape");
      }
      *dst.data = *src.data;
    };
    grab("classifier.w1", p.w1);
    grab("classifier.b1", p.b1);
    grab("classifier.w2", p.w2);
    grab("classifier.b2", p.b2);
    return p;
  }
};

inline Tensor classifier_logits(const Tensor& x, const ClassifierParams& params) {
  using namespace numkit;
  Tensor h = gelu(add_rowvec(matmul(x, params.w1), params.b1));
  return add_rowvec(matmul(h, params.w2), params.b2);
}

/// Predicted 1-based class label for one feature vector.
inline std::uint16_t predict(const std::vector<double>& feature,
                             const ClassifierParams& params) {
  Tensor x = Tensor::of({1, params.cfg.input_dim}, feature);
  Tensor logits = classifier_logits(x, params);
  std::int64_t best = 0;
  for (std::int64_t c = 1; c < params.cfg.n_classes; ++c) {
    if (logits.at(c) > logits.at(best)) best = c;
  }
  return static_cast<std::uint16_t>(best + 1);
}

// --------------------------------------------------------------------------
// Feature extraction through the frozen stages
// --------------------------------------------------------------------------

/// The center-pixel spectrum of a patch (the raw-spectra ablation feature).
inline std::vector<double> center_spectrum(const hsi::Patch& patch) {
  const std::int64_t mid = patch.size / 2;
  std::vector<double> out(static_cast<std::size_t>(patch.bands));
  for (std::int64_t b = 0; b < patch.bands; ++b) out[static_cast<std::size_t>(b)] = patch.at(mid, mid, b);
  return out;
}

/// u_raw from the frozen embedding; optionally diffusion-refined at t*.
/// The flag-off path backs the w/o-diffusion ablation.
inline std::vector<std::vector<double>> extract_features(
    const std::vector<hsi::Patch>& patches, const embed::EmbedParams& embed_params,
    const diffuse::DiffusionHeadParams* diffusion_params, double t_star,
    bool use_diffusion) {
  if (use_diffusion) {
    if (diffusion_params == nullptr) {
      throw ValidationError("extract_features: diffusion checkpoint required");
    }
    if (diffusion_params->cfg.latent_dim != embed_params.cfg.embed_dim) {
      throw ShapeError("extract_features: diffusion latent width " +
                       std::to_string(diffusion_params->cfg.latent_dim) +
                       " does not match embedding width " +
                       std::to_string(embed_params.cfg.embed_dim));
    }
  }
  std::vector<std::vector<double>> out;
  out.reserve(patches.size());
  for (const auto& patch : patches) {
    auto u = embed::embed_coordinate(patch, embed_params).u;
    if (use_diffusion) u = diffuse::refine(u, t_star, *diffusion_params);
    out.push_back(std::move(u));
  }
  return out;
}

// --------------------------------------------------------------------------
// Metrics
// --------------------------------------------------------------------------

struct ConfusionMatrix {
  std::int64_t n_classes = 0;
  std::vector<std::int64_t> counts;  // rows = truth, cols = prediction

  explicit ConfusionMatrix(std::int64_t n = 0)
      : n_classes(n), counts(static_cast<std::size_t>(n * n), 0) {}

  std::int64_t& at(std::int64_t truth, std::int64_t pred) {
    return counts[static_cast<std::size_t>(truth * n_classes + pred)];
  }
  std::int64_t at(std::int64_t truth, std::int64_t pred) const {
    return counts[static_cast<std::size_t>(truth * n_classes + pred)];
  }
  std::int64_t total() const {
    std::int64_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
};

/// Builds counts[truth][pred] from aligned 0-based index sequences.
inline ConfusionMatrix confusion(const std::vector<std::int64_t>& predictions,
                                 const std::vector<std::int64_t>& truths,
                                 std::int64_t n_classes) {
  if (predictions.size() != truths.size()) {
    throw ShapeError("confusion: prediction/label counts differ");
  }
  ConfusionMatrix cm(n_classes);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto p = predictions[i], t = truths[i];
    if (p < 0 || p >= n_classes || t < 0 || t >= n_classes) {
      throw ValidationError("confusion: class index out of range at sample " +
                            std::to_string(i));
    }
    ++cm.at(t, p);
  }
  return cm;
}

struct MetricsReport {
  double oa = 0.0;
  double aa = 0.0;
  double kappa = 0.0;
  std::vector<double> per_class_recall;  // NaN for classes absent from truth
};

/// OA = trace/total; AA = mean recall over classes with ground truth; kappa
/// chance-corrected with p_e from the marginals (p_e = 1 maps to 0).
inline MetricsReport metrics(const ConfusionMatrix& cm) {
  const std::int64_t n = cm.n_classes;
  const std::int64_t total = cm.total();
  if (total <= 0) throw ValidationError("metrics: empty confusion matrix");
  MetricsReport rep;
  std::int64_t trace = 0;
  double aa_sum = 0.0;
  std::int64_t aa_classes = 0;
  rep.per_class_recall.assign(static_cast<std::size_t>(n),
                              std::numeric_limits<double>::quiet_NaN());
  double pe = 0.0;
  for (std::int64_t c = 0; c < n; ++c) {
    std::int64_t row = 0, col = 0;
    for (std::int64_t j = 0; j < n; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    trace += cm.at(c, c);
    if (row > 0) {
      const double recall = static_cast<double>(cm.at(c, c)) / static_cast<double>(row);
      rep.per_class_recall[static_cast<std::size_t>(c)] = recall;
      aa_sum += recall;
      ++aa_classes;
    }
    pe += static_cast<double>(row) * static_cast<double>(col);
  }
  pe /= static_cast<double>(total) * static_cast<double>(total);
  rep.oa = static_cast<double>(trace) / static_cast<double>(total);
  rep.aa = aa_classes > 0 ? aa_sum / static_cast<double>(aa_classes) : 0.0;
  rep.kappa = pe >= 1.0 - 1e-15 ? 0.0 : (rep.oa - pe) / (1.0 - pe);
  return rep;
}

// --------------------------------------------------------------------------
// Stage-3 training
// --------------------------------------------------------------------------

struct ClassifierTrainOptions {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  std::int64_t epochs = 20;
  std::uint64_t seed = 1;
};

struct ClassifierTrainResult {
  ClassifierParams params;
  std::vector<double> history;  // per-epoch mean cross-entropy
};

inline ClassifierParams initial_training_params(const ClassifierConfig& cfg,
                                                std::uint64_t seed) {
  return ClassifierParams::init(cfg, mix_seed(seed, 0xC1A55ull));
}

/// Cross-entropy training on fixed feature vectors (upstream stages frozen).
inline ClassifierTrainResult train_classifier(const std::vector<std::vector<double>>& features,
                                              const std::vector<std::uint16_t>& labels,
                                              const ClassifierConfig& cfg,
                                              const ClassifierTrainOptions& opt) {
  cfg.validate();
  if (features.size() != labels.size() || features.empty()) {
    throw ValidationError("train_classifier: features and labels must align");
  }
  for (const auto& f : features) {
    if (static_cast<std::int64_t>(f.size()) != cfg.input_dim) {
      throw ShapeError("train_classifier: feature width mismatch");
    }
  }
  ClassifierParams params = initial_training_params(cfg, opt.seed);
  numkit::AdamWConfig ocfg;
  ocfg.learning_rate = opt.learning_rate;
  ocfg.weight_decay = opt.weight_decay;
  numkit::AdamW optimizer(params.trainable(), ocfg);

  std::vector<double> history;
  std::vector<std::size_t> order(features.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::int64_t epoch = 0; epoch < opt.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(opt.seed, 0xC500ull + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    double mean_loss = 0.0;
    for (std::size_t idx : order) {
      const auto label = labels[idx];
      if (label == 0 || label > cfg.n_classes) {
        throw ValidationError("train_classifier: label out of range");
      }
      optimizer.zero_grad();
      double loss_value = 0.0;
      {
        numkit::Tape tape;
        Tensor x = Tensor::of({1, cfg.input_dim}, features[idx]);
        Tensor loss = numkit::softmax_cross_entropy(classifier_logits(x, params),
                                                    {static_cast<std::int64_t>(label - 1)});
        loss_value = loss.at(0);
        if (!std::isfinite(loss_value)) {
          throw ValidationError("train_classifier: non-finite loss");
        }
        tape.backward(loss);
      }
      optimizer.step();
      mean_loss += loss_value;
    }
    history.push_back(mean_loss / static_cast<double>(order.size()));
  }
  return {std::move(params), std::move(history)};
}

// --------------------------------------------------------------------------
// End-to-end evaluation
// --------------------------------------------------------------------------

struct EvaluationResult {
  MetricsReport report;
  ConfusionMatrix cm{0};
};

/// Optionally degrades the cube with a named benchmark case, extracts test
/// patches, classifies them per the classifier's stored feature kind, and
/// reports metrics. A null case evaluates the clean cube.
inline EvaluationResult evaluate(const hsi::HsiCube& cube, const hsi::LabelMap& labels,
                                 const std::vector<hsi::PixelCoord>& coords,
                                 const embed::EmbedParams& embed_params,
                                 const diffuse::DiffusionHeadParams* diffusion_params,
                                 const ClassifierParams& cls,
                                 const degrade::BenchmarkCase* bench, std::uint64_t seed) {
  if (coords.empty()) throw ValidationError("evaluate: empty coordinate list");
  if (cls.cfg.n_classes != labels.n_classes) {
    throw ShapeError("evaluate: classifier expects " + std::to_string(cls.cfg.n_classes) +
                     " classes, label map has " + std::to_string(labels.n_classes));
  }
  const hsi::HsiCube eval_cube =
      bench != nullptr ? degrade::apply_benchmark(cube, *bench, seed) : cube;

  std::vector<std::int64_t> preds, truths;
  preds.reserve(coords.size());
  truths.reserve(coords.size());
  for (const auto& coord : coords) {
    hsi::Patch patch = hsi::extract_patch(eval_cube, labels, coord.row, coord.col,
                                          embed_params.cfg.patch_size);
    if (patch.label == 0) throw ValidationError("evaluate: unlabeled coordinate");
    std::vector<double> feature;
    switch (cls.cfg.features) {
      case FeatureKind::RawSpectra:
        feature = center_spectrum(patch);
        break;
      case FeatureKind::RawManifold:
        feature = embed::embed_coordinate(patch, embed_params).u;
        break;
      case FeatureKind::DiffusionRefined: {
        if (diffusion_params == nullptr) {
          throw ValidationError("evaluate: diffusion checkpoint required for refined features");
        }
        auto u = embed::embed_coordinate(patch, embed_params).u;
        feature = diffuse::refine(u, cls.cfg.t_star, *diffusion_params);
        break;
      }
    }
    preds.push_back(static_cast<std::int64_t>(predict(feature, cls)) - 1);
    truths.push_back(static_cast<std::int64_t>(patch.label) - 1);
  }
  EvaluationResult out;
  out.cm = confusion(preds, truths, labels.n_classes);
  out.report = metrics(out.cm);
  return out;
}

}  // namespace msdiff::classify

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

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "msdiff/checkpoint.hpp"
#include "msdiff/degrade.hpp"
#include "msdiff/hsi.hpp"
#include "msdiff/optim.hpp"
#include "msdiff/tensor.hpp"

// Discriminative manifold embedding: spectral-bottleneck patch embedding,
// pre-norm transformer blocks with RMS normalization, token aggregation to a
// D-dimensional manifold coordinate, plus reconstruction and classification
// heads trained jointly under composite degradation.
namespace msdiff::embed {

using numkit::Tensor;

struct EmbedConfig {
  std::int64_t patch_size = 9;
  std::int64_t stride = 3;
  std::int64_t embed_dim = 64;
  std::int64_t bottleneck_rank = 8;
  std::int64_t layers = 2;
  std::int64_t heads = 4;
  std::int64_t ffn_mult = 4;
  double lambda_cls = 0.1;
  std::int64_t n_classes = 0;
  std::int64_t bands = 0;

  std::int64_t tokens_per_side() const { return patch_size / stride; }
  std::int64_t tokens() const { return tokens_per_side() * tokens_per_side(); }
  std::int64_t head_dim() const { return embed_dim / heads; }
  std::int64_t patch_elems() const { return patch_size * patch_size * bands; }

  void validate() const {
    if (patch_size <= 0 || patch_size % 2 == 0) {
      throw ValidationError("embed: patch size must be odd and positive");
    }
    if (stride <= 0 || patch_size % stride != 0) {
      throw ValidationError("embed: patch size must be divisible by the stride");
    }
    if (tokens() < 1) throw ValidationError("embed: need at least one token");
    if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0) {
      throw ValidationError("embed: embed_dim must be divisible by heads");
    }
    if (bottleneck_rank < 1 || bottleneck_rank >= bands) {
      throw ValidationError("embed: bottleneck rank must satisfy 1 <= r < bands");
    }
    if (layers < 0) throw ValidationError("embed: layer count must be nonnegative");
    if (ffn_mult < 1) throw ValidationError("embed: ffn_mult must be >= 1");
    if (lambda_cls < 0.0) throw ValidationError("embed: lambda_cls must be >= 0");
    if (n_classes < 2) throw ValidationError("embed: need at least two classes");
    if (bands < 2) throw ValidationError("embed: need at least two bands");
    // The manifold coordinate must be much narrower than the raw patch.
    if (4 * embed_dim >= patch_elems()) {
      throw ValidationError("embed: embed_dim too large, require D < P*P*C/4");
    }
  }
};

struct EmbedParams {
  EmbedConfig cfg;
  Tensor spec_w, spec_b;  // C -> r bottleneck
  Tensor tok_w, tok_b;    // (r s^2) -> D tile projection
  Tensor pos;             // N x D learned positional embedding

  struct Block {
    Tensor gain1;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor gain2;
    Tensor w1, b1, w2, b2;
  };
  std::vector<Block> blocks;

  Tensor final_gain;       // D
  Tensor recon_w, recon_b; // D -> P*P*C reconstruction head
  Tensor cls_w, cls_b;     // D -> n_classes head on the manifold coordinate

  static EmbedParams init(const EmbedConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    EmbedParams p;
    p.cfg = cfg;
    const auto C = cfg.bands, r = cfg.bottleneck_rank, D = cfg.embed_dim;
    const auto tile = r * cfg.stride * cfg.stride;
    p.spec_w = Tensor::randn_param({C, r}, rng, 1.0 / std::sqrt(static_cast<double>(C)));
    p.spec_b = Tensor::zeros_param({r});
    p.tok_w = Tensor::randn_param({tile, D}, rng, 1.0 / std::sqrt(static_cast<double>(tile)));
    p.tok_b = Tensor::zeros_param({D});
    p.pos = Tensor::randn_param({cfg.tokens(), D}, rng, 0.02);
    const double dscale = 1.0 / std::sqrt(static_cast<double>(D));
    for (std::int64_t l = 0; l < cfg.layers; ++l) {
      Block b;
      b.gain1 = Tensor::full_param({D}, 1.0);
      b.wq = Tensor::randn_param({D, D}, rng, dscale);
      b.bq = Tensor::zeros_param({D});
      b.wk = Tensor::randn_param({D, D}, rng, dscale);
      b.bk = Tensor::zeros_param({D});
      b.wv = Tensor::randn_param({D, D}, rng, dscale);
      b.bv = Tensor::zeros_param({D});
      b.wo = Tensor::randn_param({D, D}, rng, dscale);
      b.bo = Tensor::zeros_param({D});
      b.gain2 = Tensor::full_param({D}, 1.0);
      b.w1 = Tensor::randn_param({D, cfg.ffn_mult * D}, rng, dscale);
      b.b1 = Tensor::zeros_param({cfg.ffn_mult * D});
      b.w2 = Tensor::randn_param({cfg.ffn_mult * D, D}, rng,
                                 1.0 / std::sqrt(static_cast<double>(cfg.ffn_mult * D)));
      b.b2 = Tensor::zeros_param({D});
      p.blocks.push_back(std::move(b));
    }
    p.final_gain = Tensor::full_param({D}, 1.0);
    p.recon_w = Tensor::randn_param({D, cfg.patch_elems()}, rng, dscale);
    p.recon_b = Tensor::zeros_param({cfg.patch_elems()});
    p.cls_w = Tensor::randn_param({D, cfg.n_classes}, rng, dscale);
    p.cls_b = Tensor::zeros_param({cfg.n_classes});
    return p;
  }

  std::vector<Tensor> trainable() const {
    std::vector<Tensor> out = {spec_w, spec_b, tok_w, tok_b, pos};
    for (const auto& b : blocks) {
      for (const auto& t : {b.gain1, b.wq, b.bq, b.wk, b.bk, b.wv, b.bv, b.wo, b.bo,
                            b.gain2, b.w1, b.b1, b.w2, b.b2}) {
        out.push_back(t);
      }
    }
    out.push_back(final_gain);
    out.push_back(recon_w);
    out.push_back(recon_b);
    out.push_back(cls_w);
    out.push_back(cls_b);
    return out;
  }

  numkit::NamedTensors named() const {
    numkit::NamedTensors out;
    Tensor meta = Tensor::of(
        {10},
        {static_cast<double>(cfg.patch_size), static_cast<double>(cfg.stride),
         static_cast<double>(cfg.embed_dim), static_cast<double>(cfg.bottleneck_rank),
         static_cast<double>(cfg.layers), static_cast<double>(cfg.heads),
         static_cast<double>(cfg.ffn_mult), static_cast<double>(cfg.n_classes),
         static_cast<double>(cfg.bands), cfg.lambda_cls});
    out.emplace_back("embed.meta", meta);
    out.emplace_back("embed.spectral.weight", spec_w);
    out.emplace_back("embed.spectral.bias", spec_b);
    out.emplace_back("embed.token.weight", tok_w);
    out.emplace_back("embed.token.bias", tok_b);
    out.emplace_back("embed.pos", pos);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const auto& b = blocks[l];
      const std::string base = "embed.block" + std::to_string(l) + ".";
      out.emplace_back(base + "gain1", b.gain1);
      out.emplace_back(base + "wq", b.wq);
      out.emplace_back(base + "bq", b.bq);
      out.emplace_back(base + "wk", b.wk);
      out.emplace_back(base + "bk", b.bk);
      out.emplace_back(base + "wv", b.wv);
      out.emplace_back(base + "bv", b.bv);
      out.emplace_back(base + "wo", b.wo);
      out.emplace_back(base + "bo", b.bo);
      out.emplace_back(base + "gain2", b.gain2);
      out.emplace_back(base + "w1", b.w1);
      out.emplace_back(base + "b1", b.b1);
      out.emplace_back(base + "w2", b.w2);
      out.emplace_back(base + "b2", b.b2);
    }
    out.emplace_back("embed.final_gain", final_gain);
    out.emplace_back("embed.recon.weight", recon_w);
    out.emplace_back("embed.recon.bias", recon_b);
    out.emplace_back("embed.cls.weight", cls_w);
    out.emplace_back("embed.cls.bias", cls_b);
    return out;
  }

  void save(const std::string& path) const { numkit::save_checkpoint(named(), path); }

  static EmbedParams load(const std::string& path) {
    auto ts = numkit::load_checkpoint(path);
    numkit::ensure_finite(ts, path);
    const Tensor& meta = numkit::find_tensor(ts, "embed.meta");
    if (meta.size() != 10) throw FormatError(path + ": embed.meta has wrong size");
    EmbedConfig cfg;
    cfg.patch_size = static_cast<std::int64_t>(meta.at(0));
    cfg.stride = static_cast<std::int64_t>(meta.at(1));
    cfg.embed_dim = static_cast<std::int64_t>(meta.at(2));
    cfg.bottleneck_rank = static_cast<std::int64_t>(meta.at(3));
    cfg.layers = static_cast<std::int64_t>(meta.at(4));
    cfg.heads = static_cast<std::int64_t>(meta.at(5));
    cfg.ffn_mult = static_cast<std::int64_t>(meta.at(6));
    cfg.n_classes = static_cast<std::int64_t>(meta.at(7));
    cfg.bands = static_cast<std::int64_t>(meta.at(8));
    cfg.lambda_cls = meta.at(9);
    EmbedParams p = init(cfg, 0);
    auto grab = [&](const std::string& name, Tensor& dst) {
      const Tensor& src = numkit::find_tensor(ts, name);
      if (src.shape != dst.shape) {
        throw FormatError(path + ": tensor '" + name + "' has shape " +
                          numkit::shape_str(src.shape) + ", expected " +
                          numkit::shape_str(dst.shape));
      }
      *dst.data = *src.data;
    };
    grab("embed.spectral.weight", p.spec_w);
    grab("embed.spectral.bias", p.spec_b);
    grab("embed.token.weight", p.tok_w);
    grab("embed.token.bias", p.tok_b);
    grab("embed.pos", p.pos);
    for (std::size_t l = 0; l < p.blocks.size(); ++l) {
      auto& b = p.blocks[l];
      const std::string base = "embed.block" + std::to_string(l) + ".";
      grab(base + "gain1", b.gain1);
      grab(base + "wq", b.wq);
      grab(base + "bq", b.bq);
      grab(base + "wk", b.wk);
      grab(base + "bk", b.bk);
      grab(base + "wv", b.wv);
      grab(base + "bv", b.bv);
      grab(base + "wo", b.wo);
      grab(base + "bo", b.bo);
      grab(base + "gain2", b.gain2);
      grab(base + "w1", b.w1);
      grab(base + "b1", b.b1);
      grab(base + "w2", b.w2);
      grab(base + "b2", b.b2);
    }
    grab("embed.final_gain", p.final_gain);
    grab("embed.recon.weight", p.recon_w);
    grab("embed.recon.bias", p.recon_b);
    grab("embed.cls.weight", p.cls_w);
    grab("embed.cls.bias", p.cls_b);
    return p;
  }
};

/// Patch values as a (P*P) x C matrix, pixels in row-major order.
inline Tensor patch_to_tensor(const hsi::Patch& patch) {
  return Tensor::of({patch.size * patch.size, patch.bands}, patch.values);
}

inline Tensor patch_to_flat(const hsi::Patch& patch) {
  return Tensor::of({1, patch.size * patch.size * patch.bands}, patch.values);
}

namespace detail {

/// Index map for regrouping a (P*P) x r matrix into N rows of flattened
/// s x s tiles, element order (dy, dx, channel).
inline std::vector<std::int64_t> tile_index_map(const EmbedConfig& cfg) {
  const auto P = cfg.patch_size, s = cfg.stride, r = cfg.bottleneck_rank;
  const auto side = cfg.tokens_per_side();
  std::vector<std::int64_t> idx;
  idx.reserve(static_cast<std::size_t>(cfg.tokens() * s * s * r));
  for (std::int64_t ty = 0; ty < side; ++ty) {
    for (std::int64_t tx = 0; tx < side; ++tx) {
      for (std::int64_t dy = 0; dy < s; ++dy) {
        for (std::int64_t dx = 0; dx < s; ++dx) {
          const std::int64_t pixel = (ty * s + dy) * P + (tx * s + dx);
          for (std::int64_t c = 0; c < r; ++c) idx.push_back(pixel * r + c);
        }
      }
    }
  }
  return idx;
}

}  // namespace detail

/// Spectral bottleneck, tiling, linear projection, positional embedding.
inline Tensor patch_embed(const Tensor& patch, const EmbedParams& params) {
  const auto& cfg = params.cfg;
  if (patch.rank() != 2 || patch.shape[0] != cfg.patch_size * cfg.patch_size ||
      patch.shape[1] != cfg.bands) {
    throw ShapeError("patch_embed: patch tensor " + numkit::shape_str(patch.shape) +
                     " does not match config");
  }
  using namespace numkit;
  Tensor reduced = add_rowvec(matmul(patch, params.spec_w), params.spec_b);
  Tensor tiles = gather_flat(reduced, detail::tile_index_map(cfg),
                             {cfg.tokens(), cfg.bottleneck_rank * cfg.stride * cfg.stride});
  Tensor tokens = add_rowvec(matmul(tiles, params.tok_w), params.tok_b);
  return add(tokens, params.pos);
}

/// Multi-head self-attention over already-normalized tokens.
inline Tensor attention_forward(const Tensor& h, const EmbedParams::Block& block,
                                const EmbedConfig& cfg) {
  using namespace numkit;
  Tensor q = add_rowvec(matmul(h, block.wq), block.bq);
  Tensor k = add_rowvec(matmul(h, block.wk), block.bk);
  Tensor v = add_rowvec(matmul(h, block.wv), block.bv);
  const auto dh = cfg.head_dim();
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor ctx;
  for (std::int64_t head = 0; head < cfg.heads; ++head) {
    Tensor qh = slice_cols(q, head * dh, dh);
    Tensor kh = slice_cols(k, head * dh, dh);
    Tensor vh = slice_cols(v, head * dh, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), att_scale);
    Tensor attn = softmax_rows(scores);
    Tensor ctx_h = matmul(attn, vh);
    ctx = head == 0 ? ctx_h : concat_cols(ctx, ctx_h);
  }
  return add_rowvec(matmul(ctx, block.wo), block.bo);
}

/// Stack of pre-norm blocks: z += MHSA(rms(z)); z += FFN(rms(z)).
inline Tensor transformer_forward(const Tensor& z0, const EmbedParams& params) {
  using namespace numkit;
  Tensor z = z0;
  for (const auto& block : params.blocks) {
    z = add(z, attention_forward(rms_norm(z, block.gain1), block, params.cfg));
    Tensor f = add_rowvec(matmul(rms_norm(z, block.gain2), block.w1), block.b1);
    f = gelu(f);
    f = add_rowvec(matmul(f, block.w2), block.b2);
    z = add(z, f);
  }
  return z;
}

/// Token aggregation: mean over RMS-normalized tokens, 1 x D.
inline Tensor pool_manifold(const Tensor& z_l, const EmbedParams& params) {
  return numkit::mean_rows(numkit::rms_norm(z_l, params.final_gain));
}

/// Single affine reconstruction head, 1 x (P*P*C).
inline Tensor reconstruct(const Tensor& u, const EmbedParams& params) {
  return numkit::add_rowvec(numkit::matmul(u, params.recon_w), params.recon_b);
}

inline Tensor class_logits(const Tensor& u, const EmbedParams& params) {
  return numkit::add_rowvec(numkit::matmul(u, params.cls_w), params.cls_b);
}

inline Tensor manifold_from_patch(const Tensor& patch, const EmbedParams& params) {
  return pool_manifold(transformer_forward(patch_embed(patch, params), params), params);
}

/// The manifold coordinate of one patch, inference path (no tape).
struct ManifoldCoordinate {
  std::vector<double> u;
};

inline ManifoldCoordinate embed_coordinate(const hsi::Patch& patch,
                                           const EmbedParams& params) {
  Tensor u = manifold_from_patch(patch_to_tensor(patch), params);
  return ManifoldCoordinate{*u.data};
}

struct EmbedLossParts {
  double total = 0.0;
  double reconstruction = 0.0;
  double classification = 0.0;
};

/// L_embed = L_rec + lambda_cls * L_cls: squared reconstruction error of the
/// degraded patch against its clean reference plus cross-entropy of the
/// class head on the manifold coordinate.
inline std::pair<Tensor, EmbedLossParts> embed_loss(const Tensor& degraded,
                                                    const Tensor& clean_flat,
                                                    std::int64_t label_index,
                                                    const EmbedParams& params) {
  using namespace numkit;
  const auto& cfg = params.cfg;
  if (label_index < 0 || label_index >= cfg.n_classes) {
    throw ValidationError("embed_loss: label index " + std::to_string(label_index) +
                          " outside [0, " + std::to_string(cfg.n_classes) + ")");
  }
  if (clean_flat.rank() != 2 || clean_flat.shape[1] != cfg.patch_elems()) {
    throw ShapeError("embed_loss: clean reference has shape " +
                     shape_str(clean_flat.shape));
  }
  Tensor u = manifold_from_patch(degraded, params);
  Tensor l_rec = mse(reconstruct(u, params), clean_flat);
  Tensor l_cls = softmax_cross_entropy(class_logits(u, params), {label_index});
  Tensor total = add(l_rec, scale(l_cls, cfg.lambda_cls));
  EmbedLossParts parts{total.at(0), l_rec.at(0), l_cls.at(0)};
  return {total, parts};
}

// --------------------------------------------------------------------------
// Stage-1 training
// --------------------------------------------------------------------------

struct TrainOptions {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  std::int64_t epochs = 20;
  std::uint64_t seed = 1;
};

struct EpochStats {
  double total = 0.0;
  double reconstruction = 0.0;
  double classification = 0.0;
};

struct EmbedTrainResult {
  EmbedParams params;
  std::vector<EpochStats> history;
};

/// Initialization used by train_embed for a given run seed.
inline EmbedParams initial_training_params(const EmbedConfig& cfg, std::uint64_t seed) {
  return EmbedParams::init(cfg, mix_seed(seed, 0xE3BEDull));
}

/// Fresh composite degradation for one training step.
inline degrade::DegradationSpec sample_training_degradation(std::uint64_t step_seed) {
  degrade::DegradationSpec spec;
  auto w = degrade::sample_dirichlet(degrade::kKindCount, 1.0, mix_seed(step_seed, 1));
  std::copy(w.begin(), w.end(), spec.weights.begin());
  spec.rho = Rng(mix_seed(step_seed, 2)).uniform();
  spec.seed = mix_seed(step_seed, 3);
  return spec;
}

/// Degrades a patch by treating it as a P x P x C mini cube.
inline hsi::Patch degrade_patch(const hsi::Patch& patch,
                                const degrade::DegradationSpec& spec) {
  hsi::HsiCube mini = hsi::HsiCube::sized(patch.size, patch.size, patch.bands);
  for (std::size_t i = 0; i < patch.values.size(); ++i) {
    mini.values[i] = static_cast<float>(patch.values[i]);
  }
  hsi::HsiCube out = degrade::apply_composite(mini, spec);
  hsi::Patch result = patch;
  for (std::size_t i = 0; i < result.values.size(); ++i) {
    result.values[i] = static_cast<double>(out.values[i]);
  }
  return result;
}

/// Joint reconstruction/classification training under freshly sampled
/// composite degradations; one patch per optimizer step.
inline EmbedTrainResult train_embed(const hsi::HsiCube& cube, const hsi::LabelMap& labels,
                                    const std::vector<hsi::PixelCoord>& train_coords,
                                    const EmbedConfig& cfg, const TrainOptions& opt) {
  cfg.validate();
  if (train_coords.empty()) throw ValidationError("train_embed: empty training set");
  EmbedParams params = initial_training_params(cfg, opt.seed);
  numkit::AdamWConfig ocfg;
  ocfg.learning_rate = opt.learning_rate;
  ocfg.weight_decay = opt.weight_decay;
  numkit::AdamW optimizer(params.trainable(), ocfg);

  std::vector<EpochStats> history;
  std::int64_t step = 0;
  for (std::int64_t epoch = 0; epoch < opt.epochs; ++epoch) {
    auto order = train_coords;
    Rng shuffle_rng(mix_seed(opt.seed, 0x5A00ull + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    EpochStats stats;
    for (const auto& coord : order) {
      hsi::Patch clean = hsi::extract_patch(cube, labels, coord.row, coord.col,
                                            cfg.patch_size);
      if (clean.label == 0) throw ValidationError("train_embed: unlabeled coordinate");
      const auto spec =
          sample_training_degradation(mix_seed(opt.seed, 0x100000ull + static_cast<std::uint64_t>(step)));
      hsi::Patch degraded = degrade_patch(clean, spec);

      optimizer.zero_grad();
      EmbedLossParts parts;
      {
        numkit::Tape tape;
        auto [loss, p] = embed_loss(patch_to_tensor(degraded), patch_to_flat(clean),
                                    clean.label - 1, params);
        parts = p;
        if (!std::isfinite(parts.total)) {
          throw ValidationError("train_embed: non-finite loss at step " +
                                std::to_string(step));
        }
        tape.backward(loss);
      }
      optimizer.step();
      stats.total += parts.total;
      stats.reconstruction += parts.reconstruction;
      stats.classification += parts.classification;
      ++step;
    }
    const auto n = static_cast<double>(order.size());
    stats.total /= n;
    stats.reconstruction /= n;
    stats.classification /= n;
    history.push_back(stats);
  }
  return {std::move(params), std::move(history)};
}

}  // namespace msdiff::embed

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
#include "msdiff/optim.hpp"
#include "msdiff/tensor.hpp"

// Manifold-space diffusion: continuous cosine schedule on t in [0,1], a
// time-conditioned MLP head predicting both the injected noise and the clean
// coordinate, the composite noise/clean training objective, and the
// deterministic single-step refinement used at inference.
namespace msdiff::diffuse {

using numkit::Tensor;

/// alpha(t) = cos(pi t / 2), sigma(t) = sin(pi t / 2); alpha^2 + sigma^2 = 1.
inline std::pair<double, double> schedule(double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw ValidationError("schedule: t must lie in [0,1], got " + std::to_string(t));
  }
  const double half_pi = 1.57079632679489661923;
  return {std::cos(half_pi * t), std::sin(half_pi * t)};
}

struct TimeEmbedding {
  std::int64_t n_freqs = 16;
  double omega_min = 1.0;
  double omega_max = 1000.0;

  std::vector<double> omegas() const {
    if (n_freqs < 1) throw ValidationError("time embedding needs at least one frequency");
    std::vector<double> w(static_cast<std::size_t>(n_freqs));
    if (n_freqs == 1) {
      w[0] = omega_min;
      return w;
    }
    const double log_lo = std::log(omega_min);
    const double log_hi = std::log(omega_max);
    for (std::int64_t k = 0; k < n_freqs; ++k) {
      const double f = static_cast<double>(k) / static_cast<double>(n_freqs - 1);
      w[static_cast<std::size_t>(k)] = std::exp(log_lo + f * (log_hi - log_lo));
    }
    return w;
  }

  std::int64_t dim() const { return 2 * n_freqs; }

  /// Interleaved [sin(w1 t), cos(w1 t), ...].
  std::vector<double> embed(double t) const {
    if (!(t >= 0.0 && t <= 1.0)) {
      throw ValidationError("time_embed: t must lie in [0,1]");
    }
    auto w = omegas();
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(dim()));
    for (double omega : w) {
      out.push_back(std::sin(omega * t));
      out.push_back(std::cos(omega * t));
    }
    return out;
  }
};

inline std::vector<double> time_embed(double t, const TimeEmbedding& spec) {
  return spec.embed(t);
}

struct DiffusionConfig {
  std::int64_t latent_dim = 64;
  std::int64_t n_freqs = 16;
  std::int64_t hidden_mult = 4;
  double lambda_x = 1.0;

  std::int64_t hidden_dim() const { return hidden_mult * latent_dim; }
  std::int64_t input_dim() const { return latent_dim + 2 * n_freqs; }

  void validate() const {
    if (latent_dim < 1) throw ValidationError("diffusion: latent_dim must be positive");
    if (n_freqs < 1) throw ValidationError("diffusion: n_freqs must be positive");
    if (hidden_mult < 1) throw ValidationError("diffusion: hidden_mult must be positive");
    if (lambda_x < 0.0) throw ValidationError("diffusion: lambda_x must be >= 0");
  }
};

/// MLP: (D + 2 K_f) -> 4D -> 4D -> 2D, GELU activations; the output splits
/// into the noise estimate (first D) and the clean estimate (last D).
struct DiffusionHeadParams {
  DiffusionConfig cfg;
  Tensor w1, b1, w2, b2, w3, b3;

  static DiffusionHeadParams init(const DiffusionConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    DiffusionHeadParams p;
    p.cfg = cfg;
    const auto in = cfg.input_dim(), hid = cfg.hidden_dim(), out = 2 * cfg.latent_dim;
    p.w1 = Tensor::randn_param({in, hid}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    p.b1 = Tensor::zeros_param({hid});
    p.w2 = Tensor::randn_param({hid, hid}, rng, 1.0 / std::sqrt(static_cast<double>(hid)));
    p.b2 = Tensor::zeros_param({hid});
    p.w3 = Tensor::randn_param({hid, out}, rng, 1.0 / std::sqrt(static_cast<double>(hid)));
    p.b3 = Tensor::zeros_param({out});
    return p;
  }

  std::vector<Tensor> trainable() const { return {w1, b1, w2, b2, w3, b3}; }

  numkit::NamedTensors named() const {
    numkit::NamedTensors out;
    Tensor meta = Tensor::of({4}, {static_cast<double>(cfg.latent_dim),
                                   static_cast<double>(cfg.n_freqs),
                                   static_cast<double>(cfg.hidden_mult), cfg.lambda_x});
    out.emplace_back("diffusion.meta", meta);
    out.emplace_back("diffusion.w1", w1);
    out.emplace_back("diffusion.b1", b1);
    out.emplace_back("diffusion.w2", w2);
    out.emplace_back("diffusion.b2", b2);
    out.emplace_back("diffusion.w3", w3);
    out.emplace_back("diffusion.b3", b3);
    return out;
  }

  void save(const std::string& path) const { numkit::save_checkpoint(named(), path); }

  static DiffusionHeadParams load(const std::string& path) {
    auto ts = numkit::load_checkpoint(path);
    numkit::ensure_finite(ts, path);
    const Tensor& meta = numkit::find_tensor(ts, "diffusion.meta");
    if (meta.size() != 4) throw FormatError(path + ": diffusion.meta has wrong size");
    DiffusionConfig cfg;
    cfg.latent_dim = static_cast<std::int64_t>(meta.at(0));
    cfg.n_freqs = static_cast<std::int64_t>(meta.at(1));
    cfg.hidden_mult = static_cast<std::int64_t>(meta.at(2));
    cfg.lambda_x = meta.at(3);
    DiffusionHeadParams p = init(cfg, 0);
    auto grab = [&](const std::string& name, Tensor& dst) {
      const Tensor& src = numkit::find_tensor(ts, name);
      if (src.shape != dst.shape) {
        throw FormatError(path + ": tensor '" + name + "' has unexpected shape");
      }
      *dst.data = *src.data;
    };
    grab("diffusion.w1", p.w1);
    grab("diffusion.b1", p.b1);
    grab("diffusion.w2", p.w2);
    grab("diffusion.b2", p.b2);
    grab("diffusion.w3", p.w3);
    grab("diffusion.b3", p.b3);
    return p;
  }
};

struct DiffusionDraw {
  std::vector<double> u_t;
  std::vector<double> noise;
};

/// u_t = alpha(t) u_0 + sigma(t) eps, eps ~ N(0, I); returns both the noised
/// coordinate and the drawn noise (the training target).
inline DiffusionDraw forward_diffuse(const std::vector<double>& u0, double t,
                                     std::uint64_t seed) {
  const auto [alpha, sigma] = schedule(t);
  Rng rng(seed);
  DiffusionDraw draw;
  draw.u_t.resize(u0.size());
  draw.noise.resize(u0.size());
  for (std::size_t i = 0; i < u0.size(); ++i) {
    draw.noise[i] = rng.normal();
    draw.u_t[i] = alpha * u0[i] + sigma * draw.noise[i];
  }
  return draw;
}

/// (v_pred, u_pred) halves of the head MLP on concat(u_t, gamma(t)).
inline std::pair<Tensor, Tensor> head_forward(const Tensor& u_t, double t,
                                              const DiffusionHeadParams& params) {
  using namespace numkit;
  const auto& cfg = params.cfg;
  if (u_t.rank() != 2 || u_t.shape[0] != 1 || u_t.shape[1] != cfg.latent_dim) {
    throw ShapeError("head_forward: expected 1x" + std::to_string(cfg.latent_dim) +
                     " coordinate, got " + shape_str(u_t.shape));
  }
  TimeEmbedding te{cfg.n_freqs};
  Tensor gamma = Tensor::of({1, te.dim()}, te.embed(t));
  Tensor h = concat_cols(u_t, gamma);
  h = gelu(add_rowvec(matmul(h, params.w1), params.b1));
  h = gelu(add_rowvec(matmul(h, params.w2), params.b2));
  Tensor out = add_rowvec(matmul(h, params.w3), params.b3);
  Tensor v_pred = slice_cols(out, 0, cfg.latent_dim);
  Tensor u_pred = slice_cols(out, cfg.latent_dim, cfg.latent_dim);
  return {v_pred, u_pred};
}

struct DiffusionLossParts {
  double total = 0.0;
  double noise = 0.0;  // L_v
  double clean = 0.0;  // L_x
};

/// L_diff = L_v + lambda_x L_x with L_v = mse(v_pred, eps) and
/// L_x = mse(u_pred, u_0).
inline std::pair<Tensor, DiffusionLossParts> diffusion_loss(const std::vector<double>& u0,
                                                            double t, std::uint64_t seed,
                                                            const DiffusionHeadParams& params) {
  using namespace numkit;
  const auto d = static_cast<std::int64_t>(u0.size());
  if (d != params.cfg.latent_dim) {
    throw ShapeError("diffusion_loss: latent width " + std::to_string(d) +
                     " does not match head config");
  }
  DiffusionDraw draw = forward_diffuse(u0, t, seed);
  Tensor u_t = Tensor::of({1, d}, draw.u_t);
  auto [v_pred, u_pred] = head_forward(u_t, t, params);
  Tensor eps = Tensor::of({1, d}, draw.noise);
  Tensor u0_t = Tensor::of({1, d}, u0);
  Tensor l_v = mse(v_pred, eps);
  Tensor l_x = mse(u_pred, u0_t);
  Tensor total = add(l_v, scale(l_x, params.cfg.lambda_x));
  DiffusionLossParts parts{total.at(0), l_v.at(0), l_x.at(0)};
  return {total, parts};
}

/// Single-step refinement at fixed t*: scales the raw coordinate by
/// alpha(t*), adds no noise, and returns the head's clean estimate.
inline std::vector<double> refine(const std::vector<double>& u_raw, double t_star,
                                  const DiffusionHeadParams& params) {
  if (!(t_star > 0.0 && t_star < 1.0)) {
    throw ValidationError("refine: t* must lie in (0,1)");
  }
  const auto [alpha, sigma] = schedule(t_star);
  (void)sigma;
  const auto d = static_cast<std::int64_t>(u_raw.size());
  std::vector<double> scaled(u_raw.size());
  for (std::size_t i = 0; i < u_raw.size(); ++i) scaled[i] = alpha * u_raw[i];
  Tensor u_t = Tensor::of({1, d}, scaled);
  auto [v_pred, u_pred] = head_forward(u_t, t_star, params);
  (void)v_pred;
  return *u_pred.data;
}

// --------------------------------------------------------------------------
// Latents file (MSLT): u32 count, u32 D, count x D f64, count u16 labels.
// --------------------------------------------------------------------------

struct LatentSet {
  std::int64_t dim = 0;
  std::vector<std::vector<double>> latents;
  std::vector<std::uint16_t> labels;

  void validate() const {
    if (latents.size() != labels.size()) {
      throw ShapeError("latent set: count mismatch between latents and labels");
    }
    for (const auto& u : latents) {
      if (static_cast<std::int64_t>(u.size()) != dim) {
        throw ShapeError("latent set: inconsistent latent width");
      }
    }
  }
};

inline void save_latents(const LatentSet& set, const std::string& path) {
  set.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path);
  out.write("MSLT", 4);
  numkit::io::put_u32(out, static_cast<std::uint32_t>(set.latents.size()));
  numkit::io::put_u32(out, static_cast<std::uint32_t>(set.dim));
  for (const auto& u : set.latents) {
    for (double v : u) numkit::io::put_f64(out, v);
  }
  for (std::uint16_t l : set.labels) {
    unsigned char b[2] = {static_cast<unsigned char>(l & 0xff),
                          static_cast<unsigned char>(l >> 8)};
    out.write(reinterpret_cast<const char*>(b), 2);
  }
  if (!out) throw FormatError("write failure on " + path);
}

inline LatentSet load_latents(const std::string& path) {
  numkit::io::Reader r(path);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, "MSLT", 4) != 0) {
    throw FormatError(path + ": bad magic at byte offset 0 (expected MSLT)");
  }
  const std::uint32_t count = r.get_u32();
  const std::uint32_t dim = r.get_u32();
  LatentSet set;
  set.dim = dim;
  set.latents.assign(count, std::vector<double>(dim));
  set.labels.assign(count, 0);
  for (auto& u : set.latents) {
    for (auto& v : u) v = r.get_f64();
  }
  for (auto& l : set.labels) {
    unsigned char b[2];
    r.get_bytes(b, 2);
    l = static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  return set;
}

// --------------------------------------------------------------------------
// Stage-2 training (embed network frozen; only the head learns)
// --------------------------------------------------------------------------

struct DiffusionTrainOptions {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  std::int64_t epochs = 20;
  std::uint64_t seed = 1;
};

struct DiffusionEpochStats {
  double total = 0.0;
  double noise = 0.0;
  double clean = 0.0;
};

struct DiffusionTrainResult {
  DiffusionHeadParams params;
  std::vector<DiffusionEpochStats> history;
};

inline DiffusionHeadParams initial_training_params(const DiffusionConfig& cfg,
                                                   std::uint64_t seed) {
  return DiffusionHeadParams::init(cfg, mix_seed(seed, 0xD1FFull));
}

/// Per step: sample a latent, t ~ U(0,1), fresh noise seed; minimize L_diff.
inline DiffusionTrainResult train_diffusion(const LatentSet& latents,
                                            const DiffusionConfig& cfg,
                                            const DiffusionTrainOptions& opt) {
  cfg.validate();
  latents.validate();
  if (latents.latents.empty()) throw ValidationError("train_diffusion: empty latent set");
  if (latents.dim != cfg.latent_dim) {
    throw ShapeError("train_diffusion: latent width " + std::to_string(latents.dim) +
                     " does not match config " + std::to_string(cfg.latent_dim));
  }
  DiffusionHeadParams params = initial_training_params(cfg, opt.seed);
  numkit::AdamWConfig ocfg;
  ocfg.learning_rate = opt.learning_rate;
  ocfg.weight_decay = opt.weight_decay;
  numkit::AdamW optimizer(params.trainable(), ocfg);

  std::vector<DiffusionEpochStats> history;
  std::int64_t step = 0;
  std::vector<std::size_t> order(latents.latents.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::int64_t epoch = 0; epoch < opt.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(opt.seed, 0xD500ull + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    DiffusionEpochStats stats;
    for (std::size_t idx : order) {
      const std::uint64_t step_seed =
          mix_seed(opt.seed, 0x200000ull + static_cast<std::uint64_t>(step));
      const double t = Rng(mix_seed(step_seed, 1)).uniform();
      optimizer.zero_grad();
      DiffusionLossParts parts;
      {
        numkit::Tape tape;
        auto [loss, p] =
            diffusion_loss(latents.latents[idx], t, mix_seed(step_seed, 2), params);
        parts = p;
        if (!std::isfinite(parts.total)) {
          throw ValidationError("train_diffusion: non-finite loss at step " +
                                std::to_string(step));
        }
        tape.backward(loss);
      }
      optimizer.step();
      stats.total += parts.total;
      stats.noise += parts.noise;
      stats.clean += parts.clean;
      ++step;
    }
    const auto n = static_cast<double>(order.size());
    stats.total /= n;
    stats.noise /= n;
    stats.clean /= n;
    history.push_back(stats);
  }
  return {std::move(params), std::move(history)};
}

}  // namespace msdiff::diffuse

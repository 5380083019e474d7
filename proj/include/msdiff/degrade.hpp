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

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "msdiff/common.hpp"
#include "msdiff/hsi.hpp"
#include "msdiff/rng.hpp"

// Composite degradation simulation. Every operator maps a cube in [0,1] plus
// (intensity s in [0,1], seed) to a clamped cube; s=0 is the bitwise
// identity. The composite sampler mixes the nine kinds with Dirichlet
// weights and a global intensity.
namespace msdiff::degrade {

enum class Kind : int {
  Jpeg = 0,
  ZeroMeanGaussian = 1,
  AdditiveGaussian = 2,
  Poisson = 3,
  SaltPepper = 4,
  Stripes = 5,
  Deadline = 6,
  Blur = 7,
  Fog = 8,
};

constexpr int kKindCount = 9;

inline const char* kind_name(Kind k) {
  switch (k) {
    case Kind::Jpeg: return "jpeg";
    case Kind::ZeroMeanGaussian: return "zero-mean-gaussian";
    case Kind::AdditiveGaussian: return "additive-gaussian";
    case Kind::Poisson: return "poisson";
    case Kind::SaltPepper: return "salt-pepper";
    case Kind::Stripes: return "stripes";
    case Kind::Deadline: return "deadline";
    case Kind::Blur: return "blur";
    case Kind::Fog: return "fog";
  }
  return "?";
}

struct DegradationSpec {
  std::array<double, kKindCount> weights{};
  double rho = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    double sum = 0.0;
    for (double w : weights) {
      if (w < 0.0) throw ValidationError("degradation weights must be nonnegative");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw ValidationError("degradation weights must sum to 1, got " + std::to_string(sum));
    }
    if (rho < 0.0 || rho > 1.0) throw ValidationError("rho must lie in [0,1]");
  }
};

inline std::uint64_t kind_seed(std::uint64_t seed, int kind_index) {
  return seed ^ splitmix64(static_cast<std::uint64_t>(kind_index));
}

namespace detail {

inline float clamp01(double v) {
  return static_cast<float>(std::clamp(v, 0.0, 1.0));
}

inline void check_intensity(double s) {
  if (s < 0.0 || s > 1.0) {
    throw ValidationError("intensity must lie in [0,1], got " + std::to_string(s));
  }
}

/// Distinct index subset: seeded shuffle of [0, n), first k taken.
inline std::vector<std::int64_t> pick_subset(std::int64_t n, std::int64_t k, Rng& rng) {
  std::vector<std::int64_t> all(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
  rng.shuffle(all);
  all.resize(static_cast<std::size_t>(std::min(k, n)));
  return all;
}

}  // namespace detail

// --------------------------------------------------------------------------
// Noise operators
// --------------------------------------------------------------------------

/// Global-sigma Gaussian noise, sigma = 0.2 s, i.i.d. over all elements.
inline hsi::HsiCube apply_zero_mean_gaussian(const hsi::HsiCube& cube, double s,
                                             std::uint64_t seed) {
  detail::check_intensity(s);
  if (s == 0.0) return cube;
  hsi::HsiCube out = cube;
  Rng rng(seed);
  const double sigma = 0.2 * s;
  for (auto& v : out.values) {
    v = detail::clamp01(static_cast<double>(v) + sigma * rng.normal());
  }
  return out;
}

/// Band-heterogeneous Gaussian noise: sigma_c ~ U(0, 0.2 s) per band.
inline hsi::HsiCube apply_additive_gaussian(const hsi::HsiCube& cube, double s,
                                            std::uint64_t seed) {
  detail::check_intensity(s);
  if (s == 0.0) return cube;
  hsi::HsiCube out = cube;
  Rng rng(seed);
  std::vector<double> sigma(static_cast<std::size_t>(cube.bands));
  for (auto& sg : sigma) sg = rng.uniform(0.0, 0.2 * s);
  for (std::int64_t b = 0; b < cube.bands; ++b) {
    for (std::int64_t p = 0; p < cube.pixel_count(); ++p) {
      const std::size_t i = static_cast<std::size_t>(p * cube.bands + b);
      out.values[i] = detail::clamp01(
          static_cast<double>(out.values[i]) +
          sigma[static_cast<std::size_t>(b)] * rng.normal());
    }
  }
  return out;
}

/// Photon-count noise: Q interpolates 1000 (s->0) down to 10 (s=1); the value
/// is replaced by PoissonSample(v*Q)/Q.
inline hsi::HsiCube apply_poisson(const hsi::HsiCube& cube, double s, std::uint64_t seed) {
  detail::check_intensity(s);
  if (s == 0.0) return cube;
  hsi::HsiCube out = cube;
  Rng rng(seed);
  const double q = 1000.0 * (1.0 - s) + 10.0 * s;
  for (auto& v : out.values) {
    const double mean = static_cast<double>(v) * q;
    v = detail::clamp01(static_cast<double>(rng.poisson(mean)) / q);
  }
  return out;
}

/// Impulse corruption with explicit element probability p.
inline hsi::HsiCube apply_salt_pepper_prob(const hsi::HsiCube& cube, double p,
                                           std::uint64_t seed) {
  if (p < 0.0 || p > 1.0) throw ValidationError("salt-pepper probability outside [0,1]");
  if (p == 0.0) return cube;
  hsi::HsiCube out = cube;
  Rng rng(seed);
  for (auto& v : out.values) {
    if (rng.uniform() < p) {
      v = rng.uniform() < 0.5 ? 1.0f : 0.0f;
    }
  }
  return out;
}

inline hsi::HsiCube apply_salt_pepper(const hsi::HsiCube& cube, double s, std::uint64_t seed) {
  detail::check_intensity(s);
  if (s == 0.0) return cube;
  return apply_salt_pepper_prob(cube, 0.2 * s, seed);
}

// --------------------------------------------------------------------------
// Structured sensor artifacts
// --------------------------------------------------------------------------

constexpr std::int64_t kStripePeriod = 8;

/// Periodic vertical stripes: ceil(s C/2) bands receive an additive offset
/// on columns congruent to a seeded phase mod 8.
inline hsi::HsiCube apply_stripes(const hsi::HsiCube& cube, double s, std::uint64_t seed) {
  detail::check_intensity(s);
  if (s == 0.0) return cube;
  hsi::HsiCube out = cube;
  Rng rng(seed);
  const auto n_bands = static_cast<std::int64_t>(
      std::ceil(s * static_cast<double>(cube.bands) / 2.0));
  const auto bands = detail::pick_subset(cube.bands, n_bands, rng);
  for (std::int64_t b : bands) {
    const std::int64_t phase = static_cast<std::int64_t>(rng.below(kStripePeriod));
    const double delta = rng.uniform(-0.3 * s, 0.3 * s);
    for (std::int64_t r = 0; r < cube.height; ++r) {
      for (std::int64_t c = phase; c < cube.width; c += kStripePeriod) {
        out.at(r, c, b) = detail::clamp01(static_cast<double>(out.at(r, c, b)) + delta);
      }
    }
  }
  return out;
}

/// Dead sensor columns: ceil(s C/2) bands lose ceil(0.1 s W) whole columns.
inline hsi::HsiCube apply_deadline(const hsi::HsiCube& cube, double s, std::uint64_t seed) {
  detail::check_intensity(s);
  if (s == 0.0) return cube;
  hsi::HsiCube out = cube;
  Rng rng(seed);
  const auto n_bands = static_cast<std::int64_t>(
      std::ceil(s * static_cast<double>(cube.bands) / 2.0));
  const auto bands = detail::pick_subset(cube.bands, n_bands, rng);
  const auto n_cols = static_cast<std::int64_t>(
      std::ceil(0.1 * s * static_cast<double>(cube.width)));
  for (std::int64_t b : bands) {
    const auto cols = detail::pick_subset(cube.width, n_cols, rng);
    for (std::int64_t c : cols) {
      for (std::int64_t r = 0; r < cube.height; ++r) out.at(r, c, b) = 0.0f;
    }
  }
  return out;
}

// --------------------------------------------------------------------------
// Blur / atmosphere / compression
// --------------------------------------------------------------------------

/// Per-band Gaussian blur, sigma_k = 2 s, radius ceil(3 sigma_k), mirrored
/// borders. Separable passes; the kernel sums to 1.
inline hsi::HsiCube apply_blur(const hsi::HsiCube& cube, double s, std::uint64_t seed) {
  (void)seed;  // deterministic operator
  detail::check_intensity(s);
  if (s == 0.0) return cube;
  const double sigma = 2.0 * s;
  const auto radius = static_cast<std::int64_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double ksum = 0.0;
  for (std::int64_t i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = w;
    ksum += w;
  }
  for (auto& w : kernel) w /= ksum;

  hsi::HsiCube out = cube;
  std::vector<double> plane(static_cast<std::size_t>(cube.height * cube.width));
  std::vector<double> tmp(plane.size());
  for (std::int64_t b = 0; b < cube.bands; ++b) {
    for (std::int64_t r = 0; r < cube.height; ++r) {
      for (std::int64_t c = 0; c < cube.width; ++c) {
        plane[static_cast<std::size_t>(r * cube.width + c)] = cube.at(r, c, b);
      }
    }
    for (std::int64_t r = 0; r < cube.height; ++r) {
      for (std::int64_t c = 0; c < cube.width; ++c) {
        double acc = 0.0;
        for (std::int64_t i = -radius; i <= radius; ++i) {
          const std::int64_t cc = hsi::mirror_index(c + i, cube.width);
          acc += kernel[static_cast<std::size_t>(i + radius)] *
                 plane[static_cast<std::size_t>(r * cube.width + cc)];
        }
        tmp[static_cast<std::size_t>(r * cube.width + c)] = acc;
      }
    }
    for (std::int64_t r = 0; r < cube.height; ++r) {
      for (std::int64_t c = 0; c < cube.width; ++c) {
        double acc = 0.0;
        for (std::int64_t i = -radius; i <= radius; ++i) {
          const std::int64_t rr = hsi::mirror_index(r + i, cube.height);
          acc += kernel[static_cast<std::size_t>(i + radius)] *
                 tmp[static_cast<std::size_t>(rr * cube.width + c)];
        }
        out.at(r, c, b) = detail::clamp01(acc);
      }
    }
  }
  return out;
}

constexpr double kFogAtmosphere = 0.9;

/// Uniform haze with explicit transmission t_r: x' = t_r x + (1 - t_r) A.
inline hsi::HsiCube apply_fog_transmission(const hsi::HsiCube& cube, double t_r) {
  if (t_r < 0.0 || t_r > 1.0) throw ValidationError("transmission outside [0,1]");
  hsi::HsiCube out = cube;
  for (auto& v : out.values) {
    v = detail::clamp01(t_r * static_cast<double>(v) + (1.0 - t_r) * kFogAtmosphere);
  }
  return out;
}

inline hsi::HsiCube apply_fog(const hsi::HsiCube& cube, double s, std::uint64_t seed) {
  (void)seed;  // deterministic operator
  detail::check_intensity(s);
  if (s == 0.0) return cube;
  return apply_fog_transmission(cube, 1.0 - 0.8 * s);
}

// --------------------------------------------------------------------------
// Blockwise DCT compression
// --------------------------------------------------------------------------

namespace dct {

/// Orthonormal DCT-II basis, M[k][n] = a_k cos(pi (2n+1) k / 16).
inline const std::array<std::array<double, 8>, 8>& basis() {
  static const auto m = [] {
    std::array<std::array<double, 8>, 8> b{};
    const double pi = 3.14159265358979323846;
    for (int k = 0; k < 8; ++k) {
      const double a = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int n = 0; n < 8; ++n) {
        b[static_cast<std::size_t>(k)][static_cast<std::size_t>(n)] =
            a * std::cos(pi * (2.0 * n + 1.0) * k / 16.0);
      }
    }
    return b;
  }();
  return m;
}

/// Forward 2-D DCT of an 8x8 block: Y = M X M^T.
inline void forward8x8(const double in[8][8], double out[8][8]) {
  const auto& m = basis();
  double tmp[8][8];
  for (int k = 0; k < 8; ++k) {
    for (int j = 0; j < 8; ++j) {
      double s = 0.0;
      for (int n = 0; n < 8; ++n) s += m[k][n] * in[n][j];
      tmp[k][j] = s;
    }
  }
  for (int k = 0; k < 8; ++k) {
    for (int l = 0; l < 8; ++l) {
      double s = 0.0;
      for (int j = 0; j < 8; ++j) s += tmp[k][j] * m[l][j];
      out[k][l] = s;
    }
  }
}

/// Inverse 2-D DCT: X = M^T Y M.
inline void inverse8x8(const double in[8][8], double out[8][8]) {
  const auto& m = basis();
  double tmp[8][8];
  for (int n = 0; n < 8; ++n) {
    for (int l = 0; l < 8; ++l) {
      double s = 0.0;
      for (int k = 0; k < 8; ++k) s += m[k][n] * in[k][l];
      tmp[n][l] = s;
    }
  }
  for (int n = 0; n < 8; ++n) {
    for (int j = 0; j < 8; ++j) {
      double s = 0.0;
      for (int l = 0; l < 8; ++l) s += tmp[n][l] * m[l][j];
      out[n][j] = s;
    }
  }
}

/// Standard luminance quantization profile normalized to mean 1.
inline const std::array<std::array<double, 8>, 8>& quant_profile() {
  static const auto q = [] {
    const int lum[8][8] = {
        {16, 11, 10, 16, 24, 40, 51, 61},   {12, 12, 14, 19, 26, 58, 60, 55},
        {14, 13, 16, 24, 40, 57, 69, 56},   {14, 17, 22, 29, 51, 87, 80, 62},
        {18, 22, 37, 56, 68, 109, 103, 77}, {24, 35, 55, 64, 81, 104, 113, 92},
        {49, 64, 78, 87, 103, 121, 120, 101}, {72, 92, 95, 98, 112, 100, 103, 99}};
    double sum = 0.0;
    for (const auto& row : lum) {
      for (int v : row) sum += v;
    }
    std::array<std::array<double, 8>, 8> out{};
    for (int i = 0; i < 8; ++i) {
      for (int j = 0; j < 8; ++j) {
        out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
            lum[i][j] * 64.0 / sum;
      }
    }
    return out;
  }();
  return q;
}

/// DCT-quantize-inverse round trip of one block with base step q.
inline void quantize_block(const double in[8][8], double q_step, double out[8][8]) {
  const auto& profile = quant_profile();
  double coef[8][8];
  forward8x8(in, coef);
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 8; ++j) {
      const double step = q_step * profile[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      coef[i][j] = std::round(coef[i][j] / step) * step;
    }
  }
  inverse8x8(coef, out);
}

}  // namespace dct

/// Blockwise DCT compression of one band plane with base quantization step q.
inline void jpeg_band(std::vector<double>& plane, std::int64_t height, std::int64_t width,
                      double q_step) {
  const std::int64_t bh = (height + 7) / 8;
  const std::int64_t bw = (width + 7) / 8;
  std::vector<double> result(plane.size());
  for (std::int64_t br = 0; br < bh; ++br) {
    for (std::int64_t bc = 0; bc < bw; ++bc) {
      double block[8][8];
      for (int i = 0; i < 8; ++i) {
        const std::int64_t r = hsi::mirror_index(br * 8 + i, height);
        for (int j = 0; j < 8; ++j) {
          const std::int64_t c = hsi::mirror_index(bc * 8 + j, width);
          block[i][j] = plane[static_cast<std::size_t>(r * width + c)];
        }
      }
      double rec[8][8];
      dct::quantize_block(block, q_step, rec);
      for (int i = 0; i < 8; ++i) {
        const std::int64_t r = br * 8 + i;
        if (r >= height) continue;
        for (int j = 0; j < 8; ++j) {
          const std::int64_t c = bc * 8 + j;
          if (c >= width) continue;
          result[static_cast<std::size_t>(r * width + c)] = rec[i][j];
        }
      }
    }
  }
  plane.swap(result);
}

/// Compression artifacts: per band, 8x8 DCT with quantization step
/// q = 0.02 + 0.3 s scaled by the luminance profile.
inline hsi::HsiCube apply_jpeg(const hsi::HsiCube& cube, double s, std::uint64_t seed) {
  (void)seed;  // deterministic operator
  detail::check_intensity(s);
  if (s == 0.0) return cube;
  const double q_step = 0.02 + 0.3 * s;
  hsi::HsiCube out = cube;
  std::vector<double> plane(static_cast<std::size_t>(cube.height * cube.width));
  for (std::int64_t b = 0; b < cube.bands; ++b) {
    for (std::int64_t r = 0; r < cube.height; ++r) {
      for (std::int64_t c = 0; c < cube.width; ++c) {
        plane[static_cast<std::size_t>(r * cube.width + c)] = cube.at(r, c, b);
      }
    }
    jpeg_band(plane, cube.height, cube.width, q_step);
    for (std::int64_t r = 0; r < cube.height; ++r) {
      for (std::int64_t c = 0; c < cube.width; ++c) {
        out.at(r, c, b) =
            detail::clamp01(plane[static_cast<std::size_t>(r * cube.width + c)]);
      }
    }
  }
  return out;
}

// --------------------------------------------------------------------------
// Mixing
// --------------------------------------------------------------------------

/// Dirichlet(concentration * 1_K) via normalized Gamma draws.
inline std::vector<double> sample_dirichlet(int k, double concentration, std::uint64_t seed) {
  if (k < 1) throw ValidationError("dirichlet: K must be >= 1");
  if (concentration <= 0.0) throw ValidationError("dirichlet: concentration must be > 0");
  Rng rng(seed);
  std::vector<double> w(static_cast<std::size_t>(k));
  double sum = 0.0;
  for (auto& v : w) {
    v = rng.gamma(concentration);
    sum += v;
  }
  for (auto& v : w) v /= sum;
  return w;
}

inline hsi::HsiCube apply_kind(const hsi::HsiCube& cube, Kind kind, double s,
                               std::uint64_t seed) {
  switch (kind) {
    case Kind::Jpeg: return apply_jpeg(cube, s, seed);
    case Kind::ZeroMeanGaussian: return apply_zero_mean_gaussian(cube, s, seed);
    case Kind::AdditiveGaussian: return apply_additive_gaussian(cube, s, seed);
    case Kind::Poisson: return apply_poisson(cube, s, seed);
    case Kind::SaltPepper: return apply_salt_pepper(cube, s, seed);
    case Kind::Stripes: return apply_stripes(cube, s, seed);
    case Kind::Deadline: return apply_deadline(cube, s, seed);
    case Kind::Blur: return apply_blur(cube, s, seed);
    case Kind::Fog: return apply_fog(cube, s, seed);
  }
  throw ValidationError("unknown degradation kind");
}

/// Sequential composite in canonical kind order; kind i runs at intensity
/// min(1, K w_i rho), kinds with w_i < 1e-3 are skipped.
inline hsi::HsiCube apply_composite(const hsi::HsiCube& cube, const DegradationSpec& spec) {
  spec.validate();
  if (spec.rho == 0.0) return cube;
  hsi::HsiCube out = cube;
  for (int i = 0; i < kKindCount; ++i) {
    const double w = spec.weights[static_cast<std::size_t>(i)];
    if (w < 1e-3) continue;
    const double s = std::min(1.0, static_cast<double>(kKindCount) * w * spec.rho);
    if (s == 0.0) continue;
    out = apply_kind(out, static_cast<Kind>(i), s, kind_seed(spec.seed, i));
  }
  return out;
}

// --------------------------------------------------------------------------
// Fixed benchmark suite
// --------------------------------------------------------------------------

struct BenchmarkCase {
  std::string label;
  std::vector<Kind> kinds;
  double intensity = 0.5;
};

inline std::vector<BenchmarkCase> benchmark_suite() {
  using K = Kind;
  return {
      {"C-3-1", {K::Deadline, K::Poisson, K::SaltPepper}, 0.5},
      {"C-3-2", {K::Jpeg, K::Blur, K::Fog}, 0.5},
      {"C-3-3", {K::AdditiveGaussian, K::Stripes, K::ZeroMeanGaussian}, 0.5},
      {"C-3-4", {K::Poisson, K::Blur, K::Fog}, 0.5},
      {"C-5-1", {K::Deadline, K::Stripes, K::Blur, K::SaltPepper, K::Fog}, 0.5},
      {"C-5-2",
       {K::Jpeg, K::AdditiveGaussian, K::Poisson, K::ZeroMeanGaussian, K::SaltPepper},
       0.5},
      {"C-7",
       {K::Jpeg, K::ZeroMeanGaussian, K::Poisson, K::SaltPepper, K::Deadline, K::Blur,
        K::Fog},
       0.5},
      {"C-9",
       {K::Jpeg, K::ZeroMeanGaussian, K::AdditiveGaussian, K::Poisson, K::SaltPepper,
        K::Stripes, K::Deadline, K::Blur, K::Fog},
       0.5},
  };
}

inline std::optional<BenchmarkCase> find_benchmark(const std::string& label) {
  for (auto& c : benchmark_suite()) {
    if (c.label == label) return c;
  }
  return std::nullopt;
}

/// Runs the case's kinds sequentially at the fixed per-kind intensity.
inline hsi::HsiCube apply_benchmark(const hsi::HsiCube& cube, const BenchmarkCase& bench,
                                    std::uint64_t seed) {
  hsi::HsiCube out = cube;
  for (Kind k : bench.kinds) {
    out = apply_kind(out, k, bench.intensity, kind_seed(seed, static_cast<int>(k)));
  }
  return out;
}

/// Per-band MSE against a reference plus the changed-element fraction;
/// backs the CLI --stats report.
struct DegradationStats {
  std::vector<double> band_mse;
  double corrupted_fraction = 0.0;
};

inline DegradationStats degradation_stats(const hsi::HsiCube& before,
                                          const hsi::HsiCube& after) {
  if (before.values.size() != after.values.size()) {
    throw ShapeError("degradation_stats: cube sizes differ");
  }
  DegradationStats st;
  st.band_mse.assign(static_cast<std::size_t>(before.bands), 0.0);
  std::int64_t changed = 0;
  for (std::int64_t p = 0; p < before.pixel_count(); ++p) {
    for (std::int64_t b = 0; b < before.bands; ++b) {
      const std::size_t i = static_cast<std::size_t>(p * before.bands + b);
      const double d = static_cast<double>(after.values[i]) - before.values[i];
      st.band_mse[static_cast<std::size_t>(b)] += d * d;
      if (after.values[i] != before.values[i]) ++changed;
    }
  }
  for (auto& m : st.band_mse) m /= static_cast<double>(before.pixel_count());
  st.corrupted_fraction =
      static_cast<double>(changed) / static_cast<double>(before.values.size());
  return st;
}

}  // namespace msdiff::degrade

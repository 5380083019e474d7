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
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "msdiff/checkpoint.hpp"
#include "msdiff/common.hpp"
#include "msdiff/rng.hpp"

// Hyperspectral cube I/O (HSC format), normalization, mirror-padded patch
// extraction, stratified pixel splits, and synthetic cube generation.
namespace msdiff::hsi {

struct HsiCube {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t bands = 0;
  std::vector<float> values;  // row-major (row, col, band)
  std::vector<std::pair<float, float>> band_range;  // populated by normalize()

  std::int64_t index(std::int64_t r, std::int64_t c, std::int64_t b) const {
    return (r * width + c) * bands + b;
  }
  float at(std::int64_t r, std::int64_t c, std::int64_t b) const {
    return values[static_cast<std::size_t>(index(r, c, b))];
  }
  float& at(std::int64_t r, std::int64_t c, std::int64_t b) {
    return values[static_cast<std::size_t>(index(r, c, b))];
  }
  std::int64_t pixel_count() const { return height * width; }

  static HsiCube sized(std::int64_t h, std::int64_t w, std::int64_t c) {
    if (h <= 0 || w <= 0 || c <= 0) throw ValidationError("cube: extents must be positive");
    HsiCube cube;
    cube.height = h;
    cube.width = w;
    cube.bands = c;
    cube.values.assign(static_cast<std::size_t>(h * w * c), 0.0f);
    return cube;
  }
};

struct LabelMap {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint16_t> labels;  // 0 = unlabeled, classes 1..n_classes
  std::uint16_t n_classes = 0;

  std::uint16_t at(std::int64_t r, std::int64_t c) const {
    return labels[static_cast<std::size_t>(r * width + c)];
  }
  std::uint16_t& at(std::int64_t r, std::int64_t c) {
    return labels[static_cast<std::size_t>(r * width + c)];
  }

  /// Dimensions must match the parent cube; every declared class must appear.
  void validate_against(const HsiCube& cube) const {
    if (height != cube.height || width != cube.width) {
      throw ShapeError("label map " + std::to_string(height) + "x" + std::to_string(width) +
                       " does not match cube " + std::to_string(cube.height) + "x" +
                       std::to_string(cube.width));
    }
    std::vector<bool> seen(static_cast<std::size_t>(n_classes) + 1, false);
    for (auto l : labels) {
      if (l > n_classes) {
        throw ValidationError("label " + std::to_string(l) + " exceeds declared class count " +
                              std::to_string(n_classes));
      }
      seen[l] = true;
    }
    for (std::uint16_t c = 1; c <= n_classes; ++c) {
      if (!seen[c]) {
        throw ValidationError("class " + std::to_string(c) + " has no labeled pixels");
      }
    }
  }
};

struct Patch {
  std::int64_t row = 0;
  std::int64_t col = 0;
  std::int64_t size = 0;   // P, odd
  std::int64_t bands = 0;
  std::vector<double> values;  // (row, col, band) row-major
  std::uint16_t label = 0;

  double at(std::int64_t r, std::int64_t c, std::int64_t b) const {
    return values[static_cast<std::size_t>((r * size + c) * bands + b)];
  }
};

struct PixelCoord {
  std::int64_t row = 0;
  std::int64_t col = 0;
  bool operator==(const PixelCoord&) const = default;
};

struct SplitSpec {
  double train_fraction = 0.1;
  double val_fraction = 0.1;
  double test_fraction = 0.8;
  std::uint64_t seed = 0;

  void validate() const {
    for (double f : {train_fraction, val_fraction, test_fraction}) {
      if (!(f > 0.0 && f < 1.0)) {
        throw ValidationError("split fractions must lie in (0,1)");
      }
    }
    if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9) {
      throw ValidationError("split fractions must sum to 1");
    }
  }
};

struct Split {
  std::vector<PixelCoord> train;
  std::vector<PixelCoord> val;
  std::vector<PixelCoord> test;
};

// ---------------------------------------------------------------------------
// HSC format: magic "HSC1", u32 H, W, C, H*W*C little-endian f32 row-major
// (row, col, band), u8 flag, and when flag==1 an H*W little-endian u16 label
// block.
// ---------------------------------------------------------------------------

struct CubeFile {
  HsiCube cube;
  std::optional<LabelMap> labels;
};

inline void write_cube(const HsiCube& cube, const std::optional<LabelMap>& labels,
                       const std::string& path) {
  if (labels) labels->validate_against(cube);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path);
  out.write("HSC1", 4);
  numkit::io::put_u32(out, static_cast<std::uint32_t>(cube.height));
  numkit::io::put_u32(out, static_cast<std::uint32_t>(cube.width));
  numkit::io::put_u32(out, static_cast<std::uint32_t>(cube.bands));
  for (float v : cube.values) numkit::io::put_f32(out, v);
  const unsigned char flag = labels ? 1 : 0;
  out.write(reinterpret_cast<const char*>(&flag), 1);
  if (labels) {
    for (std::uint16_t l : labels->labels) {
      unsigned char b[2] = {static_cast<unsigned char>(l & 0xff),
                            static_cast<unsigned char>(l >> 8)};
      out.write(reinterpret_cast<const char*>(b), 2);
    }
  }
  if (!out) throw FormatError("write failure on " + path);
}

inline CubeFile read_cube(const std::string& path) {
  numkit::io::Reader r(path);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, "HSC1", 4) != 0) {
    throw FormatError(path + ": bad magic at byte offset 0 (expected HSC1)");
  }
  CubeFile out;
  const std::uint32_t h = r.get_u32();
  const std::uint32_t w = r.get_u32();
  const std::uint32_t c = r.get_u32();
  if (h == 0 || w == 0 || c == 0) {
    throw FormatError(path + ": zero extent in header");
  }
  out.cube = HsiCube::sized(h, w, c);
  for (auto& v : out.cube.values) v = r.get_f32();
  unsigned char flag = 0;
  r.get_bytes(&flag, 1);
  if (flag == 1) {
    LabelMap lm;
    lm.height = h;
    lm.width = w;
    lm.labels.resize(static_cast<std::size_t>(h) * w);
    std::uint16_t max_label = 0;
    for (auto& l : lm.labels) {
      unsigned char b[2];
      r.get_bytes(b, 2);
      l = static_cast<std::uint16_t>(b[0] | (b[1] << 8));
      max_label = std::max(max_label, l);
    }
    lm.n_classes = max_label;
    out.labels = std::move(lm);
  } else if (flag != 0) {
    throw FormatError(path + ": bad label flag " + std::to_string(flag) +
                      " at byte offset " + std::to_string(r.offset - 1));
  }
  return out;
}

// ---------------------------------------------------------------------------

/// Per-band min-max scaling to [0,1]; constant bands map to 0. The (min, max)
/// pairs observed are recorded on the result.
inline HsiCube normalize(const HsiCube& cube) {
  HsiCube out = cube;
  out.band_range.assign(static_cast<std::size_t>(cube.bands), {0.0f, 0.0f});
  for (std::int64_t b = 0; b < cube.bands; ++b) {
    float lo = cube.values[static_cast<std::size_t>(b)];
    float hi = lo;
    for (std::int64_t p = 0; p < cube.pixel_count(); ++p) {
      const float v = cube.values[static_cast<std::size_t>(p * cube.bands + b)];
      if (!std::isfinite(v)) {
        throw ValidationError("normalize: non-finite value in band " + std::to_string(b));
      }
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    out.band_range[static_cast<std::size_t>(b)] = {lo, hi};
    const float span = hi - lo;
    for (std::int64_t p = 0; p < cube.pixel_count(); ++p) {
      const std::size_t i = static_cast<std::size_t>(p * cube.bands + b);
      out.values[i] = span > 0.0f ? (cube.values[i] - lo) / span : 0.0f;
    }
  }
  return out;
}

/// Mirror index: reflects about the edge pixel, so -1 -> 1 and n -> n-2.
inline std::int64_t mirror_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

/// P x P x C window centered at (row, col); out-of-bounds entries mirrored.
inline Patch extract_patch(const HsiCube& cube, std::int64_t row, std::int64_t col,
                           std::int64_t patch_size) {
  if (patch_size <= 0 || patch_size % 2 == 0) {
    throw ValidationError("extract_patch: patch size must be odd and positive, got " +
                          std::to_string(patch_size));
  }
  if (row < 0 || row >= cube.height || col < 0 || col >= cube.width) {
    throw ValidationError("extract_patch: center outside the cube");
  }
  Patch p;
  p.row = row;
  p.col = col;
  p.size = patch_size;
  p.bands = cube.bands;
  p.values.resize(static_cast<std::size_t>(patch_size * patch_size * cube.bands));
  const std::int64_t half = patch_size / 2;
  std::size_t k = 0;
  for (std::int64_t dr = -half; dr <= half; ++dr) {
    const std::int64_t r = mirror_index(row + dr, cube.height);
    for (std::int64_t dc = -half; dc <= half; ++dc) {
      const std::int64_t c = mirror_index(col + dc, cube.width);
      for (std::int64_t b = 0; b < cube.bands; ++b) {
        p.values[k++] = static_cast<double>(cube.at(r, c, b));
      }
    }
  }
  return p;
}

inline Patch extract_patch(const HsiCube& cube, const LabelMap& labels, std::int64_t row,
                           std::int64_t col, std::int64_t patch_size) {
  Patch p = extract_patch(cube, row, col, patch_size);
  p.label = labels.at(row, col);
  return p;
}

/// Stratified per-class split of labeled pixels. Train and val counts round
/// down, the remainder goes to test; deterministic in the seed.
inline Split split_pixels(const LabelMap& labels, const SplitSpec& spec) {
  spec.validate();
  std::vector<std::vector<PixelCoord>> per_class(static_cast<std::size_t>(labels.n_classes) + 1);
  for (std::int64_t r = 0; r < labels.height; ++r) {
    for (std::int64_t c = 0; c < labels.width; ++c) {
      const std::uint16_t l = labels.at(r, c);
      if (l > 0) per_class[l].push_back({r, c});
    }
  }
  Split out;
  Rng rng(spec.seed);
  for (std::uint16_t cls = 1; cls <= labels.n_classes; ++cls) {
    auto& coords = per_class[cls];
    if (coords.size() < 3) {
      throw ValidationError("class " + std::to_string(cls) + " has fewer than 3 labeled pixels");
    }
    rng.shuffle(coords);
    const auto n = static_cast<std::int64_t>(coords.size());
    const auto n_train = static_cast<std::int64_t>(
        std::floor(spec.train_fraction * static_cast<double>(n)));
    const auto n_val = static_cast<std::int64_t>(
        std::floor(spec.val_fraction * static_cast<double>(n)));
    for (std::int64_t i = 0; i < n; ++i) {
      if (i < n_train) {
        out.train.push_back(coords[static_cast<std::size_t>(i)]);
      } else if (i < n_train + n_val) {
        out.val.push_back(coords[static_cast<std::size_t>(i)]);
      } else {
        out.test.push_back(coords[static_cast<std::size_t>(i)]);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic cubes: Voronoi regions over seeded sites (one class per region),
// smooth per-class spectral signatures (2-4 Gaussian bumps over the band
// axis), mild per-pixel jitter, min-max normalized output.
// ---------------------------------------------------------------------------

struct SynthResult {
  HsiCube cube;
  LabelMap labels;
};

inline SynthResult synth_cube(std::int64_t height, std::int64_t width, std::int64_t bands,
                              int n_classes, std::uint64_t seed, double jitter = 0.02) {
  if (n_classes < 2) throw ValidationError("synth_cube: need at least 2 classes");
  if (bands < 4) throw ValidationError("synth_cube: need at least 4 bands");

  Rng rng(seed);

  std::vector<std::vector<double>> signatures(static_cast<std::size_t>(n_classes));
  for (auto& sig : signatures) {
    sig.assign(static_cast<std::size_t>(bands), 0.0);
    const int n_bumps = 2 + static_cast<int>(rng.below(3));
    for (int k = 0; k < n_bumps; ++k) {
      const double center = rng.uniform(0.0, static_cast<double>(bands - 1));
      const double width_b = rng.uniform(std::max(1.0, bands / 12.0), bands / 4.0);
      const double amp = rng.uniform(0.3, 1.0);
      for (std::int64_t b = 0; b < bands; ++b) {
        const double d = (static_cast<double>(b) - center) / width_b;
        sig[static_cast<std::size_t>(b)] += amp * std::exp(-0.5 * d * d);
      }
    }
  }

  const int n_sites = 3 * n_classes;
  std::vector<double> site_r, site_c;
  std::vector<std::uint16_t> site_class;
  LabelMap lm;
  lm.height = height;
  lm.width = width;
  lm.n_classes = static_cast<std::uint16_t>(n_classes);
  lm.labels.assign(static_cast<std::size_t>(height * width), 0);

  // Redraw sites until every class owns at least one pixel (can fail only on
  // very small grids).
  for (int attempt = 0; attempt < 100; ++attempt) {
    site_r.clear();
    site_c.clear();
    site_class.clear();
    for (int i = 0; i < n_sites; ++i) {
      site_r.push_back(rng.uniform(0.0, static_cast<double>(height - 1)));
      site_c.push_back(rng.uniform(0.0, static_cast<double>(width - 1)));
      site_class.push_back(static_cast<std::uint16_t>(1 + i % n_classes));
    }
    std::vector<bool> used(static_cast<std::size_t>(n_classes) + 1, false);
    for (std::int64_t r = 0; r < height; ++r) {
      for (std::int64_t c = 0; c < width; ++c) {
        double best = std::numeric_limits<double>::max();
        int best_site = 0;
        for (int s = 0; s < n_sites; ++s) {
          const double dr = static_cast<double>(r) - site_r[static_cast<std::size_t>(s)];
          const double dc = static_cast<double>(c) - site_c[static_cast<std::size_t>(s)];
          const double d2 = dr * dr + dc * dc;
          if (d2 < best) {
            best = d2;
            best_site = s;
          }
        }
        lm.at(r, c) = site_class[static_cast<std::size_t>(best_site)];
      }
    }
    for (auto l : lm.labels) used[l] = true;
    bool all = true;
    for (int c = 1; c <= n_classes; ++c) all = all && used[static_cast<std::size_t>(c)];
    if (all) break;
    if (attempt == 99) throw ValidationError("synth_cube: could not place all classes");
  }

  HsiCube cube = HsiCube::sized(height, width, bands);
  for (std::int64_t r = 0; r < height; ++r) {
    for (std::int64_t c = 0; c < width; ++c) {
      const auto& sig = signatures[static_cast<std::size_t>(lm.at(r, c) - 1)];
      for (std::int64_t b = 0; b < bands; ++b) {
        double v = sig[static_cast<std::size_t>(b)];
        if (jitter > 0.0) v += rng.normal(0.0, jitter);
        cube.at(r, c, b) = static_cast<float>(v);
      }
    }
  }
  SynthResult out{normalize(cube), std::move(lm)};
  out.labels.validate_against(out.cube);
  return out;
}

}  // namespace msdiff::hsi

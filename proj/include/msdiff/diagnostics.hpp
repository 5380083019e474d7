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
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "msdiff/common.hpp"
#include "msdiff/degrade.hpp"
#include "msdiff/diffuse.hpp"
#include "msdiff/embed.hpp"
#include "msdiff/hsi.hpp"

// Geometric diagnostics: TwoNN intrinsic-dimensionality estimation of the
// representation stages and CSV export of embeddings for external
// visualization tools.
namespace msdiff::diag {

struct PointSet {
  std::int64_t dim = 0;
  std::vector<std::vector<double>> points;
  std::string stage;  // degraded-raw | manifold | diffusion-refined

  void validate() const {
    for (const auto& p : points) {
      if (static_cast<std::int64_t>(p.size()) != dim) {
        throw ShapeError("point set: inconsistent dimensionality");
      }
    }
  }
};

struct TwonnResult {
  double d_hat = 0.0;
  std::int64_t duplicates_dropped = 0;
};

/// TwoNN estimate: mu_i = r2/r1 per point, the largest 10% treated as
/// censored, and the exponential-rate MLE on the remainder (the total
/// time-on-test form keeps the estimate consistent under trimming).
/// Exact duplicate points are dropped first; zero first-neighbor distances
/// after deduplication are an internal error.
inline TwonnResult twonn_id_detailed(const PointSet& set) {
  set.validate();
  std::vector<std::vector<double>> pts = set.points;
  std::sort(pts.begin(), pts.end());
  const auto before = pts.size();
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  const auto n = static_cast<std::int64_t>(pts.size());
  TwonnResult result;
  result.duplicates_dropped = static_cast<std::int64_t>(before) - n;
  if (n < 10) {
    throw ValidationError("twonn: need at least 10 distinct points, got " +
                          std::to_string(n));
  }

  const auto d = static_cast<std::size_t>(set.dim);
  std::vector<double> log_mu(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    double r1 = std::numeric_limits<double>::max();
    double r2 = std::numeric_limits<double>::max();
    const auto& a = pts[static_cast<std::size_t>(i)];
    for (std::int64_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const auto& b = pts[static_cast<std::size_t>(j)];
      double d2 = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = a[k] - b[k];
        d2 += diff * diff;
      }
      if (d2 < r1) {
        r2 = r1;
        r1 = d2;
      } else if (d2 < r2) {
        r2 = d2;
      }
    }
    if (r1 <= 0.0) {
      throw std::runtime_error("twonn: zero nearest-neighbor distance after deduplication");
    }
    // Squared distances halve the log ratio.
    log_mu[static_cast<std::size_t>(i)] = 0.5 * (std::log(r2) - std::log(r1));
  }

  std::sort(log_mu.begin(), log_mu.end());
  const auto n_discard = static_cast<std::int64_t>(
      std::floor(0.1 * static_cast<double>(n)));
  const std::int64_t kept = n - n_discard;
  double ttt = 0.0;
  for (std::int64_t i = 0; i < kept; ++i) ttt += log_mu[static_cast<std::size_t>(i)];
  ttt += static_cast<double>(n_discard) * log_mu[static_cast<std::size_t>(kept - 1)];
  if (ttt <= 0.0) {
    throw std::runtime_error("twonn: degenerate neighbor ratios");
  }
  result.d_hat = static_cast<double>(kept) / ttt;
  return result;
}

inline double twonn_id(const PointSet& set) { return twonn_id_detailed(set).d_hat; }

// --------------------------------------------------------------------------
// Stage-wise intrinsic-dimensionality report
// --------------------------------------------------------------------------

struct IdRow {
  std::string case_label;
  std::string stage;
  double d_hat = std::numeric_limits<double>::quiet_NaN();
  std::string error;  // empty on success
};

/// For each benchmark case: degrade the cube, sample evaluation pixels, and
/// estimate the intrinsic dimensionality of the flattened degraded patches,
/// the manifold coordinates, and the diffusion-refined coordinates.
/// Estimator failures are recorded per row without aborting the table.
/// The sample is drawn from `pool` (typically the test split); a null pool
/// means every labeled pixel.
inline std::vector<IdRow> id_report(const hsi::HsiCube& cube, const hsi::LabelMap& labels,
                                    const embed::EmbedParams& embed_params,
                                    const diffuse::DiffusionHeadParams& diffusion_params,
                                    const std::vector<degrade::BenchmarkCase>& cases,
                                    std::int64_t sample_size, std::uint64_t seed,
                                    double t_star = 0.25,
                                    const std::vector<hsi::PixelCoord>* pool = nullptr) {
  std::vector<hsi::PixelCoord> labeled;
  if (pool != nullptr) {
    labeled = *pool;
  } else {
    for (std::int64_t r = 0; r < labels.height; ++r) {
      for (std::int64_t c = 0; c < labels.width; ++c) {
        if (labels.at(r, c) > 0) labeled.push_back({r, c});
      }
    }
  }
  Rng rng(mix_seed(seed, 0x1DD0ull));
  rng.shuffle(labeled);
  if (sample_size < static_cast<std::int64_t>(labeled.size())) {
    labeled.resize(static_cast<std::size_t>(sample_size));
  }

  std::vector<IdRow> rows;
  for (std::size_t case_index = 0; case_index < cases.size(); ++case_index) {
    const auto& bench = cases[case_index];
    const hsi::HsiCube degraded =
        degrade::apply_benchmark(cube, bench, mix_seed(seed, 0xCA5Eull + case_index));

    PointSet raw{embed_params.cfg.patch_elems(), {}, "degraded-raw"};
    PointSet manifold{embed_params.cfg.embed_dim, {}, "manifold"};
    PointSet refined{embed_params.cfg.embed_dim, {}, "diffusion-refined"};
    for (const auto& coord : labeled) {
      hsi::Patch patch =
          hsi::extract_patch(degraded, coord.row, coord.col, embed_params.cfg.patch_size);
      raw.points.push_back(patch.values);
      auto u = embed::embed_coordinate(patch, embed_params).u;
      refined.points.push_back(diffuse::refine(u, t_star, diffusion_params));
      manifold.points.push_back(std::move(u));
    }

    for (const PointSet* set : {&raw, &manifold, &refined}) {
      IdRow row;
      row.case_label = bench.label;
      row.stage = set->stage;
      try {
        row.d_hat = twonn_id(*set);
      } catch (const std::exception& e) {
        row.error = e.what();
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline std::string id_table_csv(const std::vector<IdRow>& rows) {
  std::string out = "case,stage,id\n";
  char buf[64];
  for (const auto& row : rows) {
    out += row.case_label;
    out += ',';
    out += row.stage;
    out += ',';
    if (row.error.empty()) {
      std::snprintf(buf, sizeof(buf), "%.6f", row.d_hat);
      out += buf;
    } else {
      out += "error";
    }
    out += '\n';
  }
  return out;
}

// --------------------------------------------------------------------------
// Embedding export
// --------------------------------------------------------------------------

/// CSV with header label,f0,...,f{D-1}, one row per sample, 9 significant
/// digits. External tools handle the 2-D projection.
inline void export_embeddings(const std::vector<std::vector<double>>& latents,
                              const std::vector<std::uint16_t>& labels,
                              const std::string& path) {
  if (latents.size() != labels.size()) {
    throw ShapeError("export_embeddings: latents and labels must align");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path);
  const std::size_t dim = latents.empty() ? 0 : latents[0].size();
  out << "label";
  for (std::size_t j = 0; j < dim; ++j) out << ",f" << j;
  out << "\n";
  char buf[64];
  for (std::size_t i = 0; i < latents.size(); ++i) {
    if (latents[i].size() != dim) {
      throw ShapeError("export_embeddings: inconsistent latent width");
    }
    out << labels[i];
    for (double v : latents[i]) {
      std::snprintf(buf, sizeof(buf), "%.9g", v);
      out << ',' << buf;
    }
    out << "\n";
  }
  if (!out) throw FormatError("write failure on " + path);
}

}  // namespace msdiff::diag

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
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "msdiff/common.hpp"
#include "msdiff/rng.hpp"

// Dense f64 tensors with reverse-mode autodiff. Ops record their backward
// closure on the innermost live Tape; with no tape in scope the forward pass
// runs plain (inference). No broadcasting except the row-vector bias form.
namespace msdiff::numkit {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  std::shared_ptr<std::vector<double>> grad;  // allocated iff requires_grad
  bool requires_grad = false;

  Tensor() = default;

  static Tensor zeros(Shape s) {
    check_shape(s);
    Tensor t;
    t.shape = std::move(s);
    t.data = std::make_shared<std::vector<double>>(
        static_cast<std::size_t>(numel(t.shape)), 0.0);
    return t;
  }

  static Tensor full(Shape s, double v) {
    Tensor t = zeros(std::move(s));
    std::fill(t.data->begin(), t.data->end(), v);
    return t;
  }

  static Tensor of(Shape s, std::vector<double> values) {
    check_shape(s);
    if (numel(s) != static_cast<std::int64_t>(values.size())) {
      throw ShapeError("tensor: " + shape_str(s) + " needs " +
                       std::to_string(numel(s)) + " values, got " +
                       std::to_string(values.size()));
    }
    Tensor t;
    t.shape = std::move(s);
    t.data = std::make_shared<std::vector<double>>(std::move(values));
    return t;
  }

  /// Trainable tensor with N(0, stddev) entries.
  static Tensor randn_param(Shape s, Rng& rng, double stddev) {
    Tensor t = zeros(std::move(s));
    for (auto& v : *t.data) v = rng.normal(0.0, stddev);
    t.set_requires_grad();
    return t;
  }

  static Tensor zeros_param(Shape s) {
    Tensor t = zeros(std::move(s));
    t.set_requires_grad();
    return t;
  }

  static Tensor full_param(Shape s, double v) {
    Tensor t = full(std::move(s), v);
    t.set_requires_grad();
    return t;
  }

  std::int64_t size() const { return numel(shape); }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }
  std::int64_t rows() const { return shape.size() == 2 ? shape[0] : 0; }
  std::int64_t cols() const { return shape.size() == 2 ? shape[1] : 0; }

  double* ptr() { return data->data(); }
  const double* ptr() const { return data->data(); }
  double& at(std::int64_t i) { return (*data)[static_cast<std::size_t>(i)]; }
  double at(std::int64_t i) const { return (*data)[static_cast<std::size_t>(i)]; }

  void set_requires_grad() {
    requires_grad = true;
    ensure_grad();
  }

  void ensure_grad() {
    if (!grad) {
      grad = std::make_shared<std::vector<double>>(
          static_cast<std::size_t>(size()), 0.0);
    }
  }

  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), 0.0);
  }

  double* gptr() { return grad->data(); }
  const double* gptr() const { return grad->data(); }

  bool all_finite() const {
    for (double v : *data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  Tensor clone() const {
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<double>>(*data);
    return t;
  }

 private:
  static void check_shape(const Shape& s) {
    if (s.empty()) throw ShapeError("tensor: empty shape");
    for (auto e : s) {
      if (e <= 0) throw ShapeError("tensor: non-positive extent in " + shape_str(s));
    }
  }
};

// Records one backward closure per executed primitive; replaying the record
// in reverse execution order is a reverse topological sweep of the graph.
class Tape {
 public:
  Tape() : prev_(active_) { active_ = this; }
  ~Tape() { active_ = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  void record(std::function<void()> fn) { records_.push_back(std::move(fn)); }

  std::size_t size() const { return records_.size(); }

  /// Seeds d(loss)/d(loss)=1 and sweeps the record once, newest first.
  void backward(Tensor& loss) {
    if (loss.size() != 1) {
      throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape));
    }
    if (!loss.requires_grad || !loss.grad) {
      throw ValidationError("backward: loss does not require grad");
    }
    (*loss.grad)[0] = 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
    records_.clear();
  }

 private:
  std::vector<std::function<void()>> records_;
  Tape* prev_;
  inline static thread_local Tape* active_ = nullptr;
};

namespace detail {

inline bool track(const Tensor& a) { return a.requires_grad && Tape::active(); }

inline void mark_out(Tensor& out) {
  out.requires_grad = true;
  out.ensure_grad();
}

inline void require_2d(const Tensor& a, const char* op) {
  if (a.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + shape_str(a.shape));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                     " vs " + shape_str(b.shape));
  }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_2d(a, "matmul");
  detail::require_2d(b, "matmul");
  if (a.shape[1] != b.shape[0]) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape) +
                     " x " + shape_str(b.shape));
  }
  const std::int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor out = Tensor::zeros({m, n});
  const double* ap = a.ptr();
  const double* bp = b.ptr();
  double* op = out.ptr();
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t l = 0; l < k; ++l) {
      const double av = ap[i * k + l];
      const double* brow = bp + l * n;
      double* orow = op + i * n;
      for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  if (detail::track(a) || detail::track(b)) {
    detail::mark_out(out);
    Tensor ac = a, bc = b, oc = out;
    Tape::active()->record([ac, bc, oc, m, k, n]() mutable {
      const double* g = oc.gptr();
      if (ac.requires_grad) {
        double* ga = ac.gptr();
        const double* bp2 = bc.ptr();
        for (std::int64_t i = 0; i < m; ++i) {
          for (std::int64_t l = 0; l < k; ++l) {
            double s = 0.0;
            const double* grow = g + i * n;
            const double* brow = bp2 + l * n;
            for (std::int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
            ga[i * k + l] += s;
          }
        }
      }
      if (bc.requires_grad) {
        double* gb = bc.gptr();
        const double* ap2 = ac.ptr();
        for (std::int64_t i = 0; i < m; ++i) {
          const double* grow = g + i * n;
          for (std::int64_t l = 0; l < k; ++l) {
            const double av = ap2[i * k + l];
            double* gbrow = gb + l * n;
            for (std::int64_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape);
  const std::int64_t n = a.size();
  for (std::int64_t i = 0; i < n; ++i) out.at(i) = a.at(i) + b.at(i);
  if (detail::track(a) || detail::track(b)) {
    detail::mark_out(out);
    Tensor ac = a, bc = b, oc = out;
    Tape::active()->record([ac, bc, oc, n]() mutable {
      const double* g = oc.gptr();
      if (ac.requires_grad) {
        double* ga = ac.gptr();
        for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (bc.requires_grad) {
        double* gb = bc.gptr();
        for (std::int64_t i = 0; i < n; ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

/// Adds a length-D vector to every row of an N x D matrix (bias broadcast;
/// the only broadcast numkit supports).
inline Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  detail::require_2d(m, "add_rowvec");
  if (v.rank() != 1 || v.shape[0] != m.shape[1]) {
    throw ShapeError("add_rowvec: vector " + shape_str(v.shape) +
                     " does not match row width of " + shape_str(m.shape));
  }
  const std::int64_t rows = m.shape[0], cols = m.shape[1];
  Tensor out = Tensor::zeros(m.shape);
  for (std::int64_t i = 0; i < rows; ++i) {
    for (std::int64_t j = 0; j < cols; ++j) {
      out.at(i * cols + j) = m.at(i * cols + j) + v.at(j);
    }
  }
  if (detail::track(m) || detail::track(v)) {
    detail::mark_out(out);
    Tensor mc = m, vc = v, oc = out;
    Tape::active()->record([mc, vc, oc, rows, cols]() mutable {
      const double* g = oc.gptr();
      if (mc.requires_grad) {
        double* gm = mc.gptr();
        for (std::int64_t i = 0; i < rows * cols; ++i) gm[i] += g[i];
      }
      if (vc.requires_grad) {
        double* gv = vc.gptr();
        for (std::int64_t i = 0; i < rows; ++i) {
          for (std::int64_t j = 0; j < cols; ++j) gv[j] += g[i * cols + j];
        }
      }
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape);
  const std::int64_t n = a.size();
  for (std::int64_t i = 0; i < n; ++i) out.at(i) = a.at(i) * b.at(i);
  if (detail::track(a) || detail::track(b)) {
    detail::mark_out(out);
    Tensor ac = a, bc = b, oc = out;
    Tape::active()->record([ac, bc, oc, n]() mutable {
      const double* g = oc.gptr();
      if (ac.requires_grad) {
        double* ga = ac.gptr();
        const double* bp = bc.ptr();
        for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * bp[i];
      }
      if (bc.requires_grad) {
        double* gb = bc.gptr();
        const double* ap = ac.ptr();
        for (std::int64_t i = 0; i < n; ++i) gb[i] += g[i] * ap[i];
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape);
  const std::int64_t n = a.size();
  for (std::int64_t i = 0; i < n; ++i) out.at(i) = c * a.at(i);
  if (detail::track(a)) {
    detail::mark_out(out);
    Tensor ac = a, oc = out;
    Tape::active()->record([ac, oc, c, n]() mutable {
      const double* g = oc.gptr();
      double* ga = ac.gptr();
      for (std::int64_t i = 0; i < n; ++i) ga[i] += c * g[i];
    });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

inline Tensor mean_all(const Tensor& a) {
  const std::int64_t n = a.size();
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += a.at(i);
  Tensor out = Tensor::of({1}, {s / static_cast<double>(n)});
  if (detail::track(a)) {
    detail::mark_out(out);
    Tensor ac = a, oc = out;
    Tape::active()->record([ac, oc, n]() mutable {
      const double g = oc.gptr()[0] / static_cast<double>(n);
      double* ga = ac.gptr();
      for (std::int64_t i = 0; i < n; ++i) ga[i] += g;
    });
  }
  return out;
}

/// Column means of an N x D matrix: output is 1 x D. Each column sums its
/// addends in sorted value order, so the result is exactly invariant under
/// row permutation.
inline Tensor mean_rows(const Tensor& a) {
  detail::require_2d(a, "mean_rows");
  const std::int64_t rows = a.shape[0], cols = a.shape[1];
  Tensor out = Tensor::zeros({1, cols});
  std::vector<double> column(static_cast<std::size_t>(rows));
  for (std::int64_t j = 0; j < cols; ++j) {
    for (std::int64_t i = 0; i < rows; ++i) {
      column[static_cast<std::size_t>(i)] = a.at(i * cols + j);
    }
    std::sort(column.begin(), column.end());
    double s = 0.0;
    for (double v : column) s += v;
    out.at(j) = s / static_cast<double>(rows);
  }
  if (detail::track(a)) {
    detail::mark_out(out);
    Tensor ac = a, oc = out;
    Tape::active()->record([ac, oc, rows, cols]() mutable {
      const double* g = oc.gptr();
      double* ga = ac.gptr();
      for (std::int64_t i = 0; i < rows; ++i) {
        for (std::int64_t j = 0; j < cols; ++j) {
          ga[i * cols + j] += g[j] / static_cast<double>(rows);
        }
      }
    });
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  detail::require_2d(a, "transpose");
  const std::int64_t m = a.shape[0], n = a.shape[1];
  Tensor out = Tensor::zeros({n, m});
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) out.at(j * m + i) = a.at(i * n + j);
  }
  if (detail::track(a)) {
    detail::mark_out(out);
    Tensor ac = a, oc = out;
    Tape::active()->record([ac, oc, m, n]() mutable {
      const double* g = oc.gptr();
      double* ga = ac.gptr();
      for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
      }
    });
  }
  return out;
}

inline Tensor reshape(const Tensor& a, Shape s) {
  if (numel(s) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape) + " as " + shape_str(s));
  }
  Tensor out;
  out.shape = std::move(s);
  out.data = std::make_shared<std::vector<double>>(*a.data);
  if (detail::track(a)) {
    detail::mark_out(out);
    Tensor ac = a, oc = out;
    const std::int64_t n = a.size();
    Tape::active()->record([ac, oc, n]() mutable {
      const double* g = oc.gptr();
      double* ga = ac.gptr();
      for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
    });
  }
  return out;
}

/// Concatenates two matrices with equal row counts along columns.
inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  detail::require_2d(a, "concat");
  detail::require_2d(b, "concat");
  if (a.shape[0] != b.shape[0]) {
    throw ShapeError("concat: row counts differ, " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  }
  const std::int64_t rows = a.shape[0], ca = a.shape[1], cb = b.shape[1];
  Tensor out = Tensor::zeros({rows, ca + cb});
  for (std::int64_t i = 0; i < rows; ++i) {
    for (std::int64_t j = 0; j < ca; ++j) out.at(i * (ca + cb) + j) = a.at(i * ca + j);
    for (std::int64_t j = 0; j < cb; ++j) out.at(i * (ca + cb) + ca + j) = b.at(i * cb + j);
  }
  if (detail::track(a) || detail::track(b)) {
    detail::mark_out(out);
    Tensor ac = a, bc = b, oc = out;
    Tape::active()->record([ac, bc, oc, rows, ca, cb]() mutable {
      const double* g = oc.gptr();
      if (ac.requires_grad) {
        double* ga = ac.gptr();
        for (std::int64_t i = 0; i < rows; ++i) {
          for (std::int64_t j = 0; j < ca; ++j) ga[i * ca + j] += g[i * (ca + cb) + j];
        }
      }
      if (bc.requires_grad) {
        double* gb = bc.gptr();
        for (std::int64_t i = 0; i < rows; ++i) {
          for (std::int64_t j = 0; j < cb; ++j) gb[i * cb + j] += g[i * (ca + cb) + ca + j];
        }
      }
    });
  }
  return out;
}

inline Tensor slice_cols(const Tensor& a, std::int64_t start, std::int64_t width) {
  detail::require_2d(a, "slice_cols");
  if (start < 0 || width <= 0 || start + width > a.shape[1]) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", " +
                     std::to_string(start + width) + ") out of " + shape_str(a.shape));
  }
  const std::int64_t rows = a.shape[0], cols = a.shape[1];
  Tensor out = Tensor::zeros({rows, width});
  for (std::int64_t i = 0; i < rows; ++i) {
    for (std::int64_t j = 0; j < width; ++j) {
      out.at(i * width + j) = a.at(i * cols + start + j);
    }
  }
  if (detail::track(a)) {
    detail::mark_out(out);
    Tensor ac = a, oc = out;
    Tape::active()->record([ac, oc, rows, cols, start, width]() mutable {
      const double* g = oc.gptr();
      double* ga = ac.gptr();
      for (std::int64_t i = 0; i < rows; ++i) {
        for (std::int64_t j = 0; j < width; ++j) {
          ga[i * cols + start + j] += g[i * width + j];
        }
      }
    });
  }
  return out;
}

/// out[i] = a.flat[indices[i]]; backward scatter-adds. Used for the fixed
/// token-tiling permutation in the patch embedding.
inline Tensor gather_flat(const Tensor& a, const std::vector<std::int64_t>& indices,
                          Shape out_shape) {
  if (numel(out_shape) != static_cast<std::int64_t>(indices.size())) {
    throw ShapeError("gather_flat: index count does not match output shape");
  }
  for (auto ix : indices) {
    if (ix < 0 || ix >= a.size()) throw ShapeError("gather_flat: index out of range");
  }
  Tensor out = Tensor::zeros(std::move(out_shape));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out.at(static_cast<std::int64_t>(i)) = a.at(indices[i]);
  }
  if (detail::track(a)) {
    detail::mark_out(out);
    Tensor ac = a, oc = out;
    auto idx = indices;
    Tape::active()->record([ac, oc, idx]() mutable {
      const double* g = oc.gptr();
      double* ga = ac.gptr();
      for (std::size_t i = 0; i < idx.size(); ++i) ga[idx[i]] += g[i];
    });
  }
  return out;
}

namespace detail {
inline double gelu_fwd(double x, double* dydx) {
  const double c = 0.7978845608028654;  // sqrt(2/pi)
  const double k = 0.044715;
  const double inner = c * (x + k * x * x * x);
  const double t = std::tanh(inner);
  if (dydx) {
    const double sech2 = 1.0 - t * t;
    *dydx = 0.5 * (1.0 + t) + 0.5 * x * sech2 * c * (1.0 + 3.0 * k * x * x);
  }
  return 0.5 * x * (1.0 + t);
}
}  // namespace detail

/// GELU, tanh approximation.
inline Tensor gelu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape);
  const std::int64_t n = a.size();
  for (std::int64_t i = 0; i < n; ++i) out.at(i) = detail::gelu_fwd(a.at(i), nullptr);
  if (detail::track(a)) {
    detail::mark_out(out);
    Tensor ac = a, oc = out;
    Tape::active()->record([ac, oc, n]() mutable {
      const double* g = oc.gptr();
      double* ga = ac.gptr();
      for (std::int64_t i = 0; i < n; ++i) {
        double d;
        detail::gelu_fwd(ac.at(i), &d);
        ga[i] += g[i] * d;
      }
    });
  }
  return out;
}

constexpr double kRmsEps = 1e-6;

/// y = x / sqrt(mean(x^2) + eps) * gain, mean over the last axis.
inline Tensor rms_norm(const Tensor& x, const Tensor& gain) {
  if (x.rank() < 1 || gain.rank() != 1) {
    throw ShapeError("rms_norm: gain must be 1-D");
  }
  const std::int64_t d = x.shape.back();
  if (gain.shape[0] != d) {
    throw ShapeError("rms_norm: gain width " + shape_str(gain.shape) +
                     " does not match last axis of " + shape_str(x.shape));
  }
  const std::int64_t rows = x.size() / d;
  Tensor out = Tensor::zeros(x.shape);
  for (std::int64_t i = 0; i < rows; ++i) {
    const double* xr = x.ptr() + i * d;
    double* yr = out.ptr() + i * d;
    double ms = 0.0;
    for (std::int64_t j = 0; j < d; ++j) ms += xr[j] * xr[j];
    ms /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(ms + kRmsEps);
    for (std::int64_t j = 0; j < d; ++j) yr[j] = xr[j] * inv * gain.at(j);
  }
  if (detail::track(x) || detail::track(gain)) {
    detail::mark_out(out);
    Tensor xc = x, gc = gain, oc = out;
    Tape::active()->record([xc, gc, oc, rows, d]() mutable {
      const double* g = oc.gptr();
      for (std::int64_t i = 0; i < rows; ++i) {
        const double* xr = xc.ptr() + i * d;
        const double* gr = g + i * d;
        double ms = 0.0;
        for (std::int64_t j = 0; j < d; ++j) ms += xr[j] * xr[j];
        ms /= static_cast<double>(d);
        const double r = std::sqrt(ms + kRmsEps);
        const double inv = 1.0 / r;
        if (xc.requires_grad) {
          double s = 0.0;
          for (std::int64_t j = 0; j < d; ++j) s += gr[j] * gc.at(j) * xr[j];
          const double coef = s * inv * inv * inv / static_cast<double>(d);
          double* gx = xc.gptr() + i * d;
          for (std::int64_t j = 0; j < d; ++j) {
            gx[j] += gr[j] * gc.at(j) * inv - xr[j] * coef;
          }
        }
        if (gc.requires_grad) {
          double* gg = gc.gptr();
          for (std::int64_t j = 0; j < d; ++j) gg[j] += gr[j] * xr[j] * inv;
        }
      }
    });
  }
  return out;
}

/// Row-wise softmax of an m x n matrix.
inline Tensor softmax_rows(const Tensor& a) {
  detail::require_2d(a, "softmax");
  const std::int64_t m = a.shape[0], n = a.shape[1];
  Tensor out = Tensor::zeros(a.shape);
  for (std::int64_t i = 0; i < m; ++i) {
    const double* xr = a.ptr() + i * n;
    double* yr = out.ptr() + i * n;
    double mx = xr[0];
    for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    double z = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    for (std::int64_t j = 0; j < n; ++j) yr[j] /= z;
  }
  if (detail::track(a)) {
    detail::mark_out(out);
    Tensor ac = a, oc = out;
    Tape::active()->record([ac, oc, m, n]() mutable {
      const double* g = oc.gptr();
      const double* y = oc.ptr();
      double* ga = ac.gptr();
      for (std::int64_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::int64_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
        for (std::int64_t j = 0; j < n; ++j) {
          ga[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
        }
      }
    });
  }
  return out;
}

/// Mean over the batch of -log softmax(logits)[label].
inline Tensor softmax_cross_entropy(const Tensor& logits,
                                    const std::vector<std::int64_t>& labels) {
  detail::require_2d(logits, "softmax_cross_entropy");
  const std::int64_t b = logits.shape[0], c = logits.shape[1];
  if (static_cast<std::int64_t>(labels.size()) != b) {
    throw ShapeError("softmax_cross_entropy: batch " + std::to_string(b) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  for (auto y : labels) {
    if (y < 0 || y >= c) {
      throw ValidationError("softmax_cross_entropy: label " + std::to_string(y) +
                            " outside [0, " + std::to_string(c) + ")");
    }
  }
  Tensor probs = Tensor::zeros(logits.shape);
  double loss = 0.0;
  for (std::int64_t i = 0; i < b; ++i) {
    const double* xr = logits.ptr() + i * c;
    double* pr = probs.ptr() + i * c;
    double mx = xr[0];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
    double z = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
      pr[j] = std::exp(xr[j] - mx);
      z += pr[j];
    }
    for (std::int64_t j = 0; j < c; ++j) pr[j] /= z;
    loss -= std::log(std::max(pr[labels[static_cast<std::size_t>(i)]], 1e-300));
  }
  Tensor out = Tensor::of({1}, {loss / static_cast<double>(b)});
  if (detail::track(logits)) {
    detail::mark_out(out);
    Tensor lc = logits, oc = out;
    auto lbl = labels;
    Tape::active()->record([lc, oc, probs, lbl, b, c]() mutable {
      const double g = oc.gptr()[0] / static_cast<double>(b);
      double* gl = lc.gptr();
      const double* p = probs.ptr();
      for (std::int64_t i = 0; i < b; ++i) {
        for (std::int64_t j = 0; j < c; ++j) {
          double onehot = (j == lbl[static_cast<std::size_t>(i)]) ? 1.0 : 0.0;
          gl[i * c + j] += g * (p[i * c + j] - onehot);
        }
      }
    });
  }
  return out;
}

/// Mean of squared elementwise differences.
inline Tensor mse(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mse");
  const std::int64_t n = a.size();
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = a.at(i) - b.at(i);
    s += d * d;
  }
  Tensor out = Tensor::of({1}, {s / static_cast<double>(n)});
  if (detail::track(a) || detail::track(b)) {
    detail::mark_out(out);
    Tensor ac = a, bc = b, oc = out;
    Tape::active()->record([ac, bc, oc, n]() mutable {
      const double g = oc.gptr()[0] * 2.0 / static_cast<double>(n);
      if (ac.requires_grad) {
        double* ga = ac.gptr();
        for (std::int64_t i = 0; i < n; ++i) ga[i] += g * (ac.at(i) - bc.at(i));
      }
      if (bc.requires_grad) {
        double* gb = bc.gptr();
        for (std::int64_t i = 0; i < n; ++i) gb[i] -= g * (ac.at(i) - bc.at(i));
      }
    });
  }
  return out;
}

/// Compares the tape gradient of a scalar-valued f against central finite
/// differences (h = 1e-5); returns the max relative error with the
/// |a|+|b|+1e-8 normalizer.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                         double h = 1e-5) {
  x.set_requires_grad();
  x.zero_grad();
  std::vector<double> analytic;
  {
    Tape tape;
    Tensor y = f(x);
    tape.backward(y);
    analytic = *x.grad;
  }
  double worst = 0.0;
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const double keep = x.at(i);
    x.at(i) = keep + h;
    const double fp = f(x).at(0);
    x.at(i) = keep - h;
    const double fm = f(x).at(0);
    x.at(i) = keep;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[static_cast<std::size_t>(i)];
    const double err = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace msdiff::numkit

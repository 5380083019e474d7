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
#include <vector>

#include "msdiff/tensor.hpp"

namespace msdiff::numkit {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Decoupled weight-decay Adam with bias correction. Moment buffers are keyed
// by parameter position, so the parameter list must stay stable across steps.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig cfg = {})
      : params_(std::move(params)), cfg_(cfg) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(static_cast<std::size_t>(params_[i].size()), 0.0);
      v_[i].assign(static_cast<std::size_t>(params_[i].size()), 0.0);
    }
  }

  std::int64_t step_count() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      Tensor& p = params_[pi];
      if (!p.grad) {
        throw ValidationError("adamw: parameter " + std::to_string(pi) + " has no gradient");
      }
      double* w = p.ptr();
      const double* g = p.gptr();
      double* m = m_[pi].data();
      double* v = v_[pi].data();
      const std::int64_t n = p.size();
      for (std::int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(g[i])) {
          throw ValidationError("adamw: non-finite gradient in parameter " +
                                std::to_string(pi) + " element " + std::to_string(i) +
                                " at step " + std::to_string(step_));
        }
        w[i] -= cfg_.learning_rate * cfg_.weight_decay * w[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
      }
    }
  }

 private:
  std::vector<Tensor> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t step_ = 0;
};

}  // namespace msdiff::numkit

// Copyright 2026 The fracpos Authors. All Rights Reserved.
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

#include "fracpos/adam.hpp"

#include <algorithm>
#include <cmath>

#include "fracpos/error.hpp"

namespace fracpos {

Adam::Adam(std::vector<Parameter*> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.shape(), 0.0);
    v_.emplace_back(p->value.shape(), 0.0);
  }
}

void Adam::step(double lr) {
  for (Parameter* p : params_) {
    if (!p->grad.same_shape(p->value)) throw ShapeError("adam: gradient shape mismatch for " + p->name);
    if (!p->grad.all_finite()) throw NumericError("adam: non-finite gradient in " + p->name);
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& w = params_[k]->value;
    const Tensor& g = params_[k]->grad;
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      w[i] -= lr * mh / (std::sqrt(vh) + config_.eps);
    }
  }
}

void Adam::restore(long t, std::vector<Tensor> m, std::vector<Tensor> v) {
  if (m.size() != params_.size() || v.size() != params_.size())
    throw ShapeError("adam: restore with wrong parameter count");
  for (std::size_t k = 0; k < params_.size(); ++k)
    if (!m[k].same_shape(params_[k]->value) || !v[k].same_shape(params_[k]->value))
      throw ShapeError("adam: restore shape mismatch for " + params_[k]->name);
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

double inverse_sqrt_lr(long step, double peak_lr, long warmup) {
  const double s = static_cast<double>(std::max<long>(step, 1));
  const double w = static_cast<double>(std::max<long>(warmup, 1));
  return peak_lr * std::min(s / w, std::sqrt(w / s));
}

}  // namespace fracpos

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

#pragma once

#include <span>
#include <vector>

#include "fracpos/autograd.hpp"

namespace fracpos {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

// Bias-corrected Adam. Moments are kept per parameter, in the order the
// parameters were handed to the constructor.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig config = {});

  // Applies one update with learning rate `lr`. Throws NumericError naming
  // the first parameter whose gradient is not finite; nothing is updated then.
  void step(double lr);

  long t() const { return t_; }
  const AdamConfig& config() const { return config_; }
  std::span<const Tensor> first_moments() const { return m_; }
  std::span<const Tensor> second_moments() const { return v_; }
  void restore(long t, std::vector<Tensor> m, std::vector<Tensor> v);

 private:
  std::vector<Parameter*> params_;
  AdamConfig config_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

// Inverse square-root schedule with linear warmup (peak at step == warmup).
double inverse_sqrt_lr(long step, double peak_lr, long warmup);

}  // namespace fracpos

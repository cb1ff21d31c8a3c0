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

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fracpos/autograd.hpp"
#include "fracpos/rng.hpp"

namespace fracpos {

struct GradCheckOptions {
  double delta = 1e-5;
  double tol = 1e-4;
  // Coordinates sampled per parameter (all of them when the tensor is smaller).
  std::size_t samples_per_param = 8;
  std::uint64_t seed = 7;
};

struct GradCheckReport {
  struct Entry {
    std::string param;
    std::size_t index;
    double analytic;
    double numeric;
    double rel_error;
  };
  std::vector<Entry> entries;
  std::map<std::string, double> max_rel_error;
  double worst = 0.0;
  bool pass = true;
};

// Compares analytic gradients with central differences. `evaluate(true)` must
// run forward + backward (accumulating into the parameters' grad) and return
// the loss; `evaluate(false)` must run forward only. Per coordinate the
// report holds |analytic - numeric| / max(1, |analytic|).
GradCheckReport finite_diff_check(std::span<Parameter* const> params,
                                  const std::function<double(bool with_grad)>& evaluate,
                                  const GradCheckOptions& options = {});

}  // namespace fracpos

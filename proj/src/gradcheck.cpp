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

#include "fracpos/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fracpos/error.hpp"

namespace fracpos {

GradCheckReport finite_diff_check(std::span<Parameter* const> params,
                                  const std::function<double(bool)>& evaluate,
                                  const GradCheckOptions& options) {
  if (!(options.delta >= 1e-7 && options.delta <= 1e-4))
    throw Error("finite_diff_check: delta must lie in [1e-7, 1e-4]");
  for (Parameter* p : params) p->zero_grad();
  evaluate(true);
  std::vector<Tensor> analytic;
  for (Parameter* p : params) analytic.push_back(p->grad);

  Rng rng(options.seed, "gradcheck");
  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    std::vector<std::size_t> coords(p.value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > options.samples_per_param) {
      rng.shuffle(coords);
      coords.resize(options.samples_per_param);
    }
    double& worst = report.max_rel_error[p.name];
    for (std::size_t idx : coords) {
      const double orig = p.value[idx];
      p.value[idx] = orig + options.delta;
      const double up = evaluate(false);
      p.value[idx] = orig - options.delta;
      const double down = evaluate(false);
      p.value[idx] = orig;
      const double numeric = (up - down) / (2.0 * options.delta);
      const double a = analytic[k][idx];
      const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      report.entries.push_back({p.name, idx, a, numeric, rel});
      worst = std::max(worst, rel);
      report.worst = std::max(report.worst, rel);
      if (!(rel <= options.tol)) report.pass = false;
    }
  }
  return report;
}

}  // namespace fracpos

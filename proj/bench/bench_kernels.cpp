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

// GEMM throughput of the parallel kernels against the serial references.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <vector>

#include "fracpos/kernels.hpp"
#include "fracpos/rng.hpp"

using namespace fracpos;

namespace {

using Kernel = void (*)(const double*, const double*, double*, std::size_t, std::size_t, std::size_t, bool);

double gflops(Kernel f, const std::vector<double>& a, const std::vector<double>& b, std::vector<double>& c,
              std::size_t m, std::size_t k, std::size_t n, int reps) {
  f(a.data(), b.data(), c.data(), m, k, n, false);
  const auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) f(a.data(), b.data(), c.data(), m, k, n, false);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return 2.0 * static_cast<double>(m * k * n) * reps / s / 1e9;
}

}  // namespace

int main(int argc, char** argv) {
  const int reps = argc > 1 ? std::atoi(argv[1]) : 20;
  std::printf("threads=%d\n", kernels::max_threads());
  std::printf("kernel,m,k,n,serial_gflops,parallel_gflops\n");
  const std::size_t shapes[][3] = {{64, 64, 64}, {256, 64, 256}, {512, 64, 64}, {512, 256, 64}, {1024, 64, 256}};
  Rng rng(1, "bench/kernels");
  for (const auto& s : shapes) {
    const std::size_t m = s[0], k = s[1], n = s[2];
    std::vector<double> a(m * k), b(k * n), bt(n * k), at(m * n), c(m * n), ct(k * n);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    for (auto& v : bt) v = rng.normal();
    for (auto& v : at) v = rng.normal();
    std::printf("gemm,%zu,%zu,%zu,%.2f,%.2f\n", m, k, n, gflops(kernels::gemm_serial, a, b, c, m, k, n, reps),
                gflops(kernels::gemm, a, b, c, m, k, n, reps));
    std::printf("gemm_nt,%zu,%zu,%zu,%.2f,%.2f\n", m, k, n,
                gflops(kernels::gemm_nt_serial, a, bt, c, m, k, n, reps), gflops(kernels::gemm_nt, a, bt, c, m, k, n, reps));
    std::printf("gemm_tn,%zu,%zu,%zu,%.2f,%.2f\n", m, k, n,
                gflops(kernels::gemm_tn_serial, a, at, ct, m, k, n, reps), gflops(kernels::gemm_tn, a, at, ct, m, k, n, reps));
  }
}

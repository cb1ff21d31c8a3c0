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

#include "fracpos/kernels.hpp"

#include <algorithm>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fracpos::kernels {
namespace {

// Below this many multiply-adds the fork/join cost dominates.
constexpr std::size_t kParallelThreshold = 1 << 16;

constexpr std::size_t kMr = 4;
constexpr std::size_t kNr = 8;

// C block [rows x cols] (rows <= kMr, cols <= kNr) at c. Element (i, p) of A
// lives at a[i * si + p * sp]; B rows have stride n. Each output is summed
// in increasing p, starting from its old value when accumulating.
template <std::size_t R, std::size_t C>
inline void micro(const double* __restrict a, std::size_t si, std::size_t sp,
                  const double* __restrict b, double* __restrict c, std::size_t k, std::size_t n,
                  bool accumulate) {
  double t[R][C];
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = 0; j < C; ++j) t[r][j] = accumulate ? c[r * n + j] : 0.0;
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * n;
    for (std::size_t r = 0; r < R; ++r) {
      const double ar = a[r * si + p * sp];
      for (std::size_t j = 0; j < C; ++j) t[r][j] += ar * brow[j];
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = 0; j < C; ++j) c[r * n + j] = t[r][j];
}

inline void edge(const double* a, std::size_t si, std::size_t sp, const double* b, double* c,
                 std::size_t rows, std::size_t cols, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) {
      double acc = accumulate ? c[r * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[r * si + p * sp] * b[p * n + j];
      c[r * n + j] = acc;
    }
}

// Row panel [i0, i0 + rows) of C, rows <= kMr.
inline void panel(const double* a, std::size_t si, std::size_t sp, const double* b, double* c,
                  std::size_t rows, std::size_t k, std::size_t n, bool accumulate) {
  std::size_t j = 0;
  for (; j + kNr <= n; j += kNr) {
    if (rows == kMr)
      micro<kMr, kNr>(a, si, sp, b + j, c + j, k, n, accumulate);
    else if (rows == 1)
      micro<1, kNr>(a, si, sp, b + j, c + j, k, n, accumulate);
    else
      edge(a, si, sp, b + j, c + j, rows, kNr, k, n, accumulate);
  }
  if (j < n) edge(a, si, sp, b + j, c + j, rows, n - j, k, n, accumulate);
}

void blocked(const double* a, std::size_t si, std::size_t sp, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const std::size_t panels = (m + kMr - 1) / kMr;
  const bool par = m * k * n >= kParallelThreshold && panels > 1 && max_threads() > 1;
  (void)par;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t q = 0; q < static_cast<std::ptrdiff_t>(panels); ++q) {
    const std::size_t i = static_cast<std::size_t>(q) * kMr;
    const std::size_t rows = std::min(kMr, m - i);
    if (si == 1) {
      panel(a + i, 1, sp, b, c + i * n, rows, k, n, accumulate);
    } else {
      // Row-major A: pack the panel column-wise so the microkernel reads it
      // with unit stride.
      std::vector<double> packed(k * kMr);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t p = 0; p < k; ++p) packed[p * kMr + r] = a[(i + r) * si + p * sp];
      panel(packed.data(), 1, kMr, b, c + i * n, rows, k, n, accumulate);
    }
  }
}

}  // namespace

void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate) {
  blocked(a, k, 1, b, c, m, k, n, accumulate);
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  // Transpose b once so the inner loop runs over contiguous memory.
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm(a, bt.data(), c, m, k, n, accumulate);
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  // Output row i reads column i of a: stride 1 across rows, k along the sum.
  blocked(a, 1, k, b, c, k, m, n, accumulate);
}

void gemm_serial(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
}

void gemm_nt_serial(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
}

void gemm_tn_serial(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t r = 0; r < m; ++r) acc += a[r * k + i] * b[r * n + j];
      c[i * n + j] = acc;
    }
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

}  // namespace fracpos::kernels

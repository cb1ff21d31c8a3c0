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

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "fracpos/autograd.hpp"

// Differentiable ops over rank-2 tensors. Each op computes its forward value
// eagerly and, when any input requires grad, registers its backward.
namespace fracpos::ops {

Var matmul(Var a, Var b);
// a[m x k] * b[n x k]^T
Var matmul_nt(Var a, Var b);
// x[m x k] * w[k x n] + b[n]; `b` may be an invalid Var.
Var linear(Var x, Var w, Var b);
Var add(Var a, Var b);
Var scale(Var a, double s);
Var relu(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var gather_rows(Var x, std::vector<std::size_t> index);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(Var a, Var b);

// Scalar reductions, mainly for tests and gradient checks.
Var sum(Var a);
Var half_sum_squares(Var a);
Var dot(Var a, const Tensor& weights);

// One block of packed attention: queries [q_begin, q_begin + q_len) attend
// over keys [k_begin, k_begin + k_len). `mask` (row-major q_len x k_len) marks
// allowed keys; empty means all allowed. `relation` holds -1/0/+1 per pair and
// selects a per-head learned bias; empty means no relative bias.
struct AttentionSegment {
  std::size_t q_begin = 0, q_len = 0, k_begin = 0, k_len = 0;
  std::vector<unsigned char> mask;
  std::vector<signed char> relation;
};

// Multi-head scaled dot-product attention over independent segments.
// q: [Rq x d], k, v: [Rk x d]. `rel_bias` is [3 x heads] (row r+1 holds the
// bias for relation r) or an invalid Var. Disallowed keys receive exactly zero
// weight. Throws "empty attention row" when a query has no allowed key.
Var attention(Var q, Var k, Var v, std::span<const AttentionSegment> segments, int heads,
              Var rel_bias = {});

// Row-wise log-softmax over the entries with allowed[j] != 0; the other
// entries are -inf and carry no gradient.
Var log_softmax(Var logits, std::span<const unsigned char> allowed);

// Target distribution for one row of logits: explicit (id, mass) pairs plus
// `uniform_mass` spread evenly over the allowed ids. The row contributes
// weight * (-sum_k q_k log p_k).
struct RowTarget {
  std::vector<std::pair<int, double>> probs;
  double uniform_mass = 0.0;
  double weight = 1.0;
};

// Fused masked log-softmax + soft-target cross-entropy, summed over rows.
Var soft_cross_entropy(Var logits, std::span<const unsigned char> allowed,
                       std::span<const RowTarget> targets);

}  // namespace fracpos::ops

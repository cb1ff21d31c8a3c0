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
#include <string>
#include <string_view>
#include <vector>

#include "fracpos/tensor.hpp"

namespace fracpos::posenc {

enum class Scheme { abs, rel, fpe };

std::string_view scheme_name(Scheme s);
Scheme parse_scheme(std::string_view s);

// True when token representations stay valid after later insertions, so a
// decoder may cache them instead of re-encoding the hypothesis every step.
constexpr bool permits_reuse(Scheme s) { return s != Scheme::abs; }

// Sinusoidal absolute encoding: [2k] = sin(pos / 10000^(2k/d)), [2k+1] = cos(...).
// Throws for odd d_model.
std::vector<double> abs_encoding(double pos, std::size_t d_model);

inline constexpr int kSentinelB = -1;
inline constexpr int kSentinelE = -2;

struct PosNode {
  int id;
  std::vector<double> embedding;
  int left;
  int right;
  int created_step;
};

// Append-only DAG of fractional positions. A new node's embedding is a linear
// function of its left and right neighbours' embeddings at insertion time:
//   p_new = concat(p_left, p_right) * weight + bias,   weight: [2d x d].
// p_B and p_E are the embeddings of the two boundary sentinels.
class FpeState {
 public:
  FpeState(std::vector<double> p_b, std::vector<double> p_e, Tensor weight, std::vector<double> bias);

  std::size_t dim() const { return p_b_.size(); }
  // Throws on a dangling parent, or a parent not created before `step`.
  int insert(int left, int right, int step);
  std::span<const double> embedding(int id) const;
  const PosNode& node(int id) const;
  const std::vector<PosNode>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  int created_step(int id) const;

  // One line per node: "id step left right", sentinels written as B / E.
  std::string export_dag() const;

 private:
  std::vector<double> p_b_, p_e_;
  Tensor weight_;
  std::vector<double> bias_;
  std::vector<PosNode> nodes_;
};

// Balanced midpoint construction over an n-token snapshot: the token at
// offset floor(len/2) of each span is placed first, between the span's
// boundary tokens, then both halves recurse. Entries come out level by level,
// left to right, which is a valid insertion order.
struct SnapshotEntry {
  std::size_t index;  // surface index of the token
  int left;           // surface index of the left parent, or kSentinelB
  int right;          // surface index of the right parent, or kSentinelE
  int depth;          // 0 for the first token placed
};
std::vector<SnapshotEntry> balanced_tree_order(std::size_t n);

// Replays balanced_tree_order(n) through `state` (a node created at depth k
// gets step k + 1) and returns the node id of every token in surface order.
std::vector<int> fpe_embed_snapshot(std::size_t n, FpeState& state);

// sign(j - i) on surface positions.
constexpr int rel_relation(long i, long j) { return (j > i) - (j < i); }

// Row-major relation matrix between two lists of surface positions.
std::vector<signed char> rel_matrix(std::span<const long> query_pos, std::span<const long> key_pos);

}  // namespace fracpos::posenc

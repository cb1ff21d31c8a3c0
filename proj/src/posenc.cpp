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

#include "fracpos/posenc.hpp"

#include <cmath>
#include <deque>
#include <sstream>

#include "fracpos/error.hpp"
#include "fracpos/flops.hpp"
#include "fracpos/kernels.hpp"

namespace fracpos::posenc {

std::string_view scheme_name(Scheme s) {
  switch (s) {
    case Scheme::abs: return "abs";
    case Scheme::rel: return "rel";
    case Scheme::fpe: return "fpe";
  }
  return "?";
}

Scheme parse_scheme(std::string_view s) {
  if (s == "abs" || s == "ABS") return Scheme::abs;
  if (s == "rel" || s == "REL") return Scheme::rel;
  if (s == "fpe" || s == "FPE") return Scheme::fpe;
  throw Error("unknown positional encoding scheme '" + std::string(s) + "'");
}

std::vector<double> abs_encoding(double pos, std::size_t d_model) {
  if (d_model == 0 || d_model % 2 != 0)
    throw Error("abs_encoding: d_model must be even, got " + std::to_string(d_model));
  std::vector<double> out(d_model);
  for (std::size_t k = 0; 2 * k < d_model; ++k) {
    const double freq = std::pow(10000.0, static_cast<double>(2 * k) / static_cast<double>(d_model));
    out[2 * k] = std::sin(pos / freq);
    out[2 * k + 1] = std::cos(pos / freq);
  }
  return out;
}

FpeState::FpeState(std::vector<double> p_b, std::vector<double> p_e, Tensor weight,
                   std::vector<double> bias)
    : p_b_(std::move(p_b)), p_e_(std::move(p_e)), weight_(std::move(weight)), bias_(std::move(bias)) {
  const std::size_t d = p_b_.size();
  if (p_e_.size() != d || bias_.size() != d || weight_.rows() != 2 * d || weight_.cols() != d)
    throw ShapeError("FpeState: expected p_B, p_E, bias of width d and weight [2d x d]");
}

std::span<const double> FpeState::embedding(int id) const {
  if (id == kSentinelB) return p_b_;
  if (id == kSentinelE) return p_e_;
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
    throw Error("FpeState: unknown position node " + std::to_string(id));
  return nodes_[static_cast<std::size_t>(id)].embedding;
}

const PosNode& FpeState::node(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
    throw Error("FpeState: unknown position node " + std::to_string(id));
  return nodes_[static_cast<std::size_t>(id)];
}

int FpeState::created_step(int id) const {
  if (id == kSentinelB || id == kSentinelE) return 0;
  return node(id).created_step;
}

int FpeState::insert(int left, int right, int step) {
  if (step < 1) throw Error("FpeState: insertion step must be >= 1");
  auto check = [&](int id, int sentinel, const char* side) {
    if (id == sentinel) return;
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw Error(std::string("FpeState: dangling ") + side + " parent " + std::to_string(id));
    if (nodes_[static_cast<std::size_t>(id)].created_step >= step)
      throw Error(std::string("FpeState: ") + side + " parent " + std::to_string(id) +
                  " was not created before step " + std::to_string(step));
  };
  check(left, kSentinelB, "left");
  check(right, kSentinelE, "right");
  const std::size_t d = dim();
  std::vector<double> cat(2 * d);
  const auto el = embedding(left);
  const auto er = embedding(right);
  std::copy(el.begin(), el.end(), cat.begin());
  std::copy(er.begin(), er.end(), cat.begin() + static_cast<std::ptrdiff_t>(d));
  std::vector<double> out(bias_);
  kernels::gemm(cat.data(), weight_.ptr(), out.data(), 1, 2 * d, d, true);
  {
    flops::ComponentScope scope(flops::Component::fpe_linear);
    flops::record_matmul(1, 2 * d, d);
  }
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({id, std::move(out), left, right, step});
  return id;
}

std::string FpeState::export_dag() const {
  auto name = [](int id) {
    if (id == kSentinelB) return std::string("B");
    if (id == kSentinelE) return std::string("E");
    return std::to_string(id);
  };
  std::ostringstream os;
  for (const auto& n : nodes_)
    os << n.id << ' ' << n.created_step << ' ' << name(n.left) << ' ' << name(n.right) << '\n';
  return os.str();
}

std::vector<SnapshotEntry> balanced_tree_order(std::size_t n) {
  struct Span {
    std::size_t lo, hi;
    int left, right, depth;
  };
  std::vector<SnapshotEntry> order;
  order.reserve(n);
  std::deque<Span> queue;
  if (n > 0) queue.push_back({0, n, kSentinelB, kSentinelE, 0});
  while (!queue.empty()) {
    const Span s = queue.front();
    queue.pop_front();
    const std::size_t mid = s.lo + (s.hi - s.lo) / 2;
    order.push_back({mid, s.left, s.right, s.depth});
    if (mid > s.lo) queue.push_back({s.lo, mid, s.left, static_cast<int>(mid), s.depth + 1});
    if (mid + 1 < s.hi) queue.push_back({mid + 1, s.hi, static_cast<int>(mid), s.right, s.depth + 1});
  }
  return order;
}

std::vector<int> fpe_embed_snapshot(std::size_t n, FpeState& state) {
  std::vector<int> node_of(n, -1);
  for (const auto& e : balanced_tree_order(n)) {
    const int l = e.left == kSentinelB ? kSentinelB : node_of[static_cast<std::size_t>(e.left)];
    const int r = e.right == kSentinelE ? kSentinelE : node_of[static_cast<std::size_t>(e.right)];
    node_of[e.index] = state.insert(l, r, e.depth + 1);
  }
  return node_of;
}

std::vector<signed char> rel_matrix(std::span<const long> query_pos, std::span<const long> key_pos) {
  std::vector<signed char> r(query_pos.size() * key_pos.size());
  for (std::size_t i = 0; i < query_pos.size(); ++i)
    for (std::size_t j = 0; j < key_pos.size(); ++j)
      r[i * key_pos.size() + j] = static_cast<signed char>(rel_relation(query_pos[i], key_pos[j]));
  return r;
}

}  // namespace fracpos::posenc

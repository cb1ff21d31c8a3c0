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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "fracpos/error.hpp"
#include "fracpos/posenc.hpp"

using namespace fracpos;
using namespace fracpos::posenc;

namespace {

// W_f = [I/2; I/2], b_f = 0, so every new position is the midpoint of its parents.
FpeState midpoint_state(std::vector<double> pb, std::vector<double> pe) {
  const std::size_t d = pb.size();
  Tensor w = Tensor::matrix(2 * d, d);
  for (std::size_t i = 0; i < d; ++i) {
    w.at(i, i) = 0.5;
    w.at(d + i, i) = 0.5;
  }
  return FpeState(std::move(pb), std::move(pe), std::move(w), std::vector<double>(d, 0.0));
}

FpeState generic_state() {
  const std::size_t d = 3;
  Tensor w = Tensor::matrix(2 * d, d);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + static_cast<double>(i)) * 0.7;
  return FpeState({0.2, -0.4, 1.0}, {-1.0, 0.3, 0.1}, std::move(w), {0.05, -0.02, 0.01});
}

}  // namespace

TEST_CASE("sinusoidal encoding at position zero alternates 0 and 1") {
  const auto e = abs_encoding(0.0, 8);
  for (std::size_t i = 0; i < e.size(); ++i) CHECK(e[i] == (i % 2 == 0 ? 0.0 : 1.0));
}

TEST_CASE("sinusoidal encoding at position one, width two") {
  const auto e = abs_encoding(1.0, 2);
  CHECK(e[0] == doctest::Approx(0.8414709848078965).epsilon(1e-15));
  CHECK(e[1] == doctest::Approx(0.5403023058681398).epsilon(1e-15));
}

TEST_CASE("sinusoidal encoding index zero is periodic") {
  const double p = 3.25;
  const auto a = abs_encoding(p, 4);
  const auto b = abs_encoding(p + 2.0 * std::numbers::pi, 4);
  CHECK(a[0] == doctest::Approx(b[0]).epsilon(1e-12));
  CHECK_THROWS_AS(abs_encoding(1.0, 3), Error);
}

TEST_CASE("first insertion combines the boundary embeddings") {
  FpeState s = generic_state();
  const int id = s.insert(kSentinelB, kSentinelE, 1);
  // Independent evaluation of concat(p_B, p_E) * W + b.
  const std::vector<double> pb{0.2, -0.4, 1.0}, pe{-1.0, 0.3, 0.1}, b{0.05, -0.02, 0.01};
  for (std::size_t j = 0; j < 3; ++j) {
    double v = b[j];
    for (std::size_t i = 0; i < 3; ++i) {
      v += pb[i] * std::sin(1.0 + static_cast<double>(i * 3 + j)) * 0.7;
      v += pe[i] * std::sin(1.0 + static_cast<double>((3 + i) * 3 + j)) * 0.7;
    }
    CHECK(s.embedding(id)[j] == doctest::Approx(v).epsilon(1e-14));
  }
  CHECK(s.node(id).left == kSentinelB);
  CHECK(s.node(id).right == kSentinelE);
}

TEST_CASE("midpoint weights give fractional positions") {
  FpeState s = midpoint_state({1.0, 0.0}, {0.0, 1.0});
  const int mid = s.insert(kSentinelB, kSentinelE, 1);
  CHECK(s.embedding(mid)[0] == 0.5);
  CHECK(s.embedding(mid)[1] == 0.5);
  const int left = s.insert(kSentinelB, mid, 2);
  CHECK(s.embedding(left)[0] == 0.75);
  CHECK(s.embedding(left)[1] == 0.25);
}

TEST_CASE("insertions must reference parents created earlier") {
  FpeState s = generic_state();
  const int a = s.insert(kSentinelB, kSentinelE, 1);
  CHECK_THROWS_AS(s.insert(a, kSentinelE, 1), Error);
  CHECK_THROWS_AS(s.insert(7, kSentinelE, 2), Error);
  CHECK_THROWS_AS(s.insert(kSentinelB, kSentinelE, 0), Error);
}

TEST_CASE("embeddings of three tokens depend only on their own parents") {
  // Every insertion order of three tokens into an empty hypothesis; each token
  // is inserted between its current surface neighbours.
  std::vector<int> order{0, 1, 2};
  do {
    FpeState s = generic_state();
    std::vector<int> surface;  // final-token indices present, in surface order
    std::vector<int> node(3, -1);
    std::vector<std::vector<double>> first_seen(3);
    int step = 0;
    for (int tok : order) {
      auto at = std::lower_bound(surface.begin(), surface.end(), tok);
      const int l = at == surface.begin() ? kSentinelB : node[static_cast<std::size_t>(*(at - 1))];
      const int r = at == surface.end() ? kSentinelE : node[static_cast<std::size_t>(*at)];
      node[static_cast<std::size_t>(tok)] = s.insert(l, r, ++step);
      surface.insert(at, tok);
      const auto e = s.embedding(node[static_cast<std::size_t>(tok)]);
      first_seen[static_cast<std::size_t>(tok)].assign(e.begin(), e.end());
      // Oracle: a fresh state fed the same parent chain gives the same vector.
      for (int t = 0; t < 3; ++t) {
        if (node[static_cast<std::size_t>(t)] < 0) continue;
        const auto now = s.embedding(node[static_cast<std::size_t>(t)]);
        CHECK(std::equal(now.begin(), now.end(), first_seen[static_cast<std::size_t>(t)].begin()));
      }
    }
  } while (std::next_permutation(order.begin(), order.end()));
}

TEST_CASE("balanced tree order") {
  CHECK(balanced_tree_order(0).empty());
  const auto three = balanced_tree_order(3);
  REQUIRE(three.size() == 3);
  CHECK(three[0].index == 1);
  CHECK(three[0].left == kSentinelB);
  CHECK(three[0].right == kSentinelE);
  CHECK(three[1].index == 0);
  CHECK(three[1].left == kSentinelB);
  CHECK(three[1].right == 1);
  CHECK(three[2].index == 2);
  CHECK(three[2].left == 1);
  CHECK(three[2].right == kSentinelE);
}

TEST_CASE("balanced tree order is a valid insertion sequence") {
  for (std::size_t n = 1; n <= 12; ++n) {
    const auto order = balanced_tree_order(n);
    REQUIRE(order.size() == n);
    std::vector<int> present;
    for (const auto& e : order) {
      const int idx = static_cast<int>(e.index);
      auto at = std::lower_bound(present.begin(), present.end(), idx);
      const int l = at == present.begin() ? kSentinelB : *(at - 1);
      const int r = at == present.end() ? kSentinelE : *at;
      CHECK(e.left == l);
      CHECK(e.right == r);
      present.insert(at, idx);
    }
    FpeState s = generic_state();
    const auto nodes = fpe_embed_snapshot(n, s);
    CHECK(s.size() == n);
    for (const auto& e : order) {
      const auto& node = s.node(nodes[e.index]);
      CHECK(node.created_step == e.depth + 1);
      CHECK(node.left == (e.left == kSentinelB ? kSentinelB : nodes[static_cast<std::size_t>(e.left)]));
    }
  }
}

TEST_CASE("relation labels") {
  CHECK(rel_relation(3, 3) == 0);
  CHECK(rel_relation(3, 4) == 1);
  CHECK(rel_relation(4, 3) == -1);
  const std::vector<long> q{0, 2}, k{0, 1, 2};
  const auto m = rel_matrix(q, k);
  CHECK(m == std::vector<signed char>{0, 1, 1, -1, -1, 0});
}

TEST_CASE("relation of an existing pair survives any insertion") {
  // Surface positions of a length-5 hypothesis; insert one token at every
  // slot and compare the relation of every old pair.
  for (long slot = 0; slot <= 5; ++slot) {
    for (long i = 0; i < 5; ++i) {
      for (long j = 0; j < 5; ++j) {
        const long ni = i >= slot ? i + 1 : i;
        const long nj = j >= slot ? j + 1 : j;
        CHECK(rel_relation(i, j) == rel_relation(ni, nj));
      }
    }
  }
}

TEST_CASE("scheme names round trip") {
  for (Scheme s : {Scheme::abs, Scheme::rel, Scheme::fpe}) CHECK(parse_scheme(scheme_name(s)) == s);
  CHECK_THROWS_AS(parse_scheme("rope"), Error);
  CHECK_FALSE(permits_reuse(Scheme::abs));
  CHECK(permits_reuse(Scheme::fpe));
}

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

#include "fracpos/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "fracpos/error.hpp"

namespace fracpos::metrics {
namespace {

void check(std::span<const Sequence> hyps, std::span<const Sequence> refs) {
  if (hyps.size() != refs.size())
    throw Error("metrics: " + std::to_string(hyps.size()) + " hypotheses for " +
                std::to_string(refs.size()) + " references");
  if (hyps.empty()) throw Error("metrics: empty hypothesis set");
}

std::map<std::vector<int>, long> ngrams(const Sequence& s, std::size_t n) {
  std::map<std::vector<int>, long> counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[std::vector<int>(s.begin() + i, s.begin() + i + n)];
  return counts;
}

}  // namespace

double exact_match(std::span<const Sequence> hyps, std::span<const Sequence> refs) {
  check(hyps, refs);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) hits += hyps[i] == refs[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(hyps.size());
}

double token_accuracy(std::span<const Sequence> hyps, std::span<const Sequence> refs) {
  check(hyps, refs);
  std::size_t match = 0, total = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto& h = hyps[i];
    const auto& r = refs[i];
    total += std::max(h.size(), r.size());
    for (std::size_t j = 0; j < std::min(h.size(), r.size()); ++j) match += h[j] == r[j] ? 1 : 0;
  }
  return total == 0 ? 1.0 : static_cast<double>(match) / static_cast<double>(total);
}

double corpus_bleu(std::span<const Sequence> hyps, std::span<const Sequence> refs, int max_n) {
  check(hyps, refs);
  if (max_n < 1) throw Error("corpus_bleu: max_n must be >= 1");
  const auto N = static_cast<std::size_t>(max_n);
  std::vector<long> matched(N, 0), possible(N, 0);
  std::size_t hyp_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    hyp_len += hyps[i].size();
    ref_len += refs[i].size();
    for (std::size_t n = 1; n <= N; ++n) {
      const auto h = ngrams(hyps[i], n);
      const auto r = ngrams(refs[i], n);
      for (const auto& [gram, count] : h) {
        possible[n - 1] += count;
        const auto it = r.find(gram);
        if (it != r.end()) matched[n - 1] += std::min(count, it->second);
      }
    }
  }
  double log_sum = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    if (matched[n] == 0 || possible[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(matched[n]) / static_cast<double>(possible[n]));
  }
  const double bp = hyp_len >= ref_len ? 1.0
                                       : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return bp * std::exp(log_sum / static_cast<double>(N));
}

}  // namespace fracpos::metrics

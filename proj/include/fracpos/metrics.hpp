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

namespace fracpos::metrics {

using Sequence = std::vector<int>;

// Fraction of hypotheses equal to their reference.
double exact_match(std::span<const Sequence> hyps, std::span<const Sequence> refs);

// Matching positions over the summed max(len(hyp), len(ref)).
double token_accuracy(std::span<const Sequence> hyps, std::span<const Sequence> refs);

// Corpus BLEU: geometric mean of clipped n-gram precisions for n = 1..max_n
// times the brevity penalty, with counts pooled over the corpus and no
// smoothing (a zero precision gives 0). Throws on an empty or mismatched set.
double corpus_bleu(std::span<const Sequence> hyps, std::span<const Sequence> refs, int max_n = 4);

}  // namespace fracpos::metrics

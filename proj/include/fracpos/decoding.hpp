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

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fracpos/model.hpp"

namespace fracpos::decoding {

enum class Mode { recompute, incremental };
std::string_view mode_name(Mode m);
Mode parse_mode(std::string_view s);

// Self-attention mask of the recompute engine. Incremental decoding always
// behaves as `generation`.
enum class MaskKind { automatic, full, generation };
std::string_view mask_kind_name(MaskKind m);
MaskKind parse_mask_kind(std::string_view s);

// Encoder output of one source plus its per-layer cross-attention projections.
struct Memory {
  Tensor states;
  std::vector<Tensor> keys, values;
};
Memory prepare_memory(const Model& model, std::span<const int> src);

// New decoder rows for extend_cache: boundary rows (BOS/EOS) or tokens
// inserted at one step.
struct NewRows {
  std::vector<int> tokens;
  int step = 0;
  Tensor positions;           // FPE: one position embedding per row
  std::vector<long> surface;  // REL: current surface index of each row
};

// Runs the decoder over `rows` only. Queries see every cached row plus the
// other new rows; the cache then holds their keys, values and hidden states.
// `cached_surface` lists the current surface index of every cached row (REL).
// Throws for ABS, whose cached rows go stale after an insertion.
void extend_cache(const Model& model, DecoderCache& cache, const NewRows& rows,
                  std::span<const long> cached_surface, const Memory& memory);

struct Options {
  Mode mode = Mode::incremental;
  MaskKind mask = MaskKind::automatic;  // full for ABS, generation otherwise
  double eos_penalty = 0.0;
  int max_len = 0;    // 0: model max_len
  int max_steps = 0;  // 0: max_len + 2
  // Reuse slot log-probabilities of slots whose boundary rows are unchanged
  // (incremental mode only).
  bool cache_slots = true;
};

struct DecodeResult {
  std::vector<int> tokens;
  int n_steps = 0;
  std::size_t out_len = 0;
  double wall_time_ms = 0.0;
  std::optional<std::uint64_t> flops;
  Mode mode = Mode::recompute;
  bool truncated = false;       // stopped by max_len
  bool hit_max_steps = false;   // stopped by max_steps
  std::vector<int> steps;       // insertion step of each output token
  std::vector<int> per_step;    // tokens inserted at each step
};

// What the engine sees before choosing: row s of `logprobs` is slot s of
// `hyp` in surface order.
struct StepView {
  std::size_t instance;
  int step;
  const Hypothesis& hyp;
  const Tensor& logprobs;
};
using StepObserver = std::function<void(const StepView&)>;

// Picks the outcome of each slot (a content id or vocab::kEndOfSlot). The
// default takes the argmax after subtracting eos_penalty from END_OF_SLOT,
// breaking ties toward the smaller id.
using SlotChooser = std::function<int(const StepView&, std::size_t slot)>;
int choose_slot(std::span<const double> logprobs, double eos_penalty);

DecodeResult decode_insertion(const Model& model, std::span<const int> src, const Options& options,
                              const StepObserver& observer = {}, const SlotChooser& chooser = {});

// Decodes several sources together: sources are padded to the longest one
// (padding masked out), each step runs the still-active members as one
// packed forward, finished members stay frozen. Results come back in input
// order with wall_time_ms set to the batch time divided by the batch size.
std::vector<DecodeResult> decode_insertion_batch(const Model& model,
                                                 std::span<const std::vector<int>> sources,
                                                 const Options& options,
                                                 const StepObserver& observer = {},
                                                 const SlotChooser& chooser = {});

// Final state of the FPE position DAG of a single decode, for export.
std::string decode_fpe_dag(const Model& model, std::span<const int> src, const Options& options);

// Generic beam search over token sequences. `score` gets the live prefixes
// and returns one log-probability row (indexed by token id, -inf for
// impossible ids) per prefix. A hypothesis finishes when it takes `eos` or
// reaches max_len tokens. Scores are summed log-probabilities.
struct BeamHypothesis {
  std::vector<int> tokens;  // without eos
  double logprob = 0.0;
  bool finished = false;    // took eos
};
using BeamScorer = std::function<std::vector<std::vector<double>>(std::span<const std::vector<int>>)>;
BeamHypothesis beam_search(const BeamScorer& score, int beam_size, int max_len, int eos);

// L2R decoding with a causal key/value cache per live prefix. beam_size 1 is
// greedy; with a wider beam the greedy sequence is also a candidate.
DecodeResult decode_l2r(const Model& model, std::span<const int> src, int beam_size, int max_len = 0);

// Packs instances, sorted by source length, into batches whose source token
// total stays within `token_budget`.
struct BatchPlan {
  std::vector<std::vector<std::size_t>> batches;
};
BatchPlan plan_batches(std::span<const std::vector<int>> sources, std::size_t token_budget);

struct BatchRun {
  std::vector<std::size_t> members;
  double latency_ms = 0.0;
  int steps = 0;
};
struct BatchDecodeOutput {
  std::vector<DecodeResult> results;  // input order
  std::vector<BatchRun> batches;
};

// Throws when a source is longer than the budget. L2R models decode each
// member of a batch with greedy search.
BatchDecodeOutput batch_decode(const Model& model, std::span<const std::vector<int>> sources,
                               std::size_t token_budget, const Options& options);

}  // namespace fracpos::decoding

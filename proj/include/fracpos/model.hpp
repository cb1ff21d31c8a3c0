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
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fracpos/autograd.hpp"
#include "fracpos/ops.hpp"
#include "fracpos/posenc.hpp"

namespace fracpos {

enum class HeadKind { insertion, l2r };
std::string_view head_name(HeadKind h);
HeadKind parse_head(std::string_view s);

struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int vocab_size = 64;  // includes the reserved ids
  int max_len = 64;
  posenc::Scheme pe = posenc::Scheme::fpe;
  HeadKind head = HeadKind::insertion;
  std::uint64_t seed = 1;

  void validate() const;
};

// Partial output of an insertion decoder, in surface order.
struct Hypothesis {
  std::vector<int> tokens;
  std::vector<int> steps;      // insertion step of each token (>= 1)
  std::vector<int> pos_nodes;  // FPE node id, ABS surface index, or -1 (REL)

  std::size_t size() const { return tokens.size(); }
};

// Per-slot log-probabilities; row s is the gap between boundary rows s and
// s+1 of the (BOS, tokens..., EOS) sequence. Columns span the vocabulary;
// ids that are not valid outcomes hold -inf.
struct SlotPrediction {
  Tensor logprobs;
  std::size_t slots() const { return logprobs.rows(); }
};

// Self-attention masks over the boundary-extended rows (BOS, tokens..., EOS).
// Row-major, 1 = may attend.
std::vector<unsigned char> full_mask(std::size_t rows);
// Row i may attend to row j iff step[j] <= step[i]. BOS/EOS are step 0.
std::vector<unsigned char> generation_order_mask(std::span<const int> row_steps);
std::vector<unsigned char> causal_mask(std::size_t rows);

// Frozen decoder state of one instance for incremental decoding: per layer
// the key/value projections of every row, in the order rows were added.
struct DecoderCache {
  std::vector<Tensor> keys, values;
  Tensor hidden;
  std::vector<int> steps;

  std::size_t size() const { return steps.size(); }
};

// Self-attention layout of one instance inside a packed decoder run. Queries
// are the instance's new rows; keys are its cached rows followed by its new
// rows.
struct SelfAttnPlan {
  std::size_t n_new = 0;
  const DecoderCache* cache = nullptr;  // may be null when nothing is cached
  std::vector<unsigned char> mask;      // n_new x (cached + n_new); empty = all
  std::vector<signed char> relation;    // same shape, REL only
};

struct CrossAttnPlan {
  std::size_t mem_begin = 0;
  std::size_t mem_len = 0;
  std::vector<unsigned char> mask;  // n_new x mem_len; empty = all
};

// Packed encoder output. Instance i owns rows [begin[i], begin[i] + len[i]);
// rows past real[i] are padding.
struct EncodedBatch {
  Var memory;
  std::vector<std::size_t> begin, len, real;
  std::vector<Var> keys, values;  // per-layer cross-attention projections
};

struct StackOutput {
  Var hidden;                     // final hidden state of the new rows
  std::vector<Var> keys, values;  // per layer, projections of the new rows
};

// Encoder-decoder transformer with pre-layer-norm blocks, shared input/output
// token embeddings, and either a slot insertion head or a next-token head.
class Model {
 public:
  explicit Model(ModelConfig config);
  Model(const Model& other);
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  std::vector<Parameter*> parameters() const;
  Parameter* find(const std::string& name) const;
  std::size_t parameter_count() const;

  // Ids that are valid outputs of the model's head.
  std::span<const unsigned char> output_mask() const { return output_mask_; }

  // ---- graph-level building blocks (training and batched decoding) ----

  // Encodes the sources; with pad_to > 0 every instance is padded with PAD
  // up to pad_to rows and the padding is masked out of attention.
  EncodedBatch encode_batch(Graph& g, std::span<const std::vector<int>> sources,
                            std::size_t pad_to = 0) const;
  // Token embeddings scaled by sqrt(d_model).
  Var embed(Graph& g, std::span<const int> tokens) const;
  // ABS positions for the given surface indices (constant).
  Var abs_positions(Graph& g, std::span<const long> surface) const;
  // FPE embedding of new nodes from parent rows of `table`:
  //   concat(table[left], table[right]) * W_f + b_f.
  Var fpe_combine(Graph& g, Var table, std::vector<std::size_t> left,
                  std::vector<std::size_t> right) const;
  Var fpe_boundary(Graph& g) const;  // [p_B; p_E] as a 2 x d Var

  // Runs the decoder layers over packed new rows. `mem_keys`/`mem_values`
  // are the per-layer cross projections visible to this graph.
  StackOutput decoder_stack(Graph& g, Var x, std::span<const SelfAttnPlan> self,
                            std::span<const CrossAttnPlan> cross, std::span<const Var> mem_keys,
                            std::span<const Var> mem_values) const;

  // Unnormalised insertion logits for the slots (left row, right row) of `hidden`.
  Var slot_logits_graph(Graph& g, Var hidden, std::span<const std::size_t> left,
                        std::span<const std::size_t> right) const;
  // Unnormalised next-token logits of every row of `hidden`.
  Var next_token_logits_graph(Graph& g, Var hidden) const;

  // ---- single-instance convenience API (inference, tests) ----

  // Memory rows [len_src x d_model]. Throws for an empty source.
  Tensor encode(std::span<const int> src) const;
  // Hidden states of the boundary-extended hypothesis (n + 2 rows, surface
  // order) under `mask`. `fpe` supplies node embeddings for the FPE scheme.
  Tensor decoder_forward(const Hypothesis& hyp, const Tensor& memory,
                         std::span<const unsigned char> mask,
                         const posenc::FpeState* fpe = nullptr) const;
  SlotPrediction slot_logits(const Tensor& hidden) const;
  // Causal decoder over (BOS, prefix...) for the L2R head: one next-token
  // log-probability row per input row.
  Tensor l2r_logits(std::span<const int> prefix, const Tensor& memory) const;

  // Position state seeded with the model's current FPE parameters.
  posenc::FpeState make_fpe_state() const;

 private:
  struct Linear {
    Parameter* w;
    Parameter* b;
  };
  struct Norm {
    Parameter* gamma;
    Parameter* beta;
  };
  struct EncoderLayer {
    Norm ln1;
    Linear q, k, v, o;
    Norm ln2;
    Linear ff1, ff2;
  };
  struct DecoderLayer {
    Norm ln_self;
    Linear sq, sk, sv, so;
    Parameter* rel_bias = nullptr;
    Norm ln_cross;
    Linear cq, ck, cv, co;
    Norm ln_ff;
    Linear ff1, ff2;
  };

  Parameter* add(const std::string& name, Tensor value);
  Linear make_linear(const std::string& name, int in, int out);
  Norm make_norm(const std::string& name, int dim);
  void build();
  Var apply(Graph& g, const Linear& l, Var x) const;
  Var apply(Graph& g, const Norm& n, Var x) const;
  Var feed_forward(Graph& g, const Linear& ff1, const Linear& ff2, Var x) const;

  ModelConfig config_;
  std::vector<std::unique_ptr<Parameter>> params_;
  Parameter* embedding_ = nullptr;
  std::vector<EncoderLayer> encoder_;
  Norm enc_final_{};
  std::vector<DecoderLayer> decoder_;
  Norm dec_final_{};
  Linear slot_{};
  Parameter* p_b_ = nullptr;
  Parameter* p_e_ = nullptr;
  Linear fpe_{};
  std::vector<unsigned char> output_mask_;
};

}  // namespace fracpos

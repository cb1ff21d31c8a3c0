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

#include "fracpos/model.hpp"

#include <cmath>

#include "fracpos/error.hpp"
#include "fracpos/flops.hpp"
#include "fracpos/rng.hpp"
#include "fracpos/vocab.hpp"

namespace fracpos {

using flops::Component;
using flops::ComponentScope;

std::string_view head_name(HeadKind h) { return h == HeadKind::insertion ? "insertion" : "l2r"; }

HeadKind parse_head(std::string_view s) {
  if (s == "insertion") return HeadKind::insertion;
  if (s == "l2r") return HeadKind::l2r;
  throw Error("unknown head '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0)
    throw Error("model config: sizes must be positive");
  if (d_model % n_heads != 0) throw Error("model config: d_model must be divisible by n_heads");
  if (d_model % 2 != 0) throw Error("model config: d_model must be even");
  if (vocab_size <= vocab::kFirstContent)
    throw Error("model config: vocab_size must exceed the reserved ids");
  if (max_len <= 0) throw Error("model config: max_len must be positive");
}

std::vector<unsigned char> full_mask(std::size_t rows) {
  return std::vector<unsigned char>(rows * rows, 1);
}

std::vector<unsigned char> generation_order_mask(std::span<const int> row_steps) {
  const std::size_t n = row_steps.size();
  std::vector<unsigned char> m(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m[i * n + j] = row_steps[j] <= row_steps[i];
  return m;
}

std::vector<unsigned char> causal_mask(std::size_t rows) {
  std::vector<unsigned char> m(rows * rows);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j <= i; ++j) m[i * rows + j] = 1;
  return m;
}

Model::Model(ModelConfig config) : config_(config) {
  config_.validate();
  build();
}

Model::Model(const Model& other) : config_(other.config_) {
  build();
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i]->value = other.params_[i]->value;
}

Parameter* Model::add(const std::string& name, Tensor value) {
  params_.push_back(std::make_unique<Parameter>(name, std::move(value)));
  return params_.back().get();
}

Model::Linear Model::make_linear(const std::string& name, int in, int out) {
  Rng rng(config_.seed, "init/" + name);
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor w = Tensor::matrix(static_cast<std::size_t>(in), static_cast<std::size_t>(out));
  for (double& v : w.data()) v = rng.uniform(-limit, limit);
  Linear l;
  l.w = add(name + ".w", std::move(w));
  l.b = add(name + ".b", Tensor({static_cast<std::size_t>(out)}, 0.0));
  return l;
}

Model::Norm Model::make_norm(const std::string& name, int dim) {
  Norm n;
  n.gamma = add(name + ".gamma", Tensor({static_cast<std::size_t>(dim)}, 1.0));
  n.beta = add(name + ".beta", Tensor({static_cast<std::size_t>(dim)}, 0.0));
  return n;
}

void Model::build() {
  const int d = config_.d_model;
  const auto ud = static_cast<std::size_t>(d);
  {
    Rng rng(config_.seed, "init/embed");
    Tensor e = Tensor::matrix(static_cast<std::size_t>(config_.vocab_size), ud);
    for (double& v : e.data()) v = rng.normal(0.0, 0.02);
    embedding_ = add("embed", std::move(e));
  }
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "enc." + std::to_string(l) + ".";
    EncoderLayer e;
    e.ln1 = make_norm(p + "ln1", d);
    e.q = make_linear(p + "attn.q", d, d);
    e.k = make_linear(p + "attn.k", d, d);
    e.v = make_linear(p + "attn.v", d, d);
    e.o = make_linear(p + "attn.o", d, d);
    e.ln2 = make_norm(p + "ln2", d);
    e.ff1 = make_linear(p + "ff1", d, config_.d_ff);
    e.ff2 = make_linear(p + "ff2", config_.d_ff, d);
    encoder_.push_back(e);
  }
  enc_final_ = make_norm("enc.final", d);
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "dec." + std::to_string(l) + ".";
    DecoderLayer x;
    x.ln_self = make_norm(p + "ln_self", d);
    x.sq = make_linear(p + "self.q", d, d);
    x.sk = make_linear(p + "self.k", d, d);
    x.sv = make_linear(p + "self.v", d, d);
    x.so = make_linear(p + "self.o", d, d);
    if (config_.pe == posenc::Scheme::rel)
      x.rel_bias = add(p + "rel_bias", Tensor::matrix(3, static_cast<std::size_t>(config_.n_heads)));
    x.ln_cross = make_norm(p + "ln_cross", d);
    x.cq = make_linear(p + "cross.q", d, d);
    x.ck = make_linear(p + "cross.k", d, d);
    x.cv = make_linear(p + "cross.v", d, d);
    x.co = make_linear(p + "cross.o", d, d);
    x.ln_ff = make_norm(p + "ln_ff", d);
    x.ff1 = make_linear(p + "ff1", d, config_.d_ff);
    x.ff2 = make_linear(p + "ff2", config_.d_ff, d);
    decoder_.push_back(x);
  }
  dec_final_ = make_norm("dec.final", d);
  if (config_.head == HeadKind::insertion) slot_ = make_linear("slot", 2 * d, d);
  if (config_.pe == posenc::Scheme::fpe && config_.head == HeadKind::insertion) {
    Rng rng(config_.seed, "init/fpe");
    Tensor pb({ud}), pe({ud});
    for (double& v : pb.data()) v = rng.normal(0.0, 0.02);
    for (double& v : pe.data()) v = rng.normal(0.0, 0.02);
    p_b_ = add("fpe.p_b", std::move(pb));
    p_e_ = add("fpe.p_e", std::move(pe));
    // Averaging map plus noise: starts close to "midpoint of the neighbours".
    Tensor w = Tensor::matrix(2 * ud, ud);
    for (std::size_t i = 0; i < ud; ++i) {
      w.at(i, i) = 0.5;
      w.at(ud + i, i) = 0.5;
    }
    for (double& v : w.data()) v += rng.normal(0.0, 0.01);
    Tensor b({ud});
    for (double& v : b.data()) v = rng.normal(0.0, 0.01);
    fpe_.w = add("fpe.w", std::move(w));
    fpe_.b = add("fpe.b", std::move(b));
  }
  output_mask_.assign(static_cast<std::size_t>(config_.vocab_size), 0);
  for (int id = vocab::kFirstContent; id < config_.vocab_size; ++id)
    output_mask_[static_cast<std::size_t>(id)] = 1;
  output_mask_[config_.head == HeadKind::insertion ? vocab::kEndOfSlot : vocab::kEos] = 1;
}

std::vector<Parameter*> Model::parameters() const {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

Parameter* Model::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

Var Model::apply(Graph& g, const Linear& l, Var x) const {
  return ops::linear(x, g.param(*l.w), g.param(*l.b));
}

Var Model::apply(Graph& g, const Norm& n, Var x) const {
  return ops::layer_norm(x, g.param(*n.gamma), g.param(*n.beta));
}

Var Model::feed_forward(Graph& g, const Linear& ff1, const Linear& ff2, Var x) const {
  return apply(g, ff2, ops::relu(apply(g, ff1, x)));
}

Var Model::embed(Graph& g, std::span<const int> tokens) const {
  std::vector<std::size_t> idx;
  idx.reserve(tokens.size());
  for (int t : tokens) {
    if (t < 0 || t >= config_.vocab_size)
      throw Error("token id " + std::to_string(t) + " outside vocabulary of size " +
                  std::to_string(config_.vocab_size));
    idx.push_back(static_cast<std::size_t>(t));
  }
  return ops::scale(ops::gather_rows(g.param(*embedding_), std::move(idx)),
                    std::sqrt(static_cast<double>(config_.d_model)));
}

Var Model::abs_positions(Graph& g, std::span<const long> surface) const {
  const auto d = static_cast<std::size_t>(config_.d_model);
  Tensor pos = Tensor::matrix(surface.size(), d);
  for (std::size_t i = 0; i < surface.size(); ++i) {
    const auto e = posenc::abs_encoding(static_cast<double>(surface[i]), d);
    std::copy(e.begin(), e.end(), pos.ptr() + i * d);
  }
  return g.constant(std::move(pos));
}

Var Model::fpe_boundary(Graph& g) const {
  if (!p_b_) throw Error("model has no FPE parameters");
  const auto d = static_cast<std::size_t>(config_.d_model);
  Var pb = g.param(*p_b_);
  Var pe = g.param(*p_e_);
  // Parameters are stored as vectors; view them as 1 x d rows.
  Var rows[2] = {ops::gather_rows(pb, {0}), ops::gather_rows(pe, {0})};
  (void)d;
  return ops::concat_rows(rows);
}

Var Model::fpe_combine(Graph& g, Var table, std::vector<std::size_t> left,
                       std::vector<std::size_t> right) const {
  if (!p_b_) throw Error("model has no FPE parameters");
  ComponentScope scope(Component::fpe_linear);
  Var l = ops::gather_rows(table, std::move(left));
  Var r = ops::gather_rows(table, std::move(right));
  return apply(g, fpe_, ops::concat_cols(l, r));
}

EncodedBatch Model::encode_batch(Graph& g, std::span<const std::vector<int>> sources,
                                 std::size_t pad_to) const {
  EncodedBatch out;
  std::vector<int> tokens;
  std::vector<long> surface;
  std::vector<ops::AttentionSegment> segs;
  for (const auto& src : sources) {
    if (src.empty()) throw Error("encode: empty source");
    if (pad_to > 0 && src.size() > pad_to) throw Error("encode: source longer than padded length");
    const std::size_t len = pad_to > 0 ? pad_to : src.size();
    ops::AttentionSegment s;
    s.q_begin = s.k_begin = tokens.size();
    s.q_len = s.k_len = len;
    if (len > src.size()) {
      s.mask.assign(len * len, 0);
      for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = 0; j < src.size(); ++j) s.mask[i * len + j] = 1;
    }
    out.begin.push_back(tokens.size());
    out.len.push_back(len);
    out.real.push_back(src.size());
    for (std::size_t i = 0; i < len; ++i) {
      tokens.push_back(i < src.size() ? src[i] : vocab::kPad);
      surface.push_back(static_cast<long>(i));
    }
    segs.push_back(std::move(s));
  }
  {
    ComponentScope scope(Component::encoder);
    Var x = ops::add(embed(g, tokens), abs_positions(g, surface));
    for (const auto& layer : encoder_) {
      Var h = apply(g, layer.ln1, x);
      Var a = ops::attention(apply(g, layer.q, h), apply(g, layer.k, h), apply(g, layer.v, h), segs,
                             config_.n_heads);
      x = ops::add(x, apply(g, layer.o, a));
      x = ops::add(x, feed_forward(g, layer.ff1, layer.ff2, apply(g, layer.ln2, x)));
    }
    out.memory = apply(g, enc_final_, x);
  }
  ComponentScope scope(Component::cross_attn);
  for (const auto& layer : decoder_) {
    out.keys.push_back(apply(g, layer.ck, out.memory));
    out.values.push_back(apply(g, layer.cv, out.memory));
  }
  return out;
}

StackOutput Model::decoder_stack(Graph& g, Var x, std::span<const SelfAttnPlan> self,
                                 std::span<const CrossAttnPlan> cross,
                                 std::span<const Var> mem_keys, std::span<const Var> mem_values) const {
  if (self.size() != cross.size()) throw ShapeError("decoder_stack: plan count mismatch");
  const auto L = static_cast<std::size_t>(config_.n_layers);
  if (mem_keys.size() != L || mem_values.size() != L)
    throw ShapeError("decoder_stack: expected one memory projection per layer");

  std::size_t total_new = 0, total_cached = 0;
  for (const auto& p : self) {
    const std::size_t c = p.cache ? p.cache->size() : 0;
    const std::size_t k_len = c + p.n_new;
    if (!p.mask.empty() && p.mask.size() != p.n_new * k_len)
      throw ShapeError("decoder_stack: mask shape mismatch");
    if (!p.relation.empty() && p.relation.size() != p.n_new * k_len)
      throw ShapeError("decoder_stack: relation shape mismatch");
    total_new += p.n_new;
    total_cached += c;
  }
  if (x.rows() != total_new) throw ShapeError("decoder_stack: input rows do not match plans");

  // Self-attention keys are laid out per instance as [cached rows, new rows].
  std::vector<ops::AttentionSegment> self_segs, cross_segs;
  std::vector<std::size_t> key_index;  // into concat(cached_all, new_all)
  {
    std::size_t q_at = 0, cached_at = 0, k_at = 0;
    for (const auto& p : self) {
      const std::size_t c = p.cache ? p.cache->size() : 0;
      ops::AttentionSegment s;
      s.q_begin = q_at;
      s.q_len = p.n_new;
      s.k_begin = k_at;
      s.k_len = c + p.n_new;
      s.mask = p.mask;
      if (config_.pe == posenc::Scheme::rel) s.relation = p.relation;
      for (std::size_t i = 0; i < c; ++i) key_index.push_back(cached_at + i);
      for (std::size_t i = 0; i < p.n_new; ++i) key_index.push_back(total_cached + q_at + i);
      self_segs.push_back(std::move(s));
      q_at += p.n_new;
      cached_at += c;
      k_at += c + p.n_new;
    }
    q_at = 0;
    for (std::size_t i = 0; i < cross.size(); ++i) {
      ops::AttentionSegment s;
      s.q_begin = q_at;
      s.q_len = self[i].n_new;
      s.k_begin = cross[i].mem_begin;
      s.k_len = cross[i].mem_len;
      s.mask = cross[i].mask;
      cross_segs.push_back(std::move(s));
      q_at += self[i].n_new;
    }
  }
  if (config_.pe == posenc::Scheme::rel)
    for (const auto& s : self_segs)
      if (s.relation.empty() && s.q_len > 0)
        throw Error("decoder_stack: REL scheme requires relation matrices");

  StackOutput out;
  for (std::size_t l = 0; l < L; ++l) {
    const DecoderLayer& layer = decoder_[l];
    {
      ComponentScope scope(Component::self_attn);
      Var h = apply(g, layer.ln_self, x);
      Var q = apply(g, layer.sq, h);
      Var kn = apply(g, layer.sk, h);
      Var vn = apply(g, layer.sv, h);
      out.keys.push_back(kn);
      out.values.push_back(vn);
      Var k_all = kn, v_all = vn;
      if (total_cached > 0) {
        const auto d = static_cast<std::size_t>(config_.d_model);
        Tensor ck = Tensor::matrix(0, d), cv = Tensor::matrix(0, d);
        for (const auto& p : self)
          if (p.cache && p.cache->size() > 0) {
            ck.append_rows(p.cache->keys[l]);
            cv.append_rows(p.cache->values[l]);
          }
        Var kparts[2] = {g.constant(std::move(ck)), kn};
        Var vparts[2] = {g.constant(std::move(cv)), vn};
        k_all = ops::gather_rows(ops::concat_rows(kparts), key_index);
        v_all = ops::gather_rows(ops::concat_rows(vparts), key_index);
      }
      Var bias = layer.rel_bias ? g.param(*layer.rel_bias) : Var{};
      Var a = ops::attention(q, k_all, v_all, self_segs, config_.n_heads, bias);
      x = ops::add(x, apply(g, layer.so, a));
    }
    {
      ComponentScope scope(Component::cross_attn);
      Var h = apply(g, layer.ln_cross, x);
      Var a = ops::attention(apply(g, layer.cq, h), mem_keys[l], mem_values[l], cross_segs,
                             config_.n_heads);
      x = ops::add(x, apply(g, layer.co, a));
    }
    {
      ComponentScope scope(Component::feed_forward);
      x = ops::add(x, feed_forward(g, layer.ff1, layer.ff2, apply(g, layer.ln_ff, x)));
    }
  }
  out.hidden = apply(g, dec_final_, x);
  return out;
}

Var Model::slot_logits_graph(Graph& g, Var hidden, std::span<const std::size_t> left,
                             std::span<const std::size_t> right) const {
  if (config_.head != HeadKind::insertion) throw Error("slot logits need an insertion head");
  ComponentScope scope(Component::heads);
  Var l = ops::gather_rows(hidden, {left.begin(), left.end()});
  Var r = ops::gather_rows(hidden, {right.begin(), right.end()});
  Var s = apply(g, slot_, ops::concat_cols(l, r));
  return ops::matmul_nt(s, g.param(*embedding_));
}

Var Model::next_token_logits_graph(Graph& g, Var hidden) const {
  ComponentScope scope(Component::heads);
  return ops::matmul_nt(hidden, g.param(*embedding_));
}

Tensor Model::encode(std::span<const int> src) const {
  Graph g(false);
  std::vector<std::vector<int>> one{{src.begin(), src.end()}};
  return encode_batch(g, one).memory.value();
}

Tensor Model::decoder_forward(const Hypothesis& hyp, const Tensor& memory,
                              std::span<const unsigned char> mask, const posenc::FpeState* fpe) const {
  const std::size_t n = hyp.size();
  const std::size_t rows = n + 2;
  if (mask.size() != rows * rows)
    throw ShapeError("decoder_forward: mask must be " + std::to_string(rows) + "x" +
                     std::to_string(rows));
  if (hyp.steps.size() != n || hyp.pos_nodes.size() != n)
    throw ShapeError("decoder_forward: hypothesis fields have different lengths");
  Graph g(false);
  std::vector<int> tokens{vocab::kBos};
  tokens.insert(tokens.end(), hyp.tokens.begin(), hyp.tokens.end());
  tokens.push_back(vocab::kEos);
  std::vector<long> surface(rows);
  for (std::size_t i = 0; i < rows; ++i) surface[i] = static_cast<long>(i);

  Var x = embed(g, tokens);
  const auto d = static_cast<std::size_t>(config_.d_model);
  if (config_.pe == posenc::Scheme::abs) {
    x = ops::add(x, abs_positions(g, surface));
  } else if (config_.pe == posenc::Scheme::fpe) {
    if (!fpe) throw Error("decoder_forward: FPE scheme needs a position state");
    Tensor pos = Tensor::matrix(rows, d);
    for (std::size_t i = 0; i < rows; ++i) {
      const int id = i == 0 ? posenc::kSentinelB : i + 1 == rows ? posenc::kSentinelE : hyp.pos_nodes[i - 1];
      const auto e = fpe->embedding(id);
      std::copy(e.begin(), e.end(), pos.ptr() + i * d);
    }
    x = ops::add(x, g.constant(std::move(pos)));
  }
  SelfAttnPlan plan;
  plan.n_new = rows;
  plan.mask.assign(mask.begin(), mask.end());
  if (config_.pe == posenc::Scheme::rel) plan.relation = posenc::rel_matrix(surface, surface);
  CrossAttnPlan cross{0, memory.rows(), {}};
  Var mem = g.constant_ref(memory);
  std::vector<Var> mk, mv;
  {
    ComponentScope scope(Component::cross_attn);
    for (const auto& layer : decoder_) {
      mk.push_back(apply(g, layer.ck, mem));
      mv.push_back(apply(g, layer.cv, mem));
    }
  }
  SelfAttnPlan plans[1] = {std::move(plan)};
  CrossAttnPlan crosses[1] = {std::move(cross)};
  return decoder_stack(g, x, plans, crosses, mk, mv).hidden.value();
}

SlotPrediction Model::slot_logits(const Tensor& hidden) const {
  if (hidden.rows() < 2) throw ShapeError("slot_logits: need at least the BOS and EOS rows");
  Graph g(false);
  const std::size_t slots = hidden.rows() - 1;
  std::vector<std::size_t> left(slots), right(slots);
  for (std::size_t s = 0; s < slots; ++s) {
    left[s] = s;
    right[s] = s + 1;
  }
  Var logits = slot_logits_graph(g, g.constant_ref(hidden), left, right);
  return {ops::log_softmax(logits, output_mask_).value()};
}

Tensor Model::l2r_logits(std::span<const int> prefix, const Tensor& memory) const {
  if (config_.head != HeadKind::l2r) throw Error("l2r_logits needs an l2r head");
  Graph g(false);
  std::vector<int> tokens{vocab::kBos};
  tokens.insert(tokens.end(), prefix.begin(), prefix.end());
  std::vector<long> surface(tokens.size());
  for (std::size_t i = 0; i < surface.size(); ++i) surface[i] = static_cast<long>(i);
  Var x = ops::add(embed(g, tokens), abs_positions(g, surface));
  SelfAttnPlan plans[1];
  plans[0].n_new = tokens.size();
  plans[0].mask = causal_mask(tokens.size());
  if (config_.pe == posenc::Scheme::rel) plans[0].relation = posenc::rel_matrix(surface, surface);
  CrossAttnPlan crosses[1] = {{0, memory.rows(), {}}};
  Var mem = g.constant_ref(memory);
  std::vector<Var> mk, mv;
  {
    ComponentScope scope(Component::cross_attn);
    for (const auto& layer : decoder_) {
      mk.push_back(apply(g, layer.ck, mem));
      mv.push_back(apply(g, layer.cv, mem));
    }
  }
  Var h = decoder_stack(g, x, plans, crosses, mk, mv).hidden;
  return ops::log_softmax(next_token_logits_graph(g, h), output_mask_).value();
}

posenc::FpeState Model::make_fpe_state() const {
  if (!p_b_) throw Error("model has no FPE parameters");
  return posenc::FpeState(p_b_->value.storage(), p_e_->value.storage(), fpe_.w->value,
                          fpe_.b->value.storage());
}

}  // namespace fracpos

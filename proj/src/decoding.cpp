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

#include "fracpos/decoding.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "fracpos/error.hpp"
#include "fracpos/flops.hpp"
#include "fracpos/vocab.hpp"

namespace fracpos::decoding {

using flops::Component;
using flops::ComponentScope;
using Clock = std::chrono::steady_clock;

std::string_view mode_name(Mode m) { return m == Mode::recompute ? "recompute" : "incremental"; }

Mode parse_mode(std::string_view s) {
  if (s == "recompute") return Mode::recompute;
  if (s == "incremental") return Mode::incremental;
  throw Error("unknown decode mode '" + std::string(s) + "'");
}

std::string_view mask_kind_name(MaskKind m) {
  switch (m) {
    case MaskKind::automatic: return "auto";
    case MaskKind::full: return "full";
    case MaskKind::generation: return "generation";
  }
  return "?";
}

MaskKind parse_mask_kind(std::string_view s) {
  if (s == "auto") return MaskKind::automatic;
  if (s == "full") return MaskKind::full;
  if (s == "generation") return MaskKind::generation;
  throw Error("unknown mask '" + std::string(s) + "'");
}

namespace {

constexpr const char* kAbsIncremental = "ABS requires re-encoding; use recompute mode";

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::vector<long> iota_long(std::size_t n, long from = 0) {
  std::vector<long> v(n);
  std::iota(v.begin(), v.end(), from);
  return v;
}

// Encoder output for a group of sources, padded to the longest one.
struct BatchMemory {
  Tensor states;
  std::vector<Tensor> keys, values;
  std::vector<std::size_t> begin, len, real;
};

BatchMemory encode_group(const Model& model, std::span<const std::vector<int>> sources) {
  Graph g(false);
  std::size_t pad_to = 0;
  if (sources.size() > 1)
    for (const auto& s : sources) pad_to = std::max(pad_to, s.size());
  EncodedBatch enc = model.encode_batch(g, sources, pad_to);
  BatchMemory m;
  m.states = enc.memory.value();
  for (std::size_t l = 0; l < enc.keys.size(); ++l) {
    m.keys.push_back(enc.keys[l].value());
    m.values.push_back(enc.values[l].value());
  }
  m.begin = enc.begin;
  m.len = enc.len;
  m.real = enc.real;
  return m;
}

CrossAttnPlan cross_plan(const BatchMemory& mem, std::size_t i, std::size_t n_new) {
  CrossAttnPlan c{mem.begin[i], mem.len[i], {}};
  if (mem.real[i] < mem.len[i]) {
    c.mask.assign(n_new * mem.len[i], 0);
    for (std::size_t r = 0; r < n_new; ++r)
      std::fill_n(c.mask.begin() + static_cast<std::ptrdiff_t>(r * mem.len[i]), mem.real[i], 1);
  }
  return c;
}

// One instance's share of a packed decoder run.
struct RowsRequest {
  const DecoderCache* cache = nullptr;
  std::vector<int> tokens;
  Tensor fpe_positions;           // FPE
  std::vector<long> surface;      // ABS positions / REL relation of the new rows
  std::vector<long> key_surface;  // REL: surface of cached rows then new rows
  std::vector<unsigned char> mask;
  CrossAttnPlan cross;
};

StackOutput run_rows(const Model& model, Graph& g, std::vector<RowsRequest>& reqs,
                     std::span<const Var> mem_keys, std::span<const Var> mem_values) {
  const ModelConfig& cfg = model.config();
  std::vector<int> tokens;
  std::vector<long> surface;
  Tensor fpe_pos = Tensor::matrix(0, static_cast<std::size_t>(cfg.d_model));
  std::vector<SelfAttnPlan> self;
  std::vector<CrossAttnPlan> cross;
  for (auto& r : reqs) {
    tokens.insert(tokens.end(), r.tokens.begin(), r.tokens.end());
    surface.insert(surface.end(), r.surface.begin(), r.surface.end());
    if (cfg.pe == posenc::Scheme::fpe) fpe_pos.append_rows(r.fpe_positions);
    SelfAttnPlan p;
    p.n_new = r.tokens.size();
    p.cache = r.cache;
    p.mask = std::move(r.mask);
    if (cfg.pe == posenc::Scheme::rel) p.relation = posenc::rel_matrix(r.surface, r.key_surface);
    self.push_back(std::move(p));
    cross.push_back(std::move(r.cross));
  }
  // L2R decoders always add sinusoidal positions; insertion decoders add
  // them for ABS, node embeddings for FPE and nothing for REL.
  Var x = model.embed(g, tokens);
  if (cfg.head == HeadKind::l2r || cfg.pe == posenc::Scheme::abs)
    x = ops::add(x, model.abs_positions(g, surface));
  else if (cfg.pe == posenc::Scheme::fpe)
    x = ops::add(x, g.constant(std::move(fpe_pos)));
  return model.decoder_stack(g, x, self, cross, mem_keys, mem_values);
}

void append_to_cache(DecoderCache& cache, const StackOutput& out, std::size_t row0, std::size_t n,
                     int step) {
  const std::size_t L = out.keys.size();
  if (cache.keys.empty()) {
    const std::size_t d = out.hidden.cols();
    cache.keys.assign(L, Tensor::matrix(0, d));
    cache.values.assign(L, Tensor::matrix(0, d));
    cache.hidden = Tensor::matrix(0, d);
  }
  for (std::size_t r = row0; r < row0 + n; ++r) {
    for (std::size_t l = 0; l < L; ++l) {
      cache.keys[l].append_row(out.keys[l].value().row(r));
      cache.values[l].append_row(out.values[l].value().row(r));
    }
    cache.hidden.append_row(out.hidden.value().row(r));
    cache.steps.push_back(step);
  }
}

Tensor fpe_rows(const posenc::FpeState& fpe, std::span<const int> ids) {
  Tensor t = Tensor::matrix(0, fpe.dim());
  for (int id : ids) t.append_row(fpe.embedding(id));
  return t;
}

}  // namespace

Memory prepare_memory(const Model& model, std::span<const int> src) {
  std::vector<std::vector<int>> one{{src.begin(), src.end()}};
  BatchMemory b = encode_group(model, one);
  return {std::move(b.states), std::move(b.keys), std::move(b.values)};
}

void extend_cache(const Model& model, DecoderCache& cache, const NewRows& rows,
                  std::span<const long> cached_surface, const Memory& memory) {
  const ModelConfig& cfg = model.config();
  if (!posenc::permits_reuse(cfg.pe)) throw Error(kAbsIncremental);
  if (rows.tokens.empty()) return;
  if (cfg.pe == posenc::Scheme::rel) {
    if (cached_surface.size() != cache.size() || rows.surface.size() != rows.tokens.size())
      throw ShapeError("extend_cache: REL needs the surface index of every cached and new row");
  }
  if (cfg.pe == posenc::Scheme::fpe && rows.positions.rows() != rows.tokens.size())
    throw ShapeError("extend_cache: FPE needs one position row per new token");
  for (int s : cache.steps)
    if (s > rows.step) throw Error("extend_cache: rows must not predate cached rows");
  Graph g(false);
  std::vector<RowsRequest> reqs(1);
  RowsRequest& r = reqs[0];
  r.cache = &cache;
  r.tokens = rows.tokens;
  r.fpe_positions = rows.positions;
  r.surface = rows.surface;
  if (r.surface.empty()) r.surface = iota_long(rows.tokens.size());
  r.key_surface.assign(cached_surface.begin(), cached_surface.end());
  r.key_surface.insert(r.key_surface.end(), r.surface.begin(), r.surface.end());
  r.cross = {0, memory.states.rows(), {}};
  std::vector<Var> mk, mv;
  for (std::size_t l = 0; l < memory.keys.size(); ++l) {
    mk.push_back(g.constant_ref(memory.keys[l]));
    mv.push_back(g.constant_ref(memory.values[l]));
  }
  StackOutput out = run_rows(model, g, reqs, mk, mv);
  append_to_cache(cache, out, 0, rows.tokens.size(), rows.step);
}

int choose_slot(std::span<const double> logprobs, double eos_penalty) {
  int best = -1;
  double best_v = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < logprobs.size(); ++j) {
    double v = logprobs[j];
    if (std::isinf(v) && v < 0) continue;
    if (static_cast<int>(j) == vocab::kEndOfSlot) v -= eos_penalty;
    if (best < 0 || v > best_v) {
      best = static_cast<int>(j);
      best_v = v;
    }
  }
  if (best < 0) throw NumericError("slot has no finite outcome");
  return best;
}

namespace {

struct InsertionInstance {
  Hypothesis hyp;
  std::optional<posenc::FpeState> fpe;
  DecoderCache cache;
  std::vector<std::size_t> cache_row;  // boundary-extended surface index -> cache row
  std::vector<int> pending;            // surface indices (boundary-extended) not yet cached
  int pending_step = 0;
  Tensor slot_lp;                      // surface-ordered slot log-probs
  std::vector<unsigned char> slot_ok;
  DecodeResult result;
  bool done = false;
};

class InsertionEngine {
 public:
  InsertionEngine(const Model& model, const Options& options, const StepObserver& observer,
                  const SlotChooser& chooser)
      : model_(model), cfg_(model.config()), opt_(options), observer_(observer), chooser_(chooser) {
    if (cfg_.head != HeadKind::insertion) throw Error("insertion decoding needs an insertion model");
    if (opt_.mode == Mode::incremental && !posenc::permits_reuse(cfg_.pe)) throw Error(kAbsIncremental);
    mask_ = opt_.mask;
    if (mask_ == MaskKind::automatic)
      mask_ = cfg_.pe == posenc::Scheme::abs ? MaskKind::full : MaskKind::generation;
    if (opt_.mode == Mode::incremental && mask_ == MaskKind::full)
      throw Error("incremental decoding implies the generation-order mask");
    max_len_ = opt_.max_len > 0 ? opt_.max_len : cfg_.max_len;
    max_steps_ = opt_.max_steps > 0 ? opt_.max_steps : max_len_ + 2;
  }

  std::vector<DecodeResult> run(std::span<const std::vector<int>> sources) {
    const auto t0 = Clock::now();
    flops::set_step(0);
    mem_ = encode_group(model_, sources);
    std::vector<InsertionInstance> inst(sources.size());
    for (auto& in : inst) {
      if (cfg_.pe == posenc::Scheme::fpe) in.fpe = model_.make_fpe_state();
      in.result.mode = opt_.mode;
      in.pending = {0, 1};
      in.cache_row = {0, 1};
    }
    for (int step = 1; step <= max_steps_; ++step) {
      std::vector<std::size_t> active;
      for (std::size_t i = 0; i < inst.size(); ++i)
        if (!inst[i].done) active.push_back(i);
      if (active.empty()) break;
      flops::set_step(step);
      predict(inst, active);
      for (std::size_t i : active) {
        InsertionInstance& in = inst[i];
        if (observer_) observer_(StepView{i, step, in.hyp, in.slot_lp});
        apply(in, i, step);
        if (!in.done && step == max_steps_) {
          in.done = true;
          in.result.hit_max_steps = true;
        }
      }
    }
    const double ms = ms_since(t0);
    std::vector<DecodeResult> out;
    for (auto& in : inst) {
      in.result.tokens = in.hyp.tokens;
      in.result.steps = in.hyp.steps;
      in.result.out_len = in.hyp.size();
      in.result.wall_time_ms = ms / static_cast<double>(inst.size());
      out.push_back(std::move(in.result));
    }
    fpe_dag_ = inst.size() == 1 && inst[0].fpe ? inst[0].fpe->export_dag() : std::string();
    return out;
  }

  const std::string& fpe_dag() const { return fpe_dag_; }

 private:
  std::vector<int> boundary_tokens(const Hypothesis& h) const {
    std::vector<int> t{vocab::kBos};
    t.insert(t.end(), h.tokens.begin(), h.tokens.end());
    t.push_back(vocab::kEos);
    return t;
  }

  std::vector<int> boundary_nodes(const Hypothesis& h) const {
    std::vector<int> t{posenc::kSentinelB};
    t.insert(t.end(), h.pos_nodes.begin(), h.pos_nodes.end());
    t.push_back(posenc::kSentinelE);
    return t;
  }

  void predict(std::vector<InsertionInstance>& inst, const std::vector<std::size_t>& active) {
    Graph g(false);
    std::vector<Var> mk, mv;
    for (std::size_t l = 0; l < mem_.keys.size(); ++l) {
      mk.push_back(g.constant_ref(mem_.keys[l]));
      mv.push_back(g.constant_ref(mem_.values[l]));
    }
    std::vector<RowsRequest> reqs;
    std::vector<std::size_t> row0;
    std::size_t rows = 0;
    for (std::size_t i : active) {
      InsertionInstance& in = inst[i];
      RowsRequest r;
      const auto toks = boundary_tokens(in.hyp);
      if (opt_.mode == Mode::recompute) {
        r.tokens = toks;
        r.surface = iota_long(toks.size());
        r.key_surface = r.surface;
        if (in.fpe) r.fpe_positions = fpe_rows(*in.fpe, boundary_nodes(in.hyp));
        if (mask_ == MaskKind::generation) {
          std::vector<int> steps{0};
          steps.insert(steps.end(), in.hyp.steps.begin(), in.hyp.steps.end());
          steps.push_back(0);
          r.mask = generation_order_mask(steps);
        }
      } else {
        r.cache = &in.cache;
        std::vector<long> cached_surface(in.cache.size());
        for (std::size_t s = 0; s < in.cache_row.size(); ++s)
          if (in.cache_row[s] < in.cache.size()) cached_surface[in.cache_row[s]] = static_cast<long>(s);
        const auto nodes = boundary_nodes(in.hyp);
        std::vector<int> pending_nodes;
        for (int s : in.pending) {
          r.tokens.push_back(toks[static_cast<std::size_t>(s)]);
          r.surface.push_back(s);
          pending_nodes.push_back(nodes[static_cast<std::size_t>(s)]);
        }
        if (in.fpe) r.fpe_positions = fpe_rows(*in.fpe, pending_nodes);
        r.key_surface = cached_surface;
        r.key_surface.insert(r.key_surface.end(), r.surface.begin(), r.surface.end());
      }
      r.cross = cross_plan(mem_, i, r.tokens.size());
      row0.push_back(rows);
      rows += r.tokens.size();
      reqs.push_back(std::move(r));
    }
    StackOutput out = run_rows(model_, g, reqs, mk, mv);

    // Collect the slots that need fresh log-probabilities.
    std::vector<std::size_t> left, right;
    std::vector<std::pair<std::size_t, std::size_t>> owners;  // (instance, slot)
    Var table = out.hidden;
    if (opt_.mode == Mode::incremental) {
      Tensor all = Tensor::matrix(0, static_cast<std::size_t>(cfg_.d_model));
      std::vector<std::size_t> base;
      for (std::size_t a = 0; a < active.size(); ++a) {
        InsertionInstance& in = inst[active[a]];
        append_to_cache(in.cache, out, row0[a], reqs[a].tokens.size(), in.pending_step);
        in.pending.clear();
        base.push_back(all.rows());
        all.append_rows(in.cache.hidden);
      }
      table = g.constant(std::move(all));
      for (std::size_t a = 0; a < active.size(); ++a) {
        InsertionInstance& in = inst[active[a]];
        const std::size_t slots = in.hyp.size() + 1;
        if (in.slot_ok.size() != slots) in.slot_ok.assign(slots, 0);
        for (std::size_t s = 0; s < slots; ++s) {
          if (opt_.cache_slots && in.slot_ok[s]) continue;
          left.push_back(base[a] + in.cache_row[s]);
          right.push_back(base[a] + in.cache_row[s + 1]);
          owners.emplace_back(active[a], s);
        }
      }
    } else {
      for (std::size_t a = 0; a < active.size(); ++a) {
        InsertionInstance& in = inst[active[a]];
        const std::size_t slots = in.hyp.size() + 1;
        for (std::size_t s = 0; s < slots; ++s) {
          left.push_back(row0[a] + s);
          right.push_back(row0[a] + s + 1);
          owners.emplace_back(active[a], s);
        }
      }
    }
    Tensor lp;
    if (!owners.empty())
      lp = ops::log_softmax(model_.slot_logits_graph(g, table, left, right), model_.output_mask()).value();
    const std::size_t V = static_cast<std::size_t>(cfg_.vocab_size);
    for (std::size_t i : active) {
      InsertionInstance& in = inst[i];
      const std::size_t slots = in.hyp.size() + 1;
      if (in.slot_lp.rank() != 2 || in.slot_lp.rows() != slots || in.slot_lp.cols() != V)
        in.slot_lp = Tensor::matrix(slots, V);
    }
    for (std::size_t r = 0; r < owners.size(); ++r) {
      InsertionInstance& in = inst[owners[r].first];
      const auto src = lp.row(r);
      std::copy(src.begin(), src.end(), in.slot_lp.row(owners[r].second).begin());
      if (opt_.mode == Mode::incremental) in.slot_ok[owners[r].second] = 1;
    }
  }

  void apply(InsertionInstance& in, std::size_t index, int step) {
    const std::size_t n = in.hyp.size();
    const std::size_t slots = n + 1;
    std::vector<int> choice(slots);
    const StepView view{index, step, in.hyp, in.slot_lp};
    for (std::size_t s = 0; s < slots; ++s)
      choice[s] = chooser_ ? chooser_(view, s) : choose_slot(in.slot_lp.row(s), opt_.eos_penalty);

    const auto room = static_cast<std::size_t>(max_len_) - std::min(n, static_cast<std::size_t>(max_len_));
    Hypothesis next;
    std::vector<std::size_t> next_cache_row{in.cache_row[0]};
    std::vector<unsigned char> next_ok;
    Tensor next_lp = Tensor::matrix(0, in.slot_lp.cols());
    std::vector<int> pending;
    std::size_t inserted = 0;
    bool cut = false;
    const auto old_nodes = boundary_nodes(in.hyp);
    std::size_t fresh_row = in.cache.size();
    for (std::size_t s = 0; s < slots; ++s) {
      const int c = choice[s];
      if (c != vocab::kEndOfSlot) {
        if (c < vocab::kFirstContent || c >= cfg_.vocab_size)
          throw Error("slot chooser returned invalid id " + std::to_string(c));
      }
      const bool insert = c != vocab::kEndOfSlot && inserted < room;
      if (c != vocab::kEndOfSlot && !insert) cut = true;
      if (insert) {
        int node = -1;
        if (in.fpe) node = in.fpe->insert(old_nodes[s], old_nodes[s + 1], step);
        next.tokens.push_back(c);
        next.steps.push_back(step);
        next.pos_nodes.push_back(node);
        pending.push_back(static_cast<int>(next.tokens.size()));
        next_cache_row.push_back(fresh_row++);
        next_ok.push_back(0);
        next_ok.push_back(0);
        next_lp.append_row(in.slot_lp.row(s));
        next_lp.append_row(in.slot_lp.row(s));
        ++inserted;
      } else {
        next_ok.push_back(s < in.slot_ok.size() ? in.slot_ok[s] : 0);
        next_lp.append_row(in.slot_lp.row(s));
      }
      if (s < n) {
        next.tokens.push_back(in.hyp.tokens[s]);
        next.steps.push_back(in.hyp.steps[s]);
        next.pos_nodes.push_back(in.hyp.pos_nodes[s]);
        next_cache_row.push_back(in.cache_row[s + 1]);
      }
    }
    next_cache_row.push_back(in.cache_row[n + 1]);
    if (cfg_.pe == posenc::Scheme::abs)
      for (std::size_t i = 0; i < next.pos_nodes.size(); ++i) next.pos_nodes[i] = static_cast<int>(i);

    in.result.n_steps = step;
    in.result.per_step.push_back(static_cast<int>(inserted));
    if (opt_.mode == Mode::incremental) {
      in.cache_row = std::move(next_cache_row);
      in.pending = std::move(pending);
      in.pending_step = step;
      in.slot_ok = std::move(next_ok);
      in.slot_lp = std::move(next_lp);
    }
    in.hyp = std::move(next);
    if (inserted == 0) in.done = true;
    if (cut) {
      in.done = true;
      in.result.truncated = true;
    }
  }

  const Model& model_;
  const ModelConfig& cfg_;
  Options opt_;
  const StepObserver& observer_;
  const SlotChooser& chooser_;
  MaskKind mask_;
  int max_len_ = 0;
  int max_steps_ = 0;
  BatchMemory mem_;
  std::string fpe_dag_;
};

}  // namespace

DecodeResult decode_insertion(const Model& model, std::span<const int> src, const Options& options,
                              const StepObserver& observer, const SlotChooser& chooser) {
  std::vector<std::vector<int>> one{{src.begin(), src.end()}};
  InsertionEngine engine(model, options, observer, chooser);
  return std::move(engine.run(one)[0]);
}

std::vector<DecodeResult> decode_insertion_batch(const Model& model,
                                                 std::span<const std::vector<int>> sources,
                                                 const Options& options, const StepObserver& observer,
                                                 const SlotChooser& chooser) {
  if (sources.empty()) return {};
  InsertionEngine engine(model, options, observer, chooser);
  return engine.run(sources);
}

std::string decode_fpe_dag(const Model& model, std::span<const int> src, const Options& options) {
  if (model.config().pe != posenc::Scheme::fpe) throw Error("position DAG export needs an FPE model");
  std::vector<std::vector<int>> one{{src.begin(), src.end()}};
  InsertionEngine engine(model, options, {}, {});
  engine.run(one);
  return engine.fpe_dag();
}

BeamHypothesis beam_search(const BeamScorer& score, int beam_size, int max_len, int eos) {
  if (beam_size < 1) throw Error("beam_search: beam size must be >= 1");
  if (max_len < 0) throw Error("beam_search: max_len must be >= 0");
  struct Live {
    std::vector<int> tokens;
    double logprob;
  };
  std::vector<Live> live{{{}, 0.0}};
  std::vector<BeamHypothesis> done;
  if (max_len == 0) return {{}, 0.0, false};
  while (!live.empty()) {
    std::vector<std::vector<int>> prefixes;
    for (const auto& l : live) prefixes.push_back(l.tokens);
    const auto rows = score(prefixes);
    if (rows.size() != live.size()) throw Error("beam_search: scorer returned the wrong row count");
    struct Cand {
      double logprob;
      std::size_t beam;
      int id;
    };
    std::vector<Cand> cands;
    for (std::size_t b = 0; b < live.size(); ++b)
      for (std::size_t j = 0; j < rows[b].size(); ++j)
        if (std::isfinite(rows[b][j])) cands.push_back({live[b].logprob + rows[b][j], b, static_cast<int>(j)});
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.logprob != b.logprob) return a.logprob > b.logprob;
      return a.beam != b.beam ? a.beam < b.beam : a.id < b.id;
    });
    if (cands.size() > static_cast<std::size_t>(beam_size)) cands.resize(static_cast<std::size_t>(beam_size));
    std::vector<Live> next;
    for (const auto& c : cands) {
      if (c.id == eos) {
        done.push_back({live[c.beam].tokens, c.logprob, true});
        continue;
      }
      auto t = live[c.beam].tokens;
      t.push_back(c.id);
      if (static_cast<int>(t.size()) >= max_len)
        done.push_back({std::move(t), c.logprob, false});
      else
        next.push_back({std::move(t), c.logprob});
    }
    live = std::move(next);
    // Scores only fall as hypotheses grow, so a finished hypothesis that
    // beats every live one cannot be overtaken.
    double best_done = -std::numeric_limits<double>::infinity();
    for (const auto& d : done) best_done = std::max(best_done, d.logprob);
    double best_live = -std::numeric_limits<double>::infinity();
    for (const auto& l : live) best_live = std::max(best_live, l.logprob);
    if (!done.empty() && best_done >= best_live) break;
  }
  if (done.empty()) throw Error("beam_search: no hypothesis finished");
  return *std::max_element(done.begin(), done.end(), [](const BeamHypothesis& a, const BeamHypothesis& b) {
    return a.logprob < b.logprob;
  });
}

namespace {

// Next-token log-probabilities of an L2R model, with one causal cache per
// prefix. Caches of prefixes that are no longer live are dropped.
class L2RScorer {
 public:
  L2RScorer(const Model& model, const Memory& memory) : model_(model), memory_(memory) {}

  std::vector<std::vector<double>> operator()(std::span<const std::vector<int>> prefixes) {
    std::map<std::vector<int>, Entry> next;
    std::vector<std::vector<double>> out;
    for (const auto& p : prefixes) {
      auto it = next.find(p);
      if (it == next.end()) it = next.emplace(p, extend(p)).first;
      out.push_back(it->second.logprobs);
    }
    entries_ = std::move(next);
    return out;
  }

 private:
  struct Entry {
    DecoderCache cache;
    std::vector<double> logprobs;
  };

  Entry extend(const std::vector<int>& prefix) {
    Entry e;
    int token = vocab::kBos;
    if (!prefix.empty()) {
      std::vector<int> parent(prefix.begin(), prefix.end() - 1);
      auto it = entries_.find(parent);
      if (it == entries_.end()) throw Error("L2R scorer: parent prefix not cached");
      e.cache = it->second.cache;
      token = prefix.back();
    }
    const auto pos = static_cast<long>(prefix.size());
    Graph g(false);
    std::vector<RowsRequest> reqs(1);
    reqs[0].cache = &e.cache;
    reqs[0].tokens = {token};
    reqs[0].surface = {pos};
    reqs[0].key_surface = iota_long(prefix.size() + 1);
    reqs[0].cross = {0, memory_.states.rows(), {}};
    std::vector<Var> mk, mv;
    for (std::size_t l = 0; l < memory_.keys.size(); ++l) {
      mk.push_back(g.constant_ref(memory_.keys[l]));
      mv.push_back(g.constant_ref(memory_.values[l]));
    }
    StackOutput out = run_rows(model_, g, reqs, mk, mv);
    const Tensor lp =
        ops::log_softmax(model_.next_token_logits_graph(g, out.hidden), model_.output_mask()).value();
    e.logprobs.assign(lp.data().begin(), lp.data().end());
    append_to_cache(e.cache, out, 0, 1, static_cast<int>(pos));
    return e;
  }

  const Model& model_;
  const Memory& memory_;
  std::map<std::vector<int>, Entry> entries_;
};

}  // namespace

DecodeResult decode_l2r(const Model& model, std::span<const int> src, int beam_size, int max_len) {
  if (model.config().head != HeadKind::l2r) throw Error("decode_l2r needs an l2r model");
  if (max_len <= 0) max_len = model.config().max_len;
  const auto t0 = Clock::now();
  flops::set_step(0);
  const Memory memory = prepare_memory(model, src);
  int calls = 0;
  auto run = [&](int beam) {
    L2RScorer scorer(model, memory);
    return beam_search(
        [&](std::span<const std::vector<int>> prefixes) {
          flops::set_step(++calls);
          return scorer(prefixes);
        },
        beam, max_len, vocab::kEos);
  };
  BeamHypothesis best = run(beam_size);
  if (beam_size > 1) {
    BeamHypothesis greedy = run(1);
    if (greedy.logprob > best.logprob) best = std::move(greedy);
  }
  DecodeResult r;
  r.mode = Mode::incremental;
  r.tokens = std::move(best.tokens);
  r.out_len = r.tokens.size();
  r.n_steps = static_cast<int>(r.out_len) + (best.finished ? 1 : 0);
  r.truncated = !best.finished;
  r.steps.resize(r.out_len);
  std::iota(r.steps.begin(), r.steps.end(), 1);
  r.per_step.assign(r.out_len, 1);
  if (best.finished) r.per_step.push_back(0);
  r.wall_time_ms = ms_since(t0);
  return r;
}

namespace {

// Greedy L2R over a group of sources, one packed forward per step.
std::vector<DecodeResult> l2r_greedy_batch(const Model& model, std::span<const std::vector<int>> sources,
                                           int max_len) {
  const auto t0 = Clock::now();
  flops::set_step(0);
  BatchMemory mem = encode_group(model, sources);
  const std::size_t n = sources.size();
  std::vector<DecoderCache> caches(n);
  std::vector<std::vector<int>> out(n);
  std::vector<bool> done(n, false), finished(n, false);
  for (int step = 1;; ++step) {
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < n; ++i)
      if (!done[i]) active.push_back(i);
    if (active.empty()) break;
    flops::set_step(step);
    Graph g(false);
    std::vector<Var> mk, mv;
    for (std::size_t l = 0; l < mem.keys.size(); ++l) {
      mk.push_back(g.constant_ref(mem.keys[l]));
      mv.push_back(g.constant_ref(mem.values[l]));
    }
    std::vector<RowsRequest> reqs;
    for (std::size_t i : active) {
      RowsRequest r;
      r.cache = &caches[i];
      r.tokens = {out[i].empty() ? vocab::kBos : out[i].back()};
      r.surface = {static_cast<long>(out[i].size())};
      r.key_surface = iota_long(out[i].size() + 1);
      r.cross = cross_plan(mem, i, 1);
      reqs.push_back(std::move(r));
    }
    StackOutput st = run_rows(model, g, reqs, mk, mv);
    const Tensor lp =
        ops::log_softmax(model.next_token_logits_graph(g, st.hidden), model.output_mask()).value();
    for (std::size_t a = 0; a < active.size(); ++a) {
      const std::size_t i = active[a];
      append_to_cache(caches[i], st, a, 1, step - 1);
      const auto row = lp.row(a);
      const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      if (best == vocab::kEos) {
        done[i] = finished[i] = true;
      } else {
        out[i].push_back(best);
        if (static_cast<int>(out[i].size()) >= max_len) done[i] = true;
      }
    }
  }
  const double ms = ms_since(t0);
  std::vector<DecodeResult> results(n);
  for (std::size_t i = 0; i < n; ++i) {
    DecodeResult& r = results[i];
    r.mode = Mode::incremental;
    r.tokens = std::move(out[i]);
    r.out_len = r.tokens.size();
    r.n_steps = static_cast<int>(r.out_len) + (finished[i] ? 1 : 0);
    r.truncated = !finished[i];
    r.steps.resize(r.out_len);
    std::iota(r.steps.begin(), r.steps.end(), 1);
    r.per_step.assign(r.out_len, 1);
    if (finished[i]) r.per_step.push_back(0);
    r.wall_time_ms = ms / static_cast<double>(n);
  }
  return results;
}

}  // namespace

BatchPlan plan_batches(std::span<const std::vector<int>> sources, std::size_t token_budget) {
  std::vector<std::size_t> order(sources.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sources[a].size() < sources[b].size(); });
  BatchPlan plan;
  std::size_t used = 0;
  for (std::size_t i : order) {
    const std::size_t len = sources[i].size();
    if (len > token_budget)
      throw Error("source of length " + std::to_string(len) + " exceeds the token budget " +
                  std::to_string(token_budget));
    if (plan.batches.empty() || used + len > token_budget) {
      plan.batches.emplace_back();
      used = 0;
    }
    plan.batches.back().push_back(i);
    used += len;
  }
  return plan;
}

BatchDecodeOutput batch_decode(const Model& model, std::span<const std::vector<int>> sources,
                               std::size_t token_budget, const Options& options) {
  const BatchPlan plan = plan_batches(sources, token_budget);
  BatchDecodeOutput out;
  out.results.resize(sources.size());
  for (const auto& members : plan.batches) {
    std::vector<std::vector<int>> group;
    for (std::size_t i : members) group.push_back(sources[i]);
    const auto t0 = Clock::now();
    std::vector<DecodeResult> res;
    if (model.config().head == HeadKind::l2r) {
      res = l2r_greedy_batch(model, group, options.max_len > 0 ? options.max_len : model.config().max_len);
    } else {
      res = decode_insertion_batch(model, group, options);
    }
    BatchRun run{members, ms_since(t0), 0};
    for (std::size_t j = 0; j < members.size(); ++j) {
      run.steps = std::max(run.steps, res[j].n_steps);
      res[j].wall_time_ms = run.latency_ms / static_cast<double>(members.size());
      out.results[members[j]] = std::move(res[j]);
    }
    out.batches.push_back(std::move(run));
  }
  return out;
}

}  // namespace fracpos::decoding

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
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <vector>

#include "fracpos/decoding.hpp"
#include "fracpos/error.hpp"
#include "fracpos/rng.hpp"
#include "fracpos/vocab.hpp"

using namespace fracpos;
using namespace fracpos::decoding;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

ModelConfig small(posenc::Scheme pe, HeadKind head = HeadKind::insertion) {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 32;
  c.vocab_size = 24;
  c.max_len = 20;
  c.pe = pe;
  c.head = head;
  c.seed = 3;
  return c;
}

std::vector<std::vector<int>> random_sources(std::size_t n, std::uint64_t seed, int lo = 1, int hi = 9) {
  Rng rng(seed, "sources");
  std::vector<std::vector<int>> out(n);
  for (auto& s : out) {
    s.resize(static_cast<std::size_t>(rng.range(lo, hi)));
    for (int& t : s) t = static_cast<int>(rng.range(vocab::kFirstContent, 23));
  }
  return out;
}

// Chooses the centre token of each slot's missing span of `targets[instance]`
// (upper middle for even spans); tokens of a target must be distinct.
SlotChooser oracle(const std::vector<std::vector<int>>& targets) {
  return [&targets](const StepView& v, std::size_t slot) {
    const auto& tgt = targets[v.instance];
    auto index_of = [&](int tok) {
      return static_cast<long>(std::find(tgt.begin(), tgt.end(), tok) - tgt.begin());
    };
    const long left = slot == 0 ? -1 : index_of(v.hyp.tokens[slot - 1]);
    const long right = slot == v.hyp.size() ? static_cast<long>(tgt.size()) : index_of(v.hyp.tokens[slot]);
    const long m = right - left - 1;
    if (m == 0) return vocab::kEndOfSlot;
    return tgt[static_cast<std::size_t>(left + 1 + m / 2)];
  };
}

std::vector<int> distinct_target(std::size_t n) {
  std::vector<int> t(n);
  std::iota(t.begin(), t.end(), vocab::kFirstContent);
  return t;
}

}  // namespace

TEST_CASE("slot choice applies the END penalty") {
  std::vector<double> lp(8, kNegInf);
  lp[vocab::kEndOfSlot] = -0.2;
  lp[5] = -0.5;
  CHECK(choose_slot(lp, 0.0) == vocab::kEndOfSlot);
  CHECK(choose_slot(lp, 0.5) == 5);
  lp[6] = -0.5;
  CHECK(choose_slot(lp, 0.5) == 5);  // ties go to the smaller id
  std::vector<double> none(8, kNegInf);
  CHECK_THROWS_AS(choose_slot(none, 0.0), NumericError);
}

TEST_CASE("all END on the first step finishes with nothing inserted") {
  const Model m(small(posenc::Scheme::fpe));
  const auto res = decode_insertion(m, std::vector<int>{5, 6}, Options{}, {},
                                    [](const StepView&, std::size_t) { return vocab::kEndOfSlot; });
  CHECK(res.tokens.empty());
  CHECK(res.n_steps == 1);
  CHECK(res.out_len == 0);
}

TEST_CASE("first insertion into the empty hypothesis") {
  const Model m(small(posenc::Scheme::fpe));
  Options o;
  o.max_steps = 1;
  const auto res = decode_insertion(m, std::vector<int>{5}, o, {},
                                    [](const StepView&, std::size_t) { return 9; });
  CHECK(res.tokens == std::vector<int>{9});
  CHECK(res.hit_max_steps);
  const std::string dag = decode_fpe_dag(m, std::vector<int>{5}, Options{});
  CHECK(dag.rfind("0 1 B E", 0) == 0);
}

TEST_CASE("balanced oracle inserts 1, 2, 4 tokens for a length-7 target") {
  const std::vector<std::vector<int>> targets{distinct_target(7)};
  for (auto pe : {posenc::Scheme::abs, posenc::Scheme::rel, posenc::Scheme::fpe}) {
    const Model m(small(pe));
    Options o;
    o.mode = pe == posenc::Scheme::abs ? Mode::recompute : Mode::incremental;
    const auto res = decode_insertion(m, std::vector<int>{5}, o, {}, oracle(targets));
    CHECK(res.tokens == targets[0]);
    CHECK(res.per_step == std::vector<int>{1, 2, 4, 0});
    CHECK(res.n_steps == 4);
  }
}

TEST_CASE("step count bounds under arbitrary choices") {
  const Model m(small(posenc::Scheme::rel));
  Rng rng(2, "choices");
  for (int trial = 0; trial < 60; ++trial) {
    const double p_end = 0.15 + 0.7 * rng.uniform();
    const auto chooser = [&](const StepView&, std::size_t) {
      return rng.uniform() < p_end ? vocab::kEndOfSlot : static_cast<int>(rng.range(4, 23));
    };
    Options o;
    o.max_len = 16;
    o.max_steps = 100;
    const auto res = decode_insertion(m, std::vector<int>{5, 7}, o, {}, chooser);
    if (res.truncated) continue;
    const auto n = static_cast<double>(res.out_len);
    CHECK(res.n_steps >= static_cast<int>(std::ceil(std::log2(n + 1.0))) + 1);
    CHECK(res.n_steps <= static_cast<int>(res.out_len) + 1);
  }
}

TEST_CASE("incremental and recompute engines agree step by step") {
  const auto sources = random_sources(12, 5);
  for (auto pe : {posenc::Scheme::rel, posenc::Scheme::fpe}) {
    const Model m(small(pe));
    for (bool cache_slots : {true, false}) {
      for (const auto& src : sources) {
        std::vector<Tensor> inc, rec;
        Options a;
        a.mode = Mode::incremental;
        a.cache_slots = cache_slots;
        a.eos_penalty = 2.0;  // longer outputs from an untrained model
        Options b = a;
        b.mode = Mode::recompute;
        b.mask = MaskKind::generation;
        const auto ra = decode_insertion(m, src, a, [&](const StepView& v) { inc.push_back(v.logprobs); });
        const auto rb = decode_insertion(m, src, b, [&](const StepView& v) { rec.push_back(v.logprobs); });
        CHECK(ra.tokens == rb.tokens);
        REQUIRE(inc.size() == rec.size());
        double diff = 0;
        for (std::size_t s = 0; s < inc.size(); ++s)
          for (std::size_t i = 0; i < inc[s].size(); ++i)
            if (std::isfinite(inc[s][i])) diff = std::max(diff, std::abs(inc[s][i] - rec[s][i]));
        CHECK(diff <= 1e-9);
      }
    }
  }
}

TEST_CASE("ABS refuses incremental decoding") {
  const Model m(small(posenc::Scheme::abs));
  Options o;
  o.mode = Mode::incremental;
  CHECK_THROWS_WITH_AS(decode_insertion(m, std::vector<int>{5}, o), "ABS requires re-encoding; use recompute mode",
                       Error);
  DecoderCache cache;
  const Memory mem = prepare_memory(m, std::vector<int>{5});
  CHECK_THROWS_AS(extend_cache(m, cache, NewRows{{vocab::kBos}, 0, {}, {}}, {}, mem), Error);
}

TEST_CASE("decoder cache: append-only and exact against a full forward") {
  for (auto pe : {posenc::Scheme::rel, posenc::Scheme::fpe}) {
    const Model m(small(pe));
    const std::vector<int> src{5, 9, 11};
    const Memory mem = prepare_memory(m, src);
    std::optional<posenc::FpeState> fpe;
    if (pe == posenc::Scheme::fpe) fpe = m.make_fpe_state();
    auto positions = [&](std::vector<int> ids) {
      Tensor t = Tensor::matrix(0, 16);
      if (!fpe) return t;
      for (int id : ids) t.append_row(fpe->embedding(id));
      return t;
    };
    DecoderCache cache;
    extend_cache(m, cache, {{vocab::kBos, vocab::kEos}, 0, positions({posenc::kSentinelB, posenc::kSentinelE}), {0, 1}},
                 {}, mem);
    const DecoderCache boundary = cache;
    extend_cache(m, cache, {}, std::vector<long>{0, 1}, mem);
    CHECK(cache.hidden.storage() == boundary.hidden.storage());

    // b at step 1; a and c at step 2.
    int nb = -1, na = -1, nc = -1;
    if (fpe) nb = fpe->insert(posenc::kSentinelB, posenc::kSentinelE, 1);
    extend_cache(m, cache, {{7}, 1, positions({nb}), {1}}, std::vector<long>{0, 2}, mem);
    for (std::size_t i = 0; i < boundary.hidden.size(); ++i) CHECK(cache.hidden[i] == boundary.hidden[i]);
    for (std::size_t l = 0; l < cache.keys.size(); ++l)
      for (std::size_t i = 0; i < boundary.keys[l].size(); ++i) CHECK(cache.keys[l][i] == boundary.keys[l][i]);
    if (fpe) {
      na = fpe->insert(posenc::kSentinelB, nb, 2);
      nc = fpe->insert(nb, posenc::kSentinelE, 2);
    }
    extend_cache(m, cache, {{6, 8}, 2, positions({na, nc}), {1, 3}}, std::vector<long>{0, 4, 2}, mem);
    CHECK(cache.size() == 5);
    CHECK_THROWS_AS(extend_cache(m, cache, {{9}, 1, positions({nb}), {1}}, std::vector<long>{0, 5, 3, 1, 4}, mem),
                    Error);

    Hypothesis h{{6, 7, 8}, {2, 1, 2}, {na, nb, nc}};
    const Tensor full = m.decoder_forward(h, m.encode(src), generation_order_mask(std::vector<int>{0, 2, 1, 2, 0}),
                                          fpe ? &*fpe : nullptr);
    const std::size_t surface_of_row[] = {0, 4, 2, 1, 3};
    double diff = 0;
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t j = 0; j < 16; ++j)
        diff = std::max(diff, std::abs(cache.hidden.at(r, j) - full.at(surface_of_row[r], j)));
    CHECK(diff <= 1e-9);
  }
}

TEST_CASE("beam search: one-hot scorer gives its argmax sequence") {
  const std::vector<int> want{3, 1, 2};
  const auto scorer = [&](std::span<const std::vector<int>> prefixes) {
    std::vector<std::vector<double>> out;
    for (const auto& p : prefixes) {
      std::vector<double> row(5, std::log(1e-6));
      row[p.size() < want.size() ? static_cast<std::size_t>(want[p.size()]) : 4] = std::log(1.0 - 4e-6);
      out.push_back(row);
    }
    return out;
  };
  const auto h = beam_search(scorer, 1, 10, 4);
  CHECK(h.tokens == want);
  CHECK(h.finished);
}

TEST_CASE("beam search matches exhaustive search on a fixed table") {
  // Token ids 0, 1; eos = 2 is impossible until length 3 so every hypothesis has 3 tokens.
  Rng rng(8, "table");
  std::map<std::vector<int>, std::vector<double>> table;
  std::function<void(std::vector<int>)> fill = [&](std::vector<int> p) {
    std::vector<double> row(3, kNegInf);
    if (p.size() < 3) {
      const double a = rng.uniform(0.05, 0.95);
      row[0] = std::log(a);
      row[1] = std::log(1 - a);
    } else {
      row[2] = 0.0;
    }
    table[p] = row;
    if (p.size() < 3)
      for (int t : {0, 1}) {
        auto q = p;
        q.push_back(t);
        fill(q);
      }
  };
  fill({});
  const auto scorer = [&](std::span<const std::vector<int>> prefixes) {
    std::vector<std::vector<double>> out;
    for (const auto& p : prefixes) out.push_back(table.at(p));
    return out;
  };
  double best = kNegInf;
  std::vector<int> best_seq;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 2; ++c) {
        const double s = table.at({})[static_cast<std::size_t>(a)] + table.at({a})[static_cast<std::size_t>(b)] +
                         table.at({a, b})[static_cast<std::size_t>(c)];
        if (s > best) {
          best = s;
          best_seq = {a, b, c};
        }
      }
  const auto b2 = beam_search(scorer, 2, 10, 2);
  const auto b8 = beam_search(scorer, 8, 10, 2);
  const auto g = beam_search(scorer, 1, 10, 2);
  CHECK(b8.tokens == best_seq);
  CHECK(b8.logprob == doctest::Approx(best).epsilon(1e-12));
  CHECK(b2.logprob >= g.logprob);
  CHECK(b8.logprob >= b2.logprob);
}

TEST_CASE("left-to-right greedy decoding follows the model's argmax") {
  const Model m(small(posenc::Scheme::abs, HeadKind::l2r));
  const std::vector<int> src{5, 6, 7};
  const auto res = decode_l2r(m, src, 1, 6);
  const Tensor mem = m.encode(src);
  std::vector<int> prefix;
  for (std::size_t i = 0; i < 6; ++i) {
    const Tensor lp = m.l2r_logits(prefix, mem);
    const auto row = lp.row(lp.rows() - 1);
    const int best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == vocab::kEos) break;
    prefix.push_back(best);
  }
  CHECK(res.tokens == prefix);
  CHECK(res.n_steps == static_cast<int>(res.out_len) + (res.truncated ? 0 : 1));
  const auto wide = decode_l2r(m, src, 4, 6);
  CHECK(wide.out_len <= 6);
}

TEST_CASE("batch planning respects the token budget") {
  const auto sources = random_sources(40, 9);
  const auto plan = plan_batches(sources, 20);
  std::vector<std::size_t> seen;
  for (const auto& b : plan.batches) {
    std::size_t total = 0;
    for (std::size_t i : b) total += sources[i].size();
    CHECK(total <= 20);
    seen.insert(seen.end(), b.begin(), b.end());
  }
  std::sort(seen.begin(), seen.end());
  std::vector<std::size_t> all(40);
  std::iota(all.begin(), all.end(), std::size_t{0});
  CHECK(seen == all);
  CHECK_THROWS_AS(plan_batches(sources, 3), Error);
}

TEST_CASE("batched decoding equals single-instance decoding") {
  const auto sources = random_sources(24, 10);
  for (auto pe : {posenc::Scheme::abs, posenc::Scheme::rel, posenc::Scheme::fpe}) {
    const Model m(small(pe));
    Options o;
    o.mode = pe == posenc::Scheme::abs ? Mode::recompute : Mode::incremental;
    o.eos_penalty = 1.0;
    std::vector<std::vector<int>> single;
    for (const auto& s : sources) single.push_back(decode_insertion(m, s, o).tokens);
    for (std::size_t budget : {9, 30, 64, 1024}) {
      const auto out = batch_decode(m, sources, budget, o);
      REQUIRE(out.results.size() == sources.size());
      for (std::size_t i = 0; i < sources.size(); ++i) CHECK(out.results[i].tokens == single[i]);
    }
    const std::vector<std::vector<int>> one{sources[3]};
    CHECK(decode_insertion_batch(m, one, o)[0].tokens == single[3]);
  }
  const Model l2r(small(posenc::Scheme::abs, HeadKind::l2r));
  const auto out = batch_decode(l2r, sources, 64, Options{});
  for (std::size_t i = 0; i < sources.size(); ++i) CHECK(out.results[i].tokens == decode_l2r(l2r, sources[i], 1).tokens);
}

TEST_CASE("finished batch members stay frozen") {
  const std::vector<std::vector<int>> targets{distinct_target(3), distinct_target(15)};
  const Model m(small(posenc::Scheme::fpe));
  const std::vector<std::vector<int>> sources{{5, 6, 7}, {5, 6, 7, 8}};
  std::vector<int> last_step(2, 0);
  int max_step = 0;
  const auto res = decode_insertion_batch(
      m, sources, Options{},
      [&](const StepView& v) {
        last_step[v.instance] = v.step;
        max_step = std::max(max_step, v.step);
      },
      oracle(targets));
  CHECK(res[0].n_steps == 3);
  CHECK(res[1].n_steps == 5);
  CHECK(last_step[0] == 3);
  CHECK(max_step == 5);
  CHECK(res[0].tokens == targets[0]);
  CHECK(res[1].tokens == targets[1]);
}

TEST_CASE("mode and mask names round trip") {
  CHECK(parse_mode(mode_name(Mode::incremental)) == Mode::incremental);
  CHECK(parse_mask_kind(mask_kind_name(MaskKind::generation)) == MaskKind::generation);
  CHECK_THROWS_AS(parse_mode("lazy"), Error);
}

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

#include "fracpos/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "fracpos/error.hpp"
#include "fracpos/vocab.hpp"

namespace fracpos::training {

Subset subset_from_kept(std::size_t T, std::vector<std::size_t> kept) {
  Subset s;
  std::size_t prev = 0;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (kept[i] >= T || (i > 0 && kept[i] <= kept[i - 1]))
      throw Error("subset_from_kept: indices must be sorted, distinct and < T");
    s.spans.emplace_back(prev, kept[i]);
    prev = kept[i] + 1;
  }
  s.spans.emplace_back(prev, T);
  s.kept = std::move(kept);
  return s;
}

Subset sample_hypothesis(std::size_t T, Rng& rng) {
  if (T == 0) throw Error("sample_hypothesis: empty target");
  const auto k = static_cast<std::size_t>(rng.below(T + 1));
  std::vector<std::size_t> idx(T);
  for (std::size_t i = 0; i < T; ++i) idx[i] = i;
  // Partial Fisher-Yates: the first k entries form a uniform k-subset.
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(T - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return subset_from_kept(T, std::move(idx));
}

std::vector<double> binary_tree_weights(std::size_t m, double tau) {
  if (m == 0) throw Error("binary_tree_weights: empty span");
  if (!(tau > 0.0)) throw Error("binary_tree_weights: tau must be positive");
  const double center = (static_cast<double>(m) - 1.0) / 2.0;
  std::vector<double> w(m);
  // The centre has the largest score, so shifting by it keeps exp() <= 1.
  const double top = -std::abs(std::floor(center) - center) / tau;
  double z = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    w[i] = std::exp(-std::abs(static_cast<double>(i) - center) / tau - top);
    z += w[i];
  }
  for (double& x : w) x /= z;
  return w;
}

std::string_view train_mask_name(TrainMask m) {
  switch (m) {
    case TrainMask::automatic: return "auto";
    case TrainMask::full: return "full";
    case TrainMask::generation: return "generation";
  }
  return "?";
}

TrainMask parse_train_mask(std::string_view s) {
  if (s == "auto") return TrainMask::automatic;
  if (s == "full") return TrainMask::full;
  if (s == "generation") return TrainMask::generation;
  throw Error("unknown train mask '" + std::string(s) + "'");
}

TrainMask resolve_train_mask(TrainMask m, posenc::Scheme scheme) {
  if (m != TrainMask::automatic) return m;
  return scheme == posenc::Scheme::abs ? TrainMask::full : TrainMask::generation;
}

namespace {

double row_cross_entropy(const double* logits, std::span<const unsigned char> allowed,
                         const ops::RowTarget& t) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < allowed.size(); ++j)
    if (allowed[j]) mx = std::max(mx, logits[j]);
  double z = 0.0, all = 0.0;
  std::size_t n = 0;
  for (std::size_t j = 0; j < allowed.size(); ++j)
    if (allowed[j]) {
      z += std::exp(logits[j] - mx);
      all += logits[j];
      ++n;
    }
  const double lz = mx + std::log(z);
  double row = 0.0;
  for (const auto& [id, mass] : t.probs) row -= mass * (logits[id] - lz);
  if (t.uniform_mass != 0.0) row -= t.uniform_mass / static_cast<double>(n) * (all - lz * static_cast<double>(n));
  return row;
}

std::vector<long> iota_long(std::size_t n) {
  std::vector<long> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<long>(i);
  return v;
}

}  // namespace

Var insertion_loss(Graph& g, const Model& model, std::span<const TrainExample> batch, double tau,
                   TrainMask mask, std::vector<double>* per_example) {
  const ModelConfig& cfg = model.config();
  if (cfg.head != HeadKind::insertion) throw Error("insertion_loss needs an insertion head");
  if (batch.empty()) throw Error("insertion_loss: empty batch");
  const TrainMask resolved = resolve_train_mask(mask, cfg.pe);

  std::vector<std::vector<int>> sources;
  for (const auto& ex : batch) sources.push_back(ex.src);
  EncodedBatch enc = model.encode_batch(g, sources);

  std::vector<int> tokens;
  std::vector<long> surface;
  std::vector<SelfAttnPlan> self(batch.size());
  std::vector<CrossAttnPlan> cross(batch.size());
  std::vector<std::size_t> row_begin(batch.size());
  std::vector<std::vector<posenc::SnapshotEntry>> trees(batch.size());
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const TrainExample& ex = batch[e];
    const std::size_t n = ex.kept.size();
    if (ex.spans.size() != n + 1) throw Error("insertion_loss: spans do not match kept tokens");
    row_begin[e] = tokens.size();
    tokens.push_back(vocab::kBos);
    for (std::size_t i : ex.kept) tokens.push_back(ex.tgt[i]);
    tokens.push_back(vocab::kEos);
    for (std::size_t i = 0; i < n + 2; ++i) surface.push_back(static_cast<long>(i));
    trees[e] = posenc::balanced_tree_order(n);

    SelfAttnPlan& plan = self[e];
    plan.n_new = n + 2;
    if (resolved == TrainMask::generation) {
      std::vector<int> steps(n + 2, 0);
      for (const auto& t : trees[e]) steps[t.index + 1] = t.depth + 1;
      plan.mask = generation_order_mask(steps);
    }
    if (cfg.pe == posenc::Scheme::rel) {
      const auto pos = iota_long(n + 2);
      plan.relation = posenc::rel_matrix(pos, pos);
    }
    cross[e] = {enc.begin[e], enc.len[e], {}};
  }

  Var x = model.embed(g, tokens);
  if (cfg.pe == posenc::Scheme::abs) {
    x = ops::add(x, model.abs_positions(g, surface));
  } else if (cfg.pe == posenc::Scheme::fpe) {
    // Builds every snapshot's position nodes level by level, one fused
    // combine per tree depth across the whole batch.
    Var table = model.fpe_boundary(g);
    std::size_t table_rows = 2;
    std::vector<std::vector<std::size_t>> node_row(batch.size());
    int max_depth = -1;
    for (std::size_t e = 0; e < batch.size(); ++e) {
      node_row[e].assign(batch[e].kept.size(), 0);
      for (const auto& t : trees[e]) max_depth = std::max(max_depth, t.depth);
    }
    for (int depth = 0; depth <= max_depth; ++depth) {
      std::vector<std::size_t> left, right;
      std::vector<std::pair<std::size_t, std::size_t>> targets;
      for (std::size_t e = 0; e < batch.size(); ++e)
        for (const auto& t : trees[e]) {
          if (t.depth != depth) continue;
          left.push_back(t.left == posenc::kSentinelB ? 0 : node_row[e][static_cast<std::size_t>(t.left)]);
          right.push_back(t.right == posenc::kSentinelE ? 1 : node_row[e][static_cast<std::size_t>(t.right)]);
          targets.emplace_back(e, t.index);
        }
      Var fresh = model.fpe_combine(g, table, std::move(left), std::move(right));
      for (std::size_t i = 0; i < targets.size(); ++i)
        node_row[targets[i].first][targets[i].second] = table_rows + i;
      table_rows += targets.size();
      Var parts[2] = {table, fresh};
      table = ops::concat_rows(parts);
    }
    std::vector<std::size_t> pos_index;
    pos_index.reserve(tokens.size());
    for (std::size_t e = 0; e < batch.size(); ++e) {
      pos_index.push_back(0);
      for (std::size_t r : node_row[e]) pos_index.push_back(r);
      pos_index.push_back(1);
    }
    x = ops::add(x, ops::gather_rows(table, std::move(pos_index)));
  }

  StackOutput out = model.decoder_stack(g, x, self, cross, enc.keys, enc.values);

  std::vector<std::size_t> left, right;
  std::vector<ops::RowTarget> targets;
  std::vector<std::size_t> slot_begin(batch.size());
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const TrainExample& ex = batch[e];
    const std::size_t slots = ex.spans.size();
    slot_begin[e] = targets.size();
    for (std::size_t s = 0; s < slots; ++s) {
      left.push_back(row_begin[e] + s);
      right.push_back(row_begin[e] + s + 1);
      ops::RowTarget t;
      t.weight = inv_batch / static_cast<double>(slots);
      const auto [b, end] = ex.spans[s];
      if (b == end) {
        t.probs.emplace_back(vocab::kEndOfSlot, 1.0);
      } else {
        const auto w = binary_tree_weights(end - b, tau);
        for (std::size_t i = b; i < end; ++i) t.probs.emplace_back(ex.tgt[i], w[i - b]);
      }
      targets.push_back(std::move(t));
    }
  }
  Var logits = model.slot_logits_graph(g, out.hidden, left, right);
  const Tensor& lv = logits.value();
  const std::size_t V = lv.cols();
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const std::size_t end = e + 1 < batch.size() ? slot_begin[e + 1] : targets.size();
    for (std::size_t r = slot_begin[e]; r < end; ++r)
      for (std::size_t j = 0; j < V; ++j)
        if (!std::isfinite(lv.at(r, j)))
          throw NumericError("insertion_loss: non-finite logits for example " + std::to_string(batch[e].id));
  }
  if (per_example) {
    per_example->assign(batch.size(), 0.0);
    for (std::size_t e = 0; e < batch.size(); ++e) {
      const std::size_t end = e + 1 < batch.size() ? slot_begin[e + 1] : targets.size();
      double total = 0.0;
      for (std::size_t r = slot_begin[e]; r < end; ++r)
        total += row_cross_entropy(lv.ptr() + r * V, model.output_mask(), targets[r]);
      (*per_example)[e] = total / static_cast<double>(end - slot_begin[e]);
    }
  }
  return ops::soft_cross_entropy(logits, model.output_mask(), targets);
}

Var l2r_loss(Graph& g, const Model& model, std::span<const data::Pair> batch, double eps) {
  const ModelConfig& cfg = model.config();
  if (cfg.head != HeadKind::l2r) throw Error("l2r_loss needs an l2r head");
  if (batch.empty()) throw Error("l2r_loss: empty batch");
  if (eps < 0.0 || eps >= 1.0) throw Error("l2r_loss: label smoothing must be in [0, 1)");
  std::vector<std::vector<int>> sources;
  std::size_t total_tokens = 0;
  for (const auto& p : batch) {
    sources.push_back(p.src);
    total_tokens += p.tgt.size() + 1;
  }
  EncodedBatch enc = model.encode_batch(g, sources);
  std::vector<int> tokens;
  std::vector<long> surface;
  std::vector<SelfAttnPlan> self(batch.size());
  std::vector<CrossAttnPlan> cross(batch.size());
  std::vector<ops::RowTarget> targets;
  const double w = 1.0 / static_cast<double>(total_tokens);
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const auto& p = batch[e];
    const std::size_t rows = p.tgt.size() + 1;
    tokens.push_back(vocab::kBos);
    tokens.insert(tokens.end(), p.tgt.begin(), p.tgt.end());
    const auto pos = iota_long(rows);
    surface.insert(surface.end(), pos.begin(), pos.end());
    self[e].n_new = rows;
    self[e].mask = causal_mask(rows);
    if (cfg.pe == posenc::Scheme::rel) self[e].relation = posenc::rel_matrix(pos, pos);
    cross[e] = {enc.begin[e], enc.len[e], {}};
    for (std::size_t i = 0; i < rows; ++i) {
      ops::RowTarget t;
      t.probs.emplace_back(i < p.tgt.size() ? p.tgt[i] : vocab::kEos, 1.0 - eps);
      t.uniform_mass = eps;
      t.weight = w;
      targets.push_back(std::move(t));
    }
  }
  Var x = ops::add(model.embed(g, tokens), model.abs_positions(g, surface));
  StackOutput out = model.decoder_stack(g, x, self, cross, enc.keys, enc.values);
  return ops::soft_cross_entropy(model.next_token_logits_graph(g, out.hidden), model.output_mask(), targets);
}

void TrainConfig::validate() const {
  if (steps < 0) throw Error("train config: steps must be >= 0");
  if (batch_size < 1) throw Error("train config: batch_size must be >= 1");
  if (warmup < 1) throw Error("train config: warmup must be >= 1");
  if (!(tau > 0.0)) throw Error("train config: tau must be > 0");
  if (peak_lr < 0.0) throw Error("train config: peak_lr must be >= 0");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
    throw Error("train config: label_smoothing must be in [0, 1)");
  if (validate_every < 1) throw Error("train config: validate_every must be >= 1");
  if (average_best_k < 0) throw Error("train config: average_best_k must be >= 0");
}

std::vector<TrainExample> make_batch(const data::Dataset& train, const TrainConfig& cfg, long step) {
  if (train.pairs.empty()) throw Error("training set is empty");
  Rng rng(cfg.seed, "batch", static_cast<std::uint64_t>(step));
  std::vector<TrainExample> batch(static_cast<std::size_t>(cfg.batch_size));
  for (auto& ex : batch) {
    ex.id = static_cast<std::size_t>(rng.below(train.pairs.size()));
    ex.src = train.pairs[ex.id].src;
    ex.tgt = train.pairs[ex.id].tgt;
    Subset s = sample_hypothesis(ex.tgt.size(), rng);
    ex.kept = std::move(s.kept);
    ex.spans = std::move(s.spans);
  }
  return batch;
}

namespace {

std::vector<data::Pair> as_pairs(std::span<const TrainExample> batch) {
  std::vector<data::Pair> out;
  for (const auto& ex : batch) out.push_back({ex.src, ex.tgt});
  return out;
}

Var batch_loss_graph(Graph& g, const Model& model, const TrainConfig& cfg,
                     std::span<const TrainExample> batch) {
  if (model.config().head == HeadKind::insertion) return insertion_loss(g, model, batch, cfg.tau, cfg.mask);
  const auto pairs = as_pairs(batch);
  return l2r_loss(g, model, pairs, cfg.label_smoothing);
}

}  // namespace

Trainer::Trainer(Model& model, TrainConfig config)
    : model_(model), config_(config), params_(model.parameters()), adam_(params_) {
  config_.validate();
}

double Trainer::train_step(const data::Dataset& train) {
  return train_step(train, inverse_sqrt_lr(step_ + 1, config_.peak_lr, config_.warmup));
}

double Trainer::train_step(const data::Dataset& train, double lr) {
  const auto batch = make_batch(train, config_, step_);
  for (Parameter* p : params_) p->zero_grad();
  Graph g(true);
  Var loss = batch_loss_graph(g, model_, config_, batch);
  const double value = loss.value()[0];
  if (!std::isfinite(value))
    throw NumericError("non-finite training loss at step " + std::to_string(step_ + 1));
  g.backward(loss);
  adam_.step(lr);
  ++step_;
  return value;
}

double Trainer::batch_loss(std::span<const TrainExample> batch) const {
  Graph g(false);
  return batch_loss_graph(g, model_, config_, batch).value()[0];
}

double Trainer::dev_loss(std::span<const data::Pair> dev) const {
  if (dev.empty()) return std::numeric_limits<double>::quiet_NaN();
  // Fixed hypothesis subsets so successive validations are comparable.
  Rng rng(config_.seed, "dev-subsets");
  std::vector<TrainExample> all;
  for (std::size_t i = 0; i < dev.size(); ++i) {
    TrainExample ex;
    ex.id = i;
    ex.src = dev[i].src;
    ex.tgt = dev[i].tgt;
    Subset s = sample_hypothesis(ex.tgt.size(), rng);
    ex.kept = std::move(s.kept);
    ex.spans = std::move(s.spans);
    all.push_back(std::move(ex));
  }
  double total = 0.0;
  const auto chunk = static_cast<std::size_t>(std::max(config_.batch_size, 1));
  for (std::size_t i = 0; i < all.size(); i += chunk) {
    const std::size_t n = std::min(chunk, all.size() - i);
    total += batch_loss(std::span(all).subspan(i, n)) * static_cast<double>(n);
  }
  return total / static_cast<double>(all.size());
}

Checkpoint Trainer::state() const {
  Checkpoint ck = snapshot(params_, "step=" + std::to_string(step_) + "\nadam_t=" + std::to_string(adam_.t()));
  const auto m = adam_.first_moments();
  const auto v = adam_.second_moments();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ck.tensors.emplace_back("adam.m/" + params_[i]->name, m[i]);
    ck.tensors.emplace_back("adam.v/" + params_[i]->name, v[i]);
  }
  return ck;
}

void Trainer::restore_state(const Checkpoint& ckpt) {
  auto read = [&](const std::string& key) -> long {
    const auto at = ckpt.meta.find(key + "=");
    if (at == std::string::npos) throw FormatError("training state lacks '" + key + "'");
    return std::stol(ckpt.meta.substr(at + key.size() + 1));
  };
  const long step = read("step");
  const long t = read("adam_t");
  std::vector<Tensor> m, v;
  for (Parameter* p : params_) {
    const Tensor* pm = ckpt.find("adam.m/" + p->name);
    const Tensor* pv = ckpt.find("adam.v/" + p->name);
    if (!pm || !pv) throw FormatError("training state lacks moments for " + p->name);
    m.push_back(*pm);
    v.push_back(*pv);
  }
  restore(params_, ckpt);
  adam_.restore(t, std::move(m), std::move(v));
  step_ = step;
}

TrainResult train(Trainer& trainer, const data::Dataset& train_set, const data::Dataset* dev,
                  const DevMetric& metric, const std::function<void(const ValidationRow&)>& on_row) {
  const auto start = std::chrono::steady_clock::now();
  const TrainConfig& cfg = trainer.config();
  Model& model = trainer.model();
  const auto params = model.parameters();
  std::span<const data::Pair> dev_pairs;
  if (dev) dev_pairs = std::span(dev->pairs).first(std::min(dev->pairs.size(), cfg.dev_limit));

  TrainResult result;
  struct Scored {
    double metric;
    double loss;
    Checkpoint ckpt;
  };
  std::vector<Scored> best;
  Checkpoint last_good = snapshot(params);
  double loss_sum = 0.0;
  long loss_count = 0;

  auto validate = [&]() {
    ValidationRow row{trainer.step(), loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0,
                      std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    if (!dev_pairs.empty()) {
      row.dev_loss = trainer.dev_loss(dev_pairs);
      if (metric) row.dev_metric = metric(model, dev_pairs);
    }
    loss_sum = 0.0;
    loss_count = 0;
    result.curve.push_back(row);
    if (on_row) on_row(row);
    last_good = snapshot(params);
    if (cfg.average_best_k > 0) {
      // Ranked by dev metric, then by dev loss (NaN metrics rank by loss only).
      const double m = std::isnan(row.dev_metric) ? 0.0 : row.dev_metric;
      const double l = std::isnan(row.dev_loss) ? row.train_loss : row.dev_loss;
      best.push_back({m, l, last_good});
      std::stable_sort(best.begin(), best.end(), [](const Scored& a, const Scored& b) {
        return a.metric != b.metric ? a.metric > b.metric : a.loss < b.loss;
      });
      if (best.size() > static_cast<std::size_t>(cfg.average_best_k)) best.pop_back();
    }
  };

  while (trainer.step() < cfg.steps) {
    try {
      loss_sum += trainer.train_step(train_set);
      ++loss_count;
    } catch (const NumericError& e) {
      restore(params, last_good);
      result.diverged = true;
      result.message = e.what();
      break;
    }
    if (trainer.step() % cfg.validate_every == 0 || trainer.step() == cfg.steps) validate();
  }
  if (!result.diverged && !best.empty()) {
    std::vector<Checkpoint> ckpts;
    for (auto& s : best) ckpts.push_back(std::move(s.ckpt));
    restore(params, average_checkpoints(ckpts));
  }
  result.steps_done = trainer.step();
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace fracpos::training

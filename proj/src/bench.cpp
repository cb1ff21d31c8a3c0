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

#include "fracpos/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "fracpos/error.hpp"

namespace fracpos::bench {
namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string mode_label(const System& sys) {
  if (sys.model->config().head == HeadKind::l2r) return "greedy";
  return std::string(decoding::mode_name(sys.options.mode));
}

}  // namespace

std::string BenchRow::key() const {
  return task + "/" + scheme + "/" + mode + "/" + std::to_string(budget);
}

flops::Report decode_flops(const System& sys, std::span<const int> src) {
  flops::Trace trace;
  {
    flops::ScopedTrace scope(trace);
    if (sys.model->config().head == HeadKind::l2r) {
      std::vector<std::vector<int>> one{{src.begin(), src.end()}};
      decoding::batch_decode(*sys.model, one, src.size(), sys.options);
    } else {
      decoding::decode_insertion(*sys.model, src, sys.options);
    }
  }
  return flops::count(trace);
}

std::vector<BenchRow> run_bench(std::span<const System> systems, const std::string& task,
                                std::span<const std::vector<int>> sources, const BenchOptions& options) {
  if (sources.empty()) throw Error("run_bench: no sources");
  if (options.repeats < 1 || options.warmup < 0) throw Error("run_bench: repeats must be >= 1 and warmup >= 0");
  for (std::size_t i = 1; i < options.budgets.size(); ++i)
    if (options.budgets[i] <= options.budgets[i - 1]) throw Error("run_bench: budgets must increase");
  const double n = static_cast<double>(sources.size());
  std::vector<BenchRow> rows;
  for (const System& sys : systems) {
    double flops_sum = 0.0;
    for (const auto& s : sources) flops_sum += static_cast<double>(decode_flops(sys, s).total);
    for (std::size_t budget : options.budgets) {
      for (int w = 0; w < options.warmup; ++w) decoding::batch_decode(*sys.model, sources, budget, sys.options);
      std::vector<double> per_instance;
      decoding::BatchDecodeOutput last;
      for (int r = 0; r < options.repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        last = decoding::batch_decode(*sys.model, sources, budget, sys.options);
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        per_instance.push_back(ms / n);
      }
      std::sort(per_instance.begin(), per_instance.end());
      BenchRow row;
      row.task = task;
      row.scheme = sys.label;
      row.mode = mode_label(sys);
      row.budget = budget;
      row.n = sources.size();
      row.latency_ms = per_instance[per_instance.size() / 2];
      for (const auto& res : last.results) {
        row.steps += res.n_steps;
        row.len += static_cast<double>(res.out_len);
      }
      row.steps /= n;
      row.len /= n;
      row.flops = flops_sum / n;
      rows.push_back(row);
    }
  }
  return rows;
}

std::string to_csv(std::span<const BenchRow> rows) {
  std::ostringstream os;
  os << kCsvHeader << '\n';
  for (const auto& r : rows)
    os << r.task << ',' << r.scheme << ',' << r.mode << ',' << r.budget << ',' << r.n << ','
       << fmt("%.4f", r.latency_ms) << ',' << fmt("%.4f", r.steps) << ',' << fmt("%.4f", r.len) << ','
       << fmt("%.0f", r.flops) << '\n';
  return os.str();
}

std::string to_markdown(std::span<const BenchRow> rows) {
  std::ostringstream os;
  std::vector<std::string> systems;
  std::vector<std::size_t> budgets;
  std::map<std::pair<std::string, std::size_t>, const BenchRow*> at;
  for (const auto& r : rows) {
    const std::string sys = r.task + " " + r.scheme + " (" + r.mode + ")";
    if (std::find(systems.begin(), systems.end(), sys) == systems.end()) systems.push_back(sys);
    if (std::find(budgets.begin(), budgets.end(), r.budget) == budgets.end()) budgets.push_back(r.budget);
    at[{sys, r.budget}] = &r;
  }
  std::sort(budgets.begin(), budgets.end());
  os << "| system | #Step | #Len | FLOPs | latency ms (budget " << (budgets.empty() ? 0 : budgets.front())
     << ") |\n|---|---|---|---|---|\n";
  for (const auto& s : systems) {
    const BenchRow* r = at[{s, budgets.front()}];
    if (!r) continue;
    os << "| " << s << " | " << fmt("%.2f", r->steps) << " | " << fmt("%.2f", r->len) << " | "
       << fmt("%.3g", r->flops) << " | " << fmt("%.3f", r->latency_ms) << " |\n";
  }
  os << "\n| system |";
  for (auto b : budgets) os << " " << b << " |";
  os << "\n|---|";
  for (std::size_t i = 0; i < budgets.size(); ++i) os << "---|";
  os << '\n';
  for (const auto& s : systems) {
    os << "| " << s << " |";
    for (auto b : budgets) {
      const auto it = at.find({s, b});
      os << ' ' << (it != at.end() && it->second ? fmt("%.3f", it->second->latency_ms) : "-") << " |";
    }
    os << '\n';
  }
  return os.str();
}

std::vector<double> default_length_edges() {
  return {0, 10, 20, 30, 40, std::numeric_limits<double>::infinity()};
}

std::vector<LengthBin> length_bins(std::span<const std::size_t> src_lengths,
                                   std::span<const double> latency_ms, std::span<const double> edges) {
  if (src_lengths.size() != latency_ms.size()) throw Error("length_bins: size mismatch");
  if (edges.size() < 2) throw Error("length_bins: need at least two edges");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1])) throw Error("length_bins: edges must strictly increase");
  std::vector<LengthBin> bins(edges.size());
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    bins[i].lo = edges[i];
    bins[i].hi = edges[i + 1];
  }
  bins.back().overflow = true;
  bins.back().lo = std::numeric_limits<double>::quiet_NaN();
  bins.back().hi = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> sums(bins.size(), 0.0);
  for (std::size_t i = 0; i < src_lengths.size(); ++i) {
    const auto len = static_cast<double>(src_lengths[i]);
    std::size_t b = bins.size() - 1;
    for (std::size_t j = 0; j + 1 < edges.size(); ++j)
      if (len >= edges[j] && len < edges[j + 1]) {
        b = j;
        break;
      }
    ++bins[b].count;
    sums[b] += latency_ms[i];
  }
  for (std::size_t b = 0; b < bins.size(); ++b)
    bins[b].mean_latency_ms = bins[b].count ? sums[b] / static_cast<double>(bins[b].count) : 0.0;
  return bins;
}

std::string length_bins_csv(const std::string& label, std::span<const LengthBin> bins, bool header) {
  std::ostringstream os;
  if (header) os << "system,bin,count,mean_latency_ms\n";
  for (const auto& b : bins) {
    std::string name = b.overflow ? "overflow" : fmt("%.0f", b.lo) + "-" + (std::isinf(b.hi) ? "inf" : fmt("%.0f", b.hi));
    os << label << ',' << name << ',' << b.count << ',' << fmt("%.4f", b.mean_latency_ms) << '\n';
  }
  return os.str();
}

}  // namespace fracpos::bench

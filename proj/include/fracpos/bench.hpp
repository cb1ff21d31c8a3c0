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
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "fracpos/decoding.hpp"
#include "fracpos/flops.hpp"
#include "fracpos/model.hpp"

namespace fracpos::bench {

// A trained model plus the engine it is decoded with. `label` is one of
// L2R, ABS, REL, FPE.
struct System {
  std::string label;
  const Model* model = nullptr;
  decoding::Options options;
};

struct BenchRow {
  std::string task;
  std::string scheme;
  std::string mode;
  std::size_t budget = 0;
  std::size_t n = 0;
  double latency_ms = 0.0;  // per instance, median over repeats
  double steps = 0.0;
  double len = 0.0;
  double flops = 0.0;  // per instance, single-instance decoding

  std::string key() const;
};

struct BenchOptions {
  std::vector<std::size_t> budgets{64, 256, 1024};
  int repeats = 3;
  int warmup = 1;
};

// FLOPs of decoding `src` alone with the system's engine.
flops::Report decode_flops(const System& sys, std::span<const int> src);

// One row per (system, budget). Timings are the median of `repeats` timed
// passes after `warmup` untimed ones; FLOPs come from a separate untimed
// single-instance pass over every source.
std::vector<BenchRow> run_bench(std::span<const System> systems, const std::string& task,
                                std::span<const std::vector<int>> sources, const BenchOptions& options);

inline constexpr const char* kCsvHeader = "task,scheme,mode,budget,n,latency_ms,steps,len,flops";
std::string to_csv(std::span<const BenchRow> rows);
// Steps / length / latency per system (single-instance budget), and
// latency per system per budget.
std::string to_markdown(std::span<const BenchRow> rows);

struct LengthBin {
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  bool overflow = false;
  std::size_t count = 0;
  double mean_latency_ms = 0.0;
};

// Half-open bins [edges[i], edges[i+1]) over source length; instances outside
// every bin land in a final overflow bin. Throws unless edges strictly increase.
std::vector<LengthBin> length_bins(std::span<const std::size_t> src_lengths,
                                   std::span<const double> latency_ms, std::span<const double> edges);
std::vector<double> default_length_edges();
std::string length_bins_csv(const std::string& label, std::span<const LengthBin> bins, bool header);

}  // namespace fracpos::bench

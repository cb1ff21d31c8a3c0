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
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fracpos::data {

struct Pair {
  std::vector<int> src;
  std::vector<int> tgt;

  bool operator==(const Pair&) const = default;
};

struct Dataset {
  std::string name;
  std::string split;
  std::vector<Pair> pairs;
  int vocab_size = 0;
  std::uint64_t seed = 0;

  std::size_t size() const { return pairs.size(); }
};

enum class Task { copy, reorder, reverse };
std::string_view task_name(Task t);
Task parse_task(std::string_view s);

struct LengthRange {
  int lo = 4;
  int hi = 16;
};

// Each generator draws lengths uniformly from the inclusive range and content
// ids uniformly from [4, vocab). Throws when vocab < 10 or the range is empty.
Dataset gen_copy(std::size_t n, LengthRange len, int vocab, std::uint64_t seed);
// tgt is in canonical order (see canonical_order); src is a uniform shuffle of tgt.
Dataset gen_reorder(std::size_t n, LengthRange len, int vocab, std::uint64_t seed);
Dataset gen_reverse(std::size_t n, LengthRange len, int vocab, std::uint64_t seed);
Dataset generate(Task task, std::size_t n, LengthRange len, int vocab, std::uint64_t seed);

// The reorder task's target rule: tokens sorted by a fixed keyed hash of the id.
std::vector<int> canonical_order(std::vector<int> tokens);

struct SplitSizes {
  std::size_t train = 20000, dev = 1000, test = 1000;
  LengthRange train_len{4, 16};
  LengthRange test_len{4, 24};
};

struct Splits {
  Dataset train, dev, test;
};

// Train and dev use train_len, test uses test_len. No source appears in two
// splits (or twice in one split).
Splits generate_splits(Task task, const SplitSizes& sizes, int vocab, std::uint64_t seed);

// Text format: one pair per line, "src ids<TAB>tgt ids" with space-separated
// integers. Loading throws FormatError naming the offending line.
void save(const std::filesystem::path& path, const Dataset& ds);
Dataset load(const std::filesystem::path& path, int vocab_size = 0);

// Table of pair count, mean/max source and target length per split.
std::string stats_table(std::span<const Dataset* const> splits);

}  // namespace fracpos::data

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

#include "fracpos/data.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "fracpos/error.hpp"
#include "fracpos/rng.hpp"
#include "fracpos/vocab.hpp"

namespace fracpos::data {
namespace {

constexpr std::uint64_t kOrderKey = 0x5eed0f0dde4c0ffeULL;

void check_args(LengthRange len, int vocab) {
  if (vocab < 10) throw Error("dataset vocab must be at least 10, got " + std::to_string(vocab));
  if (len.lo < 1 || len.hi < len.lo)
    throw Error("bad length range " + std::to_string(len.lo) + ".." + std::to_string(len.hi));
}

std::vector<int> random_tokens(Rng& rng, LengthRange len, int vocab) {
  const auto n = static_cast<std::size_t>(rng.range(len.lo, len.hi));
  std::vector<int> out(n);
  for (int& t : out) t = static_cast<int>(rng.range(vocab::kFirstContent, vocab - 1));
  return out;
}

template <typename MakePair>
Dataset generate_with(std::string name, std::size_t n, LengthRange len, int vocab, std::uint64_t seed,
                      MakePair make) {
  check_args(len, vocab);
  Dataset ds;
  ds.name = std::move(name);
  ds.vocab_size = vocab;
  ds.seed = seed;
  Rng rng(seed, "data/" + ds.name);
  ds.pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) ds.pairs.push_back(make(rng, random_tokens(rng, len, vocab)));
  return ds;
}

std::string join(const std::vector<int>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(xs[i]);
  }
  return s;
}

std::vector<int> parse_ids(std::string_view field, std::size_t line_no) {
  std::vector<int> out;
  std::size_t i = 0;
  while (i < field.size()) {
    while (i < field.size() && field[i] == ' ') ++i;
    if (i == field.size()) break;
    std::size_t j = i;
    while (j < field.size() && field[j] != ' ') ++j;
    int v = 0;
    const auto [ptr, ec] = std::from_chars(field.data() + i, field.data() + j, v);
    if (ec != std::errc() || ptr != field.data() + j)
      throw FormatError("line " + std::to_string(line_no) + ": bad token '" +
                        std::string(field.substr(i, j - i)) + "'");
    out.push_back(v);
    i = j;
  }
  return out;
}

}  // namespace

std::string_view task_name(Task t) {
  switch (t) {
    case Task::copy: return "copy";
    case Task::reorder: return "reorder";
    case Task::reverse: return "reverse";
  }
  return "?";
}

Task parse_task(std::string_view s) {
  if (s == "copy") return Task::copy;
  if (s == "reorder") return Task::reorder;
  if (s == "reverse") return Task::reverse;
  throw Error("unknown task '" + std::string(s) + "'");
}

std::vector<int> canonical_order(std::vector<int> tokens) {
  auto key = [](int t) { return splitmix64(kOrderKey ^ static_cast<std::uint64_t>(t)); };
  std::stable_sort(tokens.begin(), tokens.end(), [&](int a, int b) {
    const auto ka = key(a), kb = key(b);
    return ka != kb ? ka < kb : a < b;
  });
  return tokens;
}

Dataset gen_copy(std::size_t n, LengthRange len, int vocab, std::uint64_t seed) {
  return generate_with("copy", n, len, vocab, seed,
                       [](Rng&, std::vector<int> t) { return Pair{t, t}; });
}

Dataset gen_reorder(std::size_t n, LengthRange len, int vocab, std::uint64_t seed) {
  return generate_with("reorder", n, len, vocab, seed, [](Rng& rng, std::vector<int> t) {
    Pair p;
    p.tgt = canonical_order(std::move(t));
    p.src = p.tgt;
    rng.shuffle(p.src);
    return p;
  });
}

Dataset gen_reverse(std::size_t n, LengthRange len, int vocab, std::uint64_t seed) {
  return generate_with("reverse", n, len, vocab, seed, [](Rng&, std::vector<int> t) {
    Pair p{t, t};
    std::reverse(p.tgt.begin(), p.tgt.end());
    return p;
  });
}

Dataset generate(Task task, std::size_t n, LengthRange len, int vocab, std::uint64_t seed) {
  switch (task) {
    case Task::copy: return gen_copy(n, len, vocab, seed);
    case Task::reorder: return gen_reorder(n, len, vocab, seed);
    case Task::reverse: return gen_reverse(n, len, vocab, seed);
  }
  throw Error("unknown task");
}

Splits generate_splits(Task task, const SplitSizes& sizes, int vocab, std::uint64_t seed) {
  std::set<std::vector<int>> seen;
  // Draws in chunks from an indexed stream until `n` unseen sources are found.
  auto fill = [&](const std::string& split, std::size_t n, LengthRange len) {
    Dataset out;
    out.name = std::string(task_name(task));
    out.split = split;
    out.vocab_size = vocab;
    out.seed = seed;
    std::uint64_t round = 0;
    while (out.pairs.size() < n) {
      const std::uint64_t sub = splitmix64(seed ^ fnv1a(split) ^ (round++ * 0x9e3779b97f4a7c15ULL));
      if (round > 64) throw Error("cannot draw " + std::to_string(n) + " distinct " + split + " pairs");
      Dataset chunk = generate(task, n - out.pairs.size(), len, vocab, sub);
      for (auto& p : chunk.pairs)
        if (seen.insert(p.src).second) out.pairs.push_back(std::move(p));
    }
    return out;
  };
  Splits s;
  s.test = fill("test", sizes.test, sizes.test_len);
  s.dev = fill("dev", sizes.dev, sizes.train_len);
  s.train = fill("train", sizes.train, sizes.train_len);
  return s;
}

void save(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& p : ds.pairs) out << join(p.src) << '\t' << join(p.tgt) << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

Dataset load(const std::filesystem::path& path, int vocab_size) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  Dataset ds;
  ds.name = path.stem().string();
  int max_id = -1;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
      throw FormatError("line " + std::to_string(line_no) + ": expected exactly one tab");
    Pair p{parse_ids(std::string_view(line).substr(0, tab), line_no),
           parse_ids(std::string_view(line).substr(tab + 1), line_no)};
    for (const auto* side : {&p.src, &p.tgt})
      for (int t : *side) {
        if (vocab::is_reserved(t) || (vocab_size > 0 && t >= vocab_size))
          throw FormatError("line " + std::to_string(line_no) + ": token " + std::to_string(t) +
                            " outside the content range");
        max_id = std::max(max_id, t);
      }
    if (p.src.empty()) throw FormatError("line " + std::to_string(line_no) + ": empty source");
    ds.pairs.push_back(std::move(p));
  }
  ds.vocab_size = vocab_size > 0 ? vocab_size : max_id + 1;
  return ds;
}

std::string stats_table(std::span<const Dataset* const> splits) {
  std::ostringstream os;
  os << "| split | pairs | mean src len | mean tgt len | max src len | max tgt len |\n"
     << "|---|---|---|---|---|---|\n";
  char buf[256];
  for (const Dataset* ds : splits) {
    double src = 0, tgt = 0;
    std::size_t max_src = 0, max_tgt = 0;
    for (const auto& p : ds->pairs) {
      src += static_cast<double>(p.src.size());
      tgt += static_cast<double>(p.tgt.size());
      max_src = std::max(max_src, p.src.size());
      max_tgt = std::max(max_tgt, p.tgt.size());
    }
    const double n = ds->pairs.empty() ? 1.0 : static_cast<double>(ds->pairs.size());
    std::snprintf(buf, sizeof buf, "| %s | %zu | %.2f | %.2f | %zu | %zu |\n",
                  (ds->name + "/" + ds->split).c_str(), ds->pairs.size(), src / n, tgt / n, max_src,
                  max_tgt);
    os << buf;
  }
  return os.str();
}

}  // namespace fracpos::data

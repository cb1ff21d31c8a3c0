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

#include "fracpos/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "fracpos/error.hpp"

namespace fracpos {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw Error("config: bad value '" + v + "' for " + key);
  return out;
}

// Shortest text that parses back to the same double.
std::string num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

data::LengthRange parse_range(const std::string& key, const std::string& v) {
  const auto dash = v.find('-');
  if (dash == std::string::npos) throw Error("config: " + key + " expects lo-hi, got '" + v + "'");
  return {parse_number<int>(key, trim(v.substr(0, dash))), parse_number<int>(key, trim(v.substr(dash + 1)))};
}

std::string range_text(data::LengthRange r) { return std::to_string(r.lo) + "-" + std::to_string(r.hi); }

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define FIELD_INT(KEY, MEMBER, T)                                                               \
  Field {                                                                                       \
    KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_number<T>(KEY, v); },        \
        [](const RunConfig& c) { return std::to_string(c.MEMBER); }                             \
  }
#define FIELD_DOUBLE(KEY, MEMBER)                                                               \
  Field {                                                                                       \
    KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_number<double>(KEY, v); },   \
        [](const RunConfig& c) { return num(c.MEMBER); }                                        \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      FIELD_INT("model.d_model", model.d_model, int),
      FIELD_INT("model.n_layers", model.n_layers, int),
      FIELD_INT("model.n_heads", model.n_heads, int),
      FIELD_INT("model.d_ff", model.d_ff, int),
      FIELD_INT("model.vocab_size", model.vocab_size, int),
      FIELD_INT("model.max_len", model.max_len, int),
      {"model.pe", [](RunConfig& c, const std::string& v) { c.model.pe = posenc::parse_scheme(v); },
       [](const RunConfig& c) { return std::string(posenc::scheme_name(c.model.pe)); }},
      {"model.head", [](RunConfig& c, const std::string& v) { c.model.head = parse_head(v); },
       [](const RunConfig& c) { return std::string(head_name(c.model.head)); }},
      FIELD_INT("model.seed", model.seed, std::uint64_t),
      FIELD_INT("train.steps", train.steps, long),
      FIELD_INT("train.batch_size", train.batch_size, int),
      FIELD_DOUBLE("train.peak_lr", train.peak_lr),
      FIELD_INT("train.warmup", train.warmup, long),
      FIELD_DOUBLE("train.tau", train.tau),
      FIELD_DOUBLE("train.label_smoothing", train.label_smoothing),
      FIELD_INT("train.validate_every", train.validate_every, long),
      FIELD_INT("train.average_best_k", train.average_best_k, int),
      {"train.mask", [](RunConfig& c, const std::string& v) { c.train.mask = training::parse_train_mask(v); },
       [](const RunConfig& c) { return std::string(training::train_mask_name(c.train.mask)); }},
      FIELD_INT("train.dev_limit", train.dev_limit, std::size_t),
      FIELD_INT("train.seed", train.seed, std::uint64_t),
      {"data.task", [](RunConfig& c, const std::string& v) { c.task = data::parse_task(v); },
       [](const RunConfig& c) { return std::string(data::task_name(c.task)); }},
      FIELD_INT("data.train", sizes.train, std::size_t),
      FIELD_INT("data.dev", sizes.dev, std::size_t),
      FIELD_INT("data.test", sizes.test, std::size_t),
      {"data.train_len", [](RunConfig& c, const std::string& v) { c.sizes.train_len = parse_range("data.train_len", v); },
       [](const RunConfig& c) { return range_text(c.sizes.train_len); }},
      {"data.test_len", [](RunConfig& c, const std::string& v) { c.sizes.test_len = parse_range("data.test_len", v); },
       [](const RunConfig& c) { return range_text(c.sizes.test_len); }},
      FIELD_INT("data.seed", data_seed, std::uint64_t),
      {"decode.mode", [](RunConfig& c, const std::string& v) { c.decode.mode = decoding::parse_mode(v); },
       [](const RunConfig& c) { return std::string(decoding::mode_name(c.decode.mode)); }},
      {"decode.mask", [](RunConfig& c, const std::string& v) { c.decode.mask = decoding::parse_mask_kind(v); },
       [](const RunConfig& c) { return std::string(decoding::mask_kind_name(c.decode.mask)); }},
      FIELD_DOUBLE("decode.eos_penalty", decode.eos_penalty),
      FIELD_INT("decode.max_len", decode.max_len, int),
      FIELD_INT("decode.max_steps", decode.max_steps, int),
      FIELD_INT("decode.beam", beam, int),
      FIELD_INT("decode.budget", budget, std::size_t),
      {"bench.budgets",
       [](RunConfig& c, const std::string& v) {
         c.bench_budgets.clear();
         std::stringstream ss(v);
         std::string item;
         while (std::getline(ss, item, ','))
           c.bench_budgets.push_back(parse_number<std::size_t>("bench.budgets", trim(item)));
       },
       [](const RunConfig& c) {
         std::string s;
         for (std::size_t i = 0; i < c.bench_budgets.size(); ++i)
           s += (i ? "," : "") + std::to_string(c.bench_budgets[i]);
         return s;
       }},
      FIELD_INT("bench.repeats", bench_repeats, int),
      FIELD_INT("bench.warmup", bench_warmup, int),
  };
  return table;
}

#undef FIELD_INT
#undef FIELD_DOUBLE

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields())
    if (key == f.key) {
      f.set(*this, value);
      return;
    }
  throw Error("config: unknown key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> RunConfig::items() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(*this));
  return out;
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "version = " << kVersion << '\n';
  for (const auto& [k, v] : items()) os << k << " = " << v << '\n';
  return os.str();
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (beam < 1) throw Error("config: decode.beam must be >= 1");
  if (decode.eos_penalty < 0.0) throw Error("config: decode.eos_penalty must be >= 0");
  if (bench_repeats < 1 || bench_warmup < 0) throw Error("config: bench repeats must be >= 1 and warmup >= 0");
  for (std::size_t i = 1; i < bench_budgets.size(); ++i)
    if (bench_budgets[i] <= bench_budgets[i - 1]) throw Error("config: bench.budgets must increase");
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool versioned = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!versioned) {
      if (key != "version") throw FormatError("config: first setting must be 'version'");
      if (value != std::to_string(RunConfig::kVersion))
        throw FormatError("config: unsupported version " + value);
      versioned = true;
      continue;
    }
    try {
      cfg.set(key, value);
    } catch (const Error& e) {
      throw FormatError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!versioned) throw FormatError("config: missing 'version = 1'");
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw Error("override '" + assignment + "' is not key=value");
  cfg.set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

}  // namespace fracpos

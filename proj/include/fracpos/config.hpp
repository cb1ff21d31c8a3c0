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

#include <filesystem>
#include <string>
#include <vector>

#include "fracpos/data.hpp"
#include "fracpos/decoding.hpp"
#include "fracpos/model.hpp"
#include "fracpos/training.hpp"

namespace fracpos {

// Everything a CLI run depends on. Textual form: one `key = value` per line,
// `#` starts a comment, and the first setting must be `version = 1`.
struct RunConfig {
  static constexpr int kVersion = 1;

  ModelConfig model;
  training::TrainConfig train;

  data::Task task = data::Task::copy;
  data::SplitSizes sizes;
  std::uint64_t data_seed = 1;

  decoding::Options decode;
  int beam = 4;  // L2R beam width
  std::size_t budget = 0;  // decode token budget; 0 decodes one instance at a time

  std::vector<std::size_t> bench_budgets{64, 256, 1024};
  int bench_repeats = 3;
  int bench_warmup = 1;

  // Applies one `key=value` setting; throws on an unknown key or bad value.
  void set(const std::string& key, const std::string& value);
  // Every key with its current value, in a fixed order.
  std::vector<std::pair<std::string, std::string>> items() const;
  std::string to_text() const;
  void validate() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
// "key=value"
void apply_override(RunConfig& cfg, const std::string& assignment);

}  // namespace fracpos

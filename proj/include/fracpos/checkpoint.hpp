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
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fracpos/autograd.hpp"

namespace fracpos {

// Binary container: magic "FRACPOS\0", u32 version, u32 tensor count,
// u32-prefixed metadata text, then per tensor a u32-prefixed name, u32 rank,
// u64 dims and the little-endian IEEE-754 float64 payload.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint snapshot(std::span<Parameter* const> params, std::string meta = {});
// Copies values by name; throws if a name is missing or a shape differs.
void restore(std::span<Parameter* const> params, const Checkpoint& ckpt);

// Arithmetic mean of checkpoints with identical names and shapes.
Checkpoint average_checkpoints(std::span<const Checkpoint> ckpts);

}  // namespace fracpos

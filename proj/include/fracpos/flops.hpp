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

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace fracpos::flops {

enum class Component : std::uint8_t {
  encoder,
  self_attn,
  cross_attn,
  feed_forward,
  heads,
  fpe_linear,
  other,
};
inline constexpr std::size_t kComponentCount = 7;
std::string_view component_name(Component c);

struct MatmulRecord {
  Component component;
  int step;
  std::size_t m, k, n;
};

// Log of every matrix multiply shape executed while the trace is active.
struct Trace {
  std::vector<MatmulRecord> records;
  int step = 0;
};

// Multiply counts in "2·m·k·n" units (one multiply-accumulate = 2 FLOPs).
struct Report {
  std::uint64_t total = 0;
  std::array<std::uint64_t, kComponentCount> by_component{};
  std::vector<std::uint64_t> per_step;

  std::uint64_t component(Component c) const { return by_component[static_cast<std::size_t>(c)]; }
};

Report count(const Trace& trace);

// Called by the matmul-bearing ops; no-op unless a trace is active on this thread.
void record_matmul(std::size_t m, std::size_t k, std::size_t n);

// Activates `trace` on the current thread for the scope's lifetime.
class ScopedTrace {
 public:
  explicit ScopedTrace(Trace& trace);
  ~ScopedTrace();
  ScopedTrace(const ScopedTrace&) = delete;
  ScopedTrace& operator=(const ScopedTrace&) = delete;

 private:
  Trace* previous_;
};

// Labels the matmuls recorded inside the scope.
class ComponentScope {
 public:
  explicit ComponentScope(Component c);
  ~ComponentScope();
  ComponentScope(const ComponentScope&) = delete;
  ComponentScope& operator=(const ComponentScope&) = delete;

 private:
  Component previous_;
};

void set_step(int step);
Trace* active_trace();

}  // namespace fracpos::flops

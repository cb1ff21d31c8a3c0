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

#include "fracpos/flops.hpp"

namespace fracpos::flops {
namespace {
thread_local Trace* g_trace = nullptr;
thread_local Component g_component = Component::other;
}  // namespace

std::string_view component_name(Component c) {
  switch (c) {
    case Component::encoder: return "encoder";
    case Component::self_attn: return "self_attn";
    case Component::cross_attn: return "cross_attn";
    case Component::feed_forward: return "feed_forward";
    case Component::heads: return "heads";
    case Component::fpe_linear: return "fpe_linear";
    case Component::other: return "other";
  }
  return "?";
}

Report count(const Trace& trace) {
  Report r;
  for (const auto& rec : trace.records) {
    const std::uint64_t f = 2ULL * rec.m * rec.k * rec.n;
    r.total += f;
    r.by_component[static_cast<std::size_t>(rec.component)] += f;
    const auto s = static_cast<std::size_t>(rec.step < 0 ? 0 : rec.step);
    if (r.per_step.size() <= s) r.per_step.resize(s + 1, 0);
    r.per_step[s] += f;
  }
  return r;
}

void record_matmul(std::size_t m, std::size_t k, std::size_t n) {
  if (g_trace == nullptr || m == 0 || k == 0 || n == 0) return;
  g_trace->records.push_back({g_component, g_trace->step, m, k, n});
}

ScopedTrace::ScopedTrace(Trace& trace) : previous_(g_trace) { g_trace = &trace; }
ScopedTrace::~ScopedTrace() { g_trace = previous_; }

ComponentScope::ComponentScope(Component c) : previous_(g_component) { g_component = c; }
ComponentScope::~ComponentScope() { g_component = previous_; }

void set_step(int step) {
  if (g_trace) g_trace->step = step;
}

Trace* active_trace() { return g_trace; }

}  // namespace fracpos::flops

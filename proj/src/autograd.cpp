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

#include "fracpos/autograd.hpp"

#include "fracpos/error.hpp"

namespace fracpos {

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)), value(std::move(value_)), grad(value.shape(), 0.0) {}

const Tensor& Var::value() const { return graph_->value(*this); }
Tensor& Var::grad() const { return graph_->grad(*this); }
bool Var::requires_grad() const { return graph_->requires_grad(*this); }

Var Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Graph::constant_ref(const Tensor& value) {
  Node n;
  n.borrowed = &value;
  return push(std::move(n));
}

Var Graph::param(Parameter& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var(this, it->second);
  Node n;
  n.borrowed = &p.value;
  if (record_) {
    n.requires_grad = true;
    n.grad_target = &p.grad;
  }
  Var v = push(std::move(n));
  param_ids_.emplace(&p, v.id_);
  return v;
}

Var Graph::make(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  bool rg = false;
  if (record_) {
    for (const Var& in : inputs)
      if (in.valid() && node(in).requires_grad) rg = true;
  }
  return make(std::move(value), rg, std::move(backward));
}

Var Graph::make(Tensor value, bool requires_grad, Backward backward) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = record_ && requires_grad;
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

const Tensor& Graph::value(Var v) const {
  const Node& n = node(v);
  return n.borrowed ? *n.borrowed : n.owned;
}

Tensor& Graph::grad(Var v) {
  Node& n = node(v);
  n.grad_touched = true;
  if (n.grad_target) return *n.grad_target;
  const Tensor& val = n.borrowed ? *n.borrowed : n.owned;
  if (!n.grad_owned.same_shape(val)) n.grad_owned = Tensor(val.shape(), 0.0);
  return n.grad_owned;
}

void Graph::backward(Var loss) {
  if (!record_) throw Error("backward: graph was built without recording");
  if (value(loss).size() != 1) throw ShapeError("backward: loss must be a single value");
  if (!node(loss).requires_grad) return;
  grad(loss)[0] += 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || !n.grad_touched) continue;
    n.backward(n.grad_owned);
  }
}

}  // namespace fracpos

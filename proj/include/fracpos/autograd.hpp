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
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <unordered_map>

#include "fracpos/tensor.hpp"

namespace fracpos {

// A named trainable tensor and its accumulated gradient.
struct Parameter {
  Parameter(std::string name, Tensor value);

  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad.fill(0.0); }
};

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return graph_ != nullptr; }
  Graph* graph() const { return graph_; }
  std::uint32_t id() const { return id_; }

  const Tensor& value() const;
  Tensor& grad() const;
  bool requires_grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Graph;
  Var(Graph* g, std::uint32_t id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  std::uint32_t id_ = 0;
};

// Reverse-mode tape. Nodes are recorded in creation order, which is a valid
// topological order, so backward() simply walks the tape in reverse.
//
// A graph built with record=false keeps values only; ops skip saving the
// intermediates they would need for backward. That is the inference path.
class Graph {
 public:
  using Backward = std::function<void(const Tensor& out_grad)>;

  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor value);
  // Borrows `value` without copying; the tensor must outlive the graph.
  Var constant_ref(const Tensor& value);
  // Leaf bound to a parameter; gradients accumulate into p.grad. Repeated
  // calls with the same parameter return the same node.
  Var param(Parameter& p);

  // Adds an op output. The node requires grad iff any input does; `backward`
  // is kept only in that case.
  Var make(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var make(Tensor value, bool requires_grad, Backward backward);

  // Seeds d(loss)/d(loss) = 1 and propagates. `loss` must hold one value.
  void backward(Var loss);

  const Tensor& value(Var v) const;
  Tensor& grad(Var v);
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* borrowed = nullptr;
    Tensor grad_owned;
    Tensor* grad_target = nullptr;
    bool requires_grad = false;
    bool grad_touched = false;
    Backward backward;
  };

  const Node& node(Var v) const { return nodes_[v.id_]; }
  Node& node(Var v) { return nodes_[v.id_]; }
  Var push(Node n);

  bool record_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::uint32_t> param_ids_;
};

}  // namespace fracpos

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

#include "fracpos/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fracpos/error.hpp"

namespace fracpos {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size())
    throw ShapeError("tensor: shape " + shape_string() + " does not match " +
                     std::to_string(data_.size()) + " values");
}

std::size_t Tensor::rows() const {
  if (shape_.empty()) return 0;
  return shape_.size() == 1 ? 1 : shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 0;
  return shape_.back();
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::append_rows(const Tensor& other) {
  if (other.empty()) return;
  if (shape_.empty()) {
    *this = Tensor({0, other.cols()});
  }
  if (rank() != 2 || other.cols() != cols())
    throw ShapeError("append_rows: " + shape_string() + " vs " + other.shape_string());
  data_.insert(data_.end(), other.data_.begin(), other.data_.end());
  shape_[0] += other.rows();
}

void Tensor::append_row(std::span<const double> row) {
  if (shape_.empty()) *this = Tensor({0, row.size()});
  if (rank() != 2 || row.size() != cols()) throw ShapeError("append_row: width mismatch");
  data_.insert(data_.end(), row.begin(), row.end());
  shape_[0] += 1;
}

std::string Tensor::shape_string() const {
  std::string s = "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape_[i]);
  }
  return s + "]";
}

}  // namespace fracpos

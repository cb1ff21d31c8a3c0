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

#include "fracpos/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "fracpos/error.hpp"

namespace fracpos {
namespace {

constexpr char kMagic[8] = {'F', 'R', 'A', 'C', 'P', 'O', 'S', '\0'};

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw FormatError("checkpoint: truncated file");
  }
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, Checkpoint::kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.meta.size()));
  out += ckpt.meta;
  for (const auto& [name, t] : ckpt.tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_le<std::uint64_t>(out, d);
    for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("checkpoint: cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("checkpoint: cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(std::move(data));
  if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
    throw FormatError("checkpoint: bad magic in " + path.string());
  const auto version = r.get<std::uint32_t>();
  if (version != Checkpoint::kVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  Checkpoint ckpt;
  ckpt.meta = r.bytes(r.get<std::uint32_t>());
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.bytes(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    std::vector<double> values(shape_product(shape));
    for (double& v : values) v = std::bit_cast<double>(r.get<std::uint64_t>());
    ckpt.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes in " + path.string());
  return ckpt;
}

Checkpoint snapshot(std::span<Parameter* const> params, std::string meta) {
  Checkpoint c;
  c.meta = std::move(meta);
  for (const Parameter* p : params) c.tensors.emplace_back(p->name, p->value);
  return c;
}

void restore(std::span<Parameter* const> params, const Checkpoint& ckpt) {
  for (Parameter* p : params) {
    const Tensor* t = ckpt.find(p->name);
    if (!t) throw FormatError("checkpoint: missing parameter " + p->name);
    if (!t->same_shape(p->value))
      throw ShapeError("checkpoint: shape mismatch for " + p->name + ": " + t->shape_string() +
                       " vs " + p->value.shape_string());
    p->value = *t;
  }
}

Checkpoint average_checkpoints(std::span<const Checkpoint> ckpts) {
  if (ckpts.empty()) throw Error("average_checkpoints: no checkpoints");
  // mean = first + sum(x_i - first) / k, so identical inputs come back bit-exact.
  const Checkpoint& first = ckpts.front();
  Checkpoint avg = first;
  std::vector<Tensor> offsets;
  for (const auto& nt : first.tensors) offsets.emplace_back(nt.second.shape(), 0.0);
  for (std::size_t c = 1; c < ckpts.size(); ++c) {
    const Checkpoint& other = ckpts[c];
    if (other.tensors.size() != first.tensors.size())
      throw ShapeError("average_checkpoints: parameter sets differ");
    for (std::size_t i = 0; i < first.tensors.size(); ++i) {
      const auto& [name, t] = other.tensors[i];
      if (name != first.tensors[i].first || !t.same_shape(first.tensors[i].second))
        throw ShapeError("average_checkpoints: mismatch at " + name);
      const Tensor& base = first.tensors[i].second;
      for (std::size_t j = 0; j < t.size(); ++j) offsets[i][j] += t[j] - base[j];
    }
  }
  const auto k = static_cast<double>(ckpts.size());
  for (std::size_t i = 0; i < avg.tensors.size(); ++i) {
    Tensor& t = avg.tensors[i].second;
    for (std::size_t j = 0; j < t.size(); ++j) t[j] += offsets[i][j] / k;
  }
  return avg;
}

}  // namespace fracpos

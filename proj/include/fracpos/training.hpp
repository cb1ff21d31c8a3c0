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
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fracpos/adam.hpp"
#include "fracpos/autograd.hpp"
#include "fracpos/checkpoint.hpp"
#include "fracpos/data.hpp"
#include "fracpos/model.hpp"
#include "fracpos/rng.hpp"

namespace fracpos::training {

// A target with a subset of its tokens already present. spans[l] is the
// half-open range of target indices missing from slot l.
struct TrainExample {
  std::size_t id = 0;
  std::vector<int> src;
  std::vector<int> tgt;
  std::vector<std::size_t> kept;
  std::vector<std::pair<std::size_t, std::size_t>> spans;
};

struct Subset {
  std::vector<std::size_t> kept;
  std::vector<std::pair<std::size_t, std::size_t>> spans;
};

// kept = the given sorted indices of 0..T-1; spans derived from the gaps.
Subset subset_from_kept(std::size_t T, std::vector<std::size_t> kept);
// k uniform in {0..T}, then a uniform k-subset.
Subset sample_hypothesis(std::size_t T, Rng& rng);

// Softmax over -|i - (m-1)/2| / tau.
std::vector<double> binary_tree_weights(std::size_t m, double tau);

// Which self-attention mask the decoder sees at training time.
//   full:       every row attends to every row.
//   generation: the kept tokens get the balanced-tree depth + 1 of the
//               snapshot as their step, and the generation-order mask is used.
//   automatic:  full for ABS, generation for REL and FPE.
enum class TrainMask { automatic, full, generation };
std::string_view train_mask_name(TrainMask m);
TrainMask parse_train_mask(std::string_view s);
TrainMask resolve_train_mask(TrainMask m, posenc::Scheme scheme);

// Mean over examples of the slot-normalised binary-tree loss. `per_example`,
// when given, receives each example's loss.
Var insertion_loss(Graph& g, const Model& model, std::span<const TrainExample> batch, double tau,
                   TrainMask mask = TrainMask::automatic, std::vector<double>* per_example = nullptr);

// Mean token cross-entropy of tgt + EOS under teacher forcing, with label
// smoothing `eps` spread uniformly over the head's valid outputs.
Var l2r_loss(Graph& g, const Model& model, std::span<const data::Pair> batch, double eps);

struct TrainConfig {
  long steps = 3000;
  int batch_size = 32;
  double peak_lr = 5e-4;
  long warmup = 400;
  double tau = 1.0;
  double label_smoothing = 0.1;  // L2R only
  long validate_every = 500;
  int average_best_k = 5;  // 0 keeps the final parameters
  TrainMask mask = TrainMask::automatic;
  std::size_t dev_limit = 200;  // dev pairs used per validation
  std::uint64_t seed = 1;

  void validate() const;
};

struct ValidationRow {
  long step;
  double train_loss;
  double dev_loss;
  double dev_metric;
};

// Quality of the current model on the dev pairs (higher is better).
using DevMetric = std::function<double(const Model&, std::span<const data::Pair>)>;

// The batch used at `step`: indices drawn with Rng(seed, "batch", step), plus
// hypothesis subsets for the insertion head.
std::vector<TrainExample> make_batch(const data::Dataset& train, const TrainConfig& cfg, long step);

// Owns the optimiser state of one training run over `model`.
class Trainer {
 public:
  Trainer(Model& model, TrainConfig config);

  // One optimiser step on make_batch(train, step()); returns the batch loss.
  // Throws NumericError on a non-finite loss or gradient; parameters are left
  // untouched in that case.
  double train_step(const data::Dataset& train);
  double train_step(const data::Dataset& train, double lr);
  // Loss of a batch without updating anything.
  double batch_loss(std::span<const TrainExample> batch) const;
  double dev_loss(std::span<const data::Pair> dev) const;

  long step() const { return step_; }
  const TrainConfig& config() const { return config_; }
  Model& model() { return model_; }

  // Parameters, Adam moments and the step counter.
  Checkpoint state() const;
  void restore_state(const Checkpoint& ckpt);

 private:
  Model& model_;
  TrainConfig config_;
  std::vector<Parameter*> params_;
  Adam adam_;
  long step_ = 0;
};

struct TrainResult {
  std::vector<ValidationRow> curve;
  long steps_done = 0;
  bool diverged = false;
  std::string message;
  double seconds = 0.0;
};

// Runs config.steps - trainer.step() steps, validating every validate_every
// steps and at the end. With average_best_k > 0 the model ends up holding the
// average of the best k validated checkpoints. On divergence the parameters of
// the last validated checkpoint are restored and training stops. `on_row`
// sees each validation row as it is produced.
TrainResult train(Trainer& trainer, const data::Dataset& train, const data::Dataset* dev,
                  const DevMetric& metric, const std::function<void(const ValidationRow&)>& on_row = {});

}  // namespace fracpos::training

// Copyright 2026 The DSTC Authors
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
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dstc/autodiff.hpp"
#include "dstc/layer.hpp"

namespace dstc {

enum class TaskKind { dilation_recovery, ellipse_superres, checkerboard_probe };

std::string to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);

/**
 * Desk-scale synthetic task.
 *
 * dilation_recovery: random inputs in [0, 1], targets from a frozen
 *   dstc_parametrized layer (K=3, stride 2, padding 1, output_padding 1,
 *   zero heads, dilation fixed to true_dilation, random W).
 * ellipse_superres: anti-aliased random ellipses rendered at the output
 *   resolution; inputs are their 2x box downsampling.
 * checkerboard_probe: constant-one inputs and targets.
 */
struct ToyTask {
  TaskKind kind = TaskKind::dilation_recovery;
  std::uint64_t seed = 0;
  std::size_t samples = 8;
  std::size_t eval_samples = 4;
  int dimension = 2;
  std::size_t channels = 2;
  std::vector<long> input_spatial{8, 8};
  std::vector<long> output_spatial{16, 16};
  double true_dilation = 3.0;

  void validate() const;
};

nlohmann::json to_json(const ToyTask& t);
ToyTask task_from_json(const nlohmann::json& j);

struct Sample {
  Tensor input;
  Tensor target;
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> eval;
  std::optional<DstcConfig> truth_config;
  std::optional<LayerParams> truth_params;
};

/// Layer that generates dilation_recovery targets.
DstcConfig dilation_truth_config(const ToyTask& task);

Dataset gen_task(const ToyTask& task);

enum class OptimAlgorithm { sgd, adam };

std::string to_string(OptimAlgorithm a);

struct OptimState {
  OptimAlgorithm algorithm = OptimAlgorithm::adam;
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t t = 0;
  std::vector<Tensor> m;  // per LayerParams::named() entry
  std::vector<Tensor> v;

  /// One update of every parameter from its gradient.
  void step(LayerParams& params, const GradBundle& grads);
};

nlohmann::json to_json(const OptimState& o);
OptimState optim_from_json(const nlohmann::json& j);

double mse(const Tensor& y, const Tensor& target);

struct HistoryRow {
  std::size_t step = 0;
  double loss = 0.0;
  double wall_ms = 0.0;
};

struct TrainOptions {
  std::size_t steps = 100;
  /// Loss checkpoints every eval_every steps (0: steps / 20, at least 1).
  std::size_t eval_every = 0;
  std::uint64_t seed = 0;
  /// Record elapsed milliseconds; left at 0 otherwise so histories are
  /// reproducible byte for byte.
  bool record_wall_time = false;
  /// Starting parameters; init_layer(cfg, seed) when absent.
  std::optional<LayerParams> init;
};

struct TrainResult {
  std::vector<HistoryRow> history;
  LayerParams params;
  double final_train_loss = 0.0;
  double final_eval_loss = 0.0;
};

/// Full-batch MSE training over dataset.train. Loss at a checkpoint is the
/// mean over all train samples before that step's update; the last row is
/// evaluated after the final update.
TrainResult train(const DstcConfig& cfg, const Dataset& data, OptimState opt, const TrainOptions& opts);
TrainResult train(const DstcConfig& cfg, const ToyTask& task, OptimState opt, std::size_t steps, std::uint64_t seed);

/// Mean over samples of mse(forward(input), target).
double evaluate(const DstcConfig& cfg, const LayerParams& params, const std::vector<Sample>& samples);

/// Mean squared deviation of y from its stride^D block means (blocks
/// aligned at the origin, per channel).
double highfreq_energy(const Tensor& y, int stride);

/// highfreq_energy of a freshly initialized layer's response to a
/// constant-one input.
double checkerboard_energy(const DstcConfig& cfg, const std::vector<long>& input_spatial, std::uint64_t seed);

std::string history_csv(const std::vector<HistoryRow>& history);

}  // namespace dstc

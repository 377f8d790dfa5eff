/*
 * Copyright (c) 2026, The precipdiff Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include <torch/torch.h>

#include "precipdiff/det_model.hpp"
#include "precipdiff/features.hpp"
#include "precipdiff/grid.hpp"
#include "precipdiff/io.hpp"
#include "precipdiff/nn.hpp"
#include "precipdiff/state.hpp"

namespace precipdiff::det {

/// One example without the batch dimension.
struct DetSample {
  torch::Tensor surface;  ///< [Cs, H, W]
  torch::Tensor upper;    ///< [Cu, L, H, W]
  torch::Tensor target;   ///< [1, H, W] normalized dBZ; undefined at inference
  Timestamp timestamp = 0;
};

/// Standardized two-step input, variable-major ([v0(t-1), v0(t), v1(t-1), ...]).
/// When `statics` is given the feature stack at `cur.timestamp` is appended
/// to the surface channels.
DetSample assemble_sample(const AtmosphericState& prev, const AtmosphericState& cur,
                          const NormalizationStats& stats, const StaticFields* statics);

/// Stacks samples along a new batch dimension.
DetSample collate(const std::vector<DetSample>& data, const std::vector<std::int64_t>& idx);

/// Plain MSE or the weighted MSE + SSIM objective, per config.
torch::Tensor det_loss(const DetModelConfig& cfg, const torch::Tensor& pred, const torch::Tensor& target);

struct DetTrainConfig {
  std::int64_t steps = 300;
  std::int64_t batch_size = 4;
  std::uint64_t seed = 0;
  nn::OptimConfig optim;

  nlohmann::json to_json() const;
  static DetTrainConfig from_json(const nlohmann::json& j);
};

/// Owns a model and its optimizer; everything needed to resume lives in the
/// checkpoint.
class DetTrainer {
 public:
  DetTrainer(const DetModelConfig& model_cfg, const DetTrainConfig& train_cfg);

  /// One optimizer step. Returns the loss before the update.
  double step(const std::vector<DetSample>& data);
  /// Runs until `train_cfg.steps` steps have been taken in total.
  void train(const std::vector<DetSample>& data,
             const std::function<void(std::int64_t, double)>& on_step = {});

  Checkpoint checkpoint() const;
  static std::unique_ptr<DetTrainer> resume(const Checkpoint& ckpt);

  DetModel& model() { return model_; }
  const std::vector<double>& history() const { return history_; }
  std::int64_t steps_taken() const { return optim_->steps_taken(); }

 private:
  DetModelConfig model_cfg_;
  DetTrainConfig train_cfg_;
  DetModel model_{nullptr};
  std::unique_ptr<nn::Adam> optim_;
  std::vector<double> history_;
};

/// Model with weights from a det checkpoint, in eval mode.
DetModel load_det_model(const Checkpoint& ckpt);

/// Normalized-dBZ prediction [H, W] for one sample.
torch::Tensor det_predict(DetModel& model, const DetSample& sample);

}  // namespace precipdiff::det

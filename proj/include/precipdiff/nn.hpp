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
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "precipdiff/grid.hpp"
#include "precipdiff/io.hpp"

namespace precipdiff::nn {

/// Tensor with the field's full shape.
torch::Tensor to_tensor(const GridField& f, torch::Dtype dtype = torch::kFloat32);

/// Copies a tensor (any float dtype, numel == template size) into a field
/// with the template's metadata.
GridField from_tensor(const torch::Tensor& t, const GridField& like);

/// Appends every parameter and buffer of `m` to the checkpoint under `prefix`.
void export_module(const torch::nn::Module& m, Checkpoint& ckpt, const std::string& prefix);

/// Loads parameters and buffers saved by export_module. Shapes must match.
void import_module(torch::nn::Module& m, const Checkpoint& ckpt, const std::string& prefix);

NamedArray to_named_array(const std::string& name, const torch::Tensor& t);
torch::Tensor from_named_array(const NamedArray& a);

/// Deterministic CPU generator for a seed.
at::Generator make_generator(std::uint64_t seed);

/// Mixes a base seed with a stream index into a new 64-bit seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

struct OptimConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 1.0;  ///< global gradient-norm clip; <= 0 disables
  std::int64_t total_steps = 1000;
  bool cosine = true;
};

nlohmann::json to_json(const OptimConfig& c);
OptimConfig optim_from_json(const nlohmann::json& j);

/// Sample indices of one mini-batch. The whole set in order when
/// batch >= n, otherwise a seeded draw without replacement that depends only
/// on (seed, step).
std::vector<std::int64_t> batch_indices(std::int64_t n, std::int64_t batch, std::uint64_t seed, std::int64_t step);

/// Adam with bias correction, decoupled weight decay, cosine learning-rate
/// decay over `total_steps` and global-norm gradient clipping. Holds its own
/// moment buffers so that they can be checkpointed alongside the weights.
class Adam {
 public:
  Adam(std::vector<torch::Tensor> params, OptimConfig cfg);

  void zero_grad();
  /// Clips, then applies one update. Returns the pre-clip gradient norm.
  double step();

  double lr_at(std::int64_t step) const;
  std::int64_t steps_taken() const { return step_; }

  void export_state(Checkpoint& ckpt, const std::string& prefix) const;
  void import_state(const Checkpoint& ckpt, const std::string& prefix);

 private:
  std::vector<torch::Tensor> params_;
  std::vector<torch::Tensor> m_;
  std::vector<torch::Tensor> v_;
  OptimConfig cfg_;
  std::int64_t step_ = 0;
};

/// Global L2 norm of all gradients.
double grad_norm(const std::vector<torch::Tensor>& params);

/// Throws NumericError if the value is not finite.
void require_finite(double value, const std::string& what);

}  // namespace precipdiff::nn

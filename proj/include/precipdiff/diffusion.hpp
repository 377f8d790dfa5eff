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
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "precipdiff/io.hpp"
#include "precipdiff/nn.hpp"

namespace precipdiff::diffusion {

enum class ScheduleKind { kLinear, kCosine };

/// Tables indexed by timestep t in [0, T]; entry 0 is the clean state
/// (beta 0, alpha_bar 1).
struct NoiseSchedule {
  std::int64_t steps = 0;
  ScheduleKind kind = ScheduleKind::kLinear;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  double ab(std::int64_t t) const;
  nlohmann::json to_json() const;
  static NoiseSchedule from_json(const nlohmann::json& j);
};

/// Linear: beta from beta_start to beta_end over t = 1..T. Cosine: the
/// squared-cosine alpha_bar curve with offset 0.008, betas capped at 0.999.
NoiseSchedule make_schedule(std::int64_t steps, ScheduleKind kind = ScheduleKind::kLinear, double beta_start = 1e-4,
                            double beta_end = 0.02);

/// sqrt(alpha_bar[t]) * z0 + sqrt(1 - alpha_bar[t]) * eps, one t per batch row.
torch::Tensor forward_noise(const torch::Tensor& z0, const torch::Tensor& t, const torch::Tensor& eps,
                            const NoiseSchedule& s);
torch::Tensor forward_noise(const torch::Tensor& z0, std::int64_t t, const torch::Tensor& eps, const NoiseSchedule& s);

/// One deterministic (eta = 0) DDIM update from t to t_prev. t_prev == t
/// returns z_t unchanged; t_prev > t is rejected.
torch::Tensor ddim_step(const torch::Tensor& z_t, const torch::Tensor& eps_hat, std::int64_t t, std::int64_t t_prev,
                        const NoiseSchedule& s);

/// Ascending uniform sub-sequence floor(i * T / S) + 1, i = 0..S-1.
std::vector<std::int64_t> ddim_timesteps(std::int64_t total, std::int64_t steps);

/// Noise prediction for a batch of latents at one timestep.
using Denoiser = std::function<torch::Tensor(const torch::Tensor& z_t, std::int64_t t)>;

/// Runs the DDIM chain from z_T = `noise` down to t = 0.
torch::Tensor ddim_sample(const Denoiser& denoise, const torch::Tensor& noise, const NoiseSchedule& s,
                          std::int64_t steps);

// Denoiser network -------------------------------------------------------------

struct DitConfig {
  // Latent.
  std::int64_t latent_channels = 16;
  std::int64_t latent_height = 10;
  std::int64_t latent_width = 14;
  std::int64_t patch = 2;
  // Condition: surface variables (one channel each) then upper-air
  // variables (`levels` channels each).
  std::int64_t cond_surface_vars = 5;
  std::int64_t cond_upper_vars = 5;
  std::int64_t levels = 5;
  std::int64_t cond_height = 20;
  std::int64_t cond_width = 28;
  std::int64_t cond_patch = 4;
  std::int64_t cond_hidden = 8;  ///< per-variable width of the condition embedding
  // Transformer.
  std::int64_t hidden = 128;
  std::int64_t depth = 4;
  std::int64_t heads = 4;
  double mlp_ratio = 4.0;

  std::int64_t cond_channels() const { return cond_surface_vars + cond_upper_vars * levels; }
  std::int64_t token_height() const;
  std::int64_t token_width() const;
  std::int64_t cond_token_height() const;
  std::int64_t cond_token_width() const;
  void validate() const;
  nlohmann::json to_json() const;
  static DitConfig from_json(const nlohmann::json& j);
};

/// [len, dim] fixed 2-D sine-cosine position table (row-major tokens).
torch::Tensor sincos_position_table(std::int64_t height, std::int64_t width, std::int64_t dim);

/// [B, dim] sinusoidal timestep features.
torch::Tensor timestep_features(const torch::Tensor& t, std::int64_t dim);

/// Transformer block whose LayerNorm shift/scale and residual gates come
/// from the timestep embedding; the modulation layer starts at zero so each
/// block starts as the identity.
class DitBlockImpl : public torch::nn::Module {
 public:
  DitBlockImpl(std::int64_t dim, std::int64_t heads, double mlp_ratio);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& c);

 private:
  std::int64_t heads_;
  torch::nn::LayerNorm norm1_{nullptr};
  torch::nn::Linear qkv_{nullptr};
  torch::nn::Linear proj_{nullptr};
  torch::nn::LayerNorm norm2_{nullptr};
  torch::nn::Linear fc1_{nullptr};
  torch::nn::Linear fc2_{nullptr};
  torch::nn::Linear modulation_{nullptr};
};
TORCH_MODULE(DitBlock);

class DitImpl : public torch::nn::Module {
 public:
  explicit DitImpl(const DitConfig& cfg);
  /// z_t [B, Z, h, w]; t [B] (int64); cond [B, Cc, Hc, Wc]. Returns eps_hat
  /// with the latent's shape.
  torch::Tensor forward(const torch::Tensor& z_t, const torch::Tensor& t, const torch::Tensor& cond);
  /// Condition tokens on the latent token grid, [B, tokens, hidden].
  torch::Tensor embed_condition(const torch::Tensor& cond);

  const DitConfig& config() const { return cfg_; }
  /// Zeroes the final projection (already zero at construction).
  void zero_output_head();

 private:
  DitConfig cfg_;
  torch::nn::Conv2d latent_embed_{nullptr};
  torch::nn::Conv2d cond_surface_{nullptr};
  torch::nn::Conv2d cond_upper_{nullptr};
  torch::nn::Conv2d cond_mix_{nullptr};
  torch::nn::Linear fuse_{nullptr};
  torch::nn::Linear t_fc1_{nullptr};
  torch::nn::Linear t_fc2_{nullptr};
  std::vector<DitBlock> blocks_;
  torch::nn::LayerNorm final_norm_{nullptr};
  torch::nn::Linear final_modulation_{nullptr};
  torch::nn::Linear final_linear_{nullptr};
  torch::Tensor pos_;
};
TORCH_MODULE(Dit);

/// Mean squared error between eps and the prediction at z_t, with t drawn
/// uniformly on [1, T] and eps standard normal, both from `gen`.
torch::Tensor diffusion_loss(Dit& model, const torch::Tensor& z0, const torch::Tensor& cond, const NoiseSchedule& s,
                             at::Generator gen);

/// One latent sample per seed (initial noise drawn from a generator seeded
/// with that seed), all sharing `cond` [Cc, Hc, Wc]. Returns [N, Z, h, w].
torch::Tensor sample_latents(Dit& model, const torch::Tensor& cond, const NoiseSchedule& s, std::int64_t steps,
                             const std::vector<std::uint64_t>& seeds);

// Training ---------------------------------------------------------------------

struct DiffusionSample {
  torch::Tensor latent;  ///< [Z, h, w], normalized latent space
  torch::Tensor cond;    ///< [Cc, Hc, Wc]
};

struct DiffusionTrainConfig {
  std::int64_t steps = 3000;
  std::int64_t batch_size = 8;
  std::uint64_t seed = 0;
  std::int64_t timesteps = 1000;
  ScheduleKind schedule = ScheduleKind::kLinear;
  nn::OptimConfig optim{.lr = 1e-3};

  nlohmann::json to_json() const;
  static DiffusionTrainConfig from_json(const nlohmann::json& j);
};

class DiffusionTrainer {
 public:
  DiffusionTrainer(const DitConfig& cfg, const DiffusionTrainConfig& train_cfg);

  double step(const std::vector<DiffusionSample>& data);
  void train(const std::vector<DiffusionSample>& data,
             const std::function<void(std::int64_t, double)>& on_step = {});

  Checkpoint checkpoint() const;
  static std::unique_ptr<DiffusionTrainer> resume(const Checkpoint& ckpt);

  Dit& model() { return model_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const std::vector<double>& history() const { return history_; }
  std::int64_t steps_taken() const { return optim_->steps_taken(); }

 private:
  DitConfig cfg_;
  DiffusionTrainConfig train_cfg_;
  NoiseSchedule schedule_;
  Dit model_{nullptr};
  std::unique_ptr<nn::Adam> optim_;
  std::vector<double> history_;
};

struct LoadedDiffusion {
  Dit model{nullptr};
  NoiseSchedule schedule;
};

LoadedDiffusion load_diffusion(const Checkpoint& ckpt);

}  // namespace precipdiff::diffusion

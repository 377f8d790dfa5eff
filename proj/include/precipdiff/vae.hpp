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

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "precipdiff/io.hpp"
#include "precipdiff/nn.hpp"

namespace precipdiff::vae {

struct VaeConfig {
  std::int64_t height = 100;
  std::int64_t width = 140;
  std::int64_t latent_channels = 16;
  std::int64_t latent_height = 10;
  std::int64_t latent_width = 14;
  std::array<std::int64_t, 3> channels{16, 32, 64};  ///< per downsampling stage
  std::int64_t bottleneck_channels = 64;
  std::int64_t groups = 8;  ///< GroupNorm groups
  double kl_weight = 1e-6;

  void validate() const;
  nlohmann::json to_json() const;
  static VaeConfig from_json(const nlohmann::json& j);
};

struct LatentCode {
  torch::Tensor mu;      ///< [B, Z, h, w]
  torch::Tensor logvar;  ///< [B, Z, h, w]
  torch::Tensor eps;     ///< noise used for `sample`
  torch::Tensor sample;  ///< mu + exp(logvar / 2) * eps
};

/// GroupNorm -> SiLU -> conv -> GroupNorm -> SiLU -> conv, plus a (1x1
/// projected when widths differ) identity path.
class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(std::int64_t in, std::int64_t out, std::int64_t groups);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::GroupNorm norm1_{nullptr};
  torch::nn::Conv2d conv1_{nullptr};
  torch::nn::GroupNorm norm2_{nullptr};
  torch::nn::Conv2d conv2_{nullptr};
  torch::nn::Conv2d skip_{nullptr};
};
TORCH_MODULE(ResBlock);

/// Three stages of (2 residual blocks + stride-2 conv), a final stage of 2
/// residual blocks, then mean / log-variance heads interpolated to the
/// latent extent.
class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const VaeConfig& cfg);
  /// x [B, 1, H, W] -> [B, 2Z, h, w] (mu channels first).
  torch::Tensor forward(const torch::Tensor& x);

 private:
  VaeConfig cfg_;
  torch::nn::Conv2d conv_in_{nullptr};
  torch::nn::ModuleList stages_{nullptr};
  torch::nn::Sequential mid_{nullptr};
  torch::nn::GroupNorm norm_out_{nullptr};
  torch::nn::Conv2d conv_out_{nullptr};
};
TORCH_MODULE(Encoder);

/// Mirror of the encoder: residual blocks, three nearest x2 upsampling
/// stages, then interpolation to the pixel extent before the output conv.
class DecoderImpl : public torch::nn::Module {
 public:
  explicit DecoderImpl(const VaeConfig& cfg);
  torch::Tensor forward(const torch::Tensor& z);

 private:
  VaeConfig cfg_;
  torch::nn::Conv2d conv_in_{nullptr};
  torch::nn::Sequential mid_{nullptr};
  torch::nn::ModuleList stages_{nullptr};
  torch::nn::GroupNorm norm_out_{nullptr};
  torch::nn::Conv2d conv_out_{nullptr};
};
TORCH_MODULE(Decoder);

class VaeImpl : public torch::nn::Module {
 public:
  explicit VaeImpl(const VaeConfig& cfg);

  /// Draws eps from `gen`.
  LatentCode encode(const torch::Tensor& x, at::Generator gen);
  /// Uses the given eps (same shape as mu).
  LatentCode encode(const torch::Tensor& x, const torch::Tensor& eps);
  torch::Tensor decode(const torch::Tensor& z);

  const VaeConfig& config() const { return cfg_; }

 private:
  std::pair<torch::Tensor, torch::Tensor> moments(const torch::Tensor& x);

  VaeConfig cfg_;
  Encoder encoder_{nullptr};
  Decoder decoder_{nullptr};
};
TORCH_MODULE(Vae);

/// Mean over elements of 0.5 * (mu^2 + exp(logvar) - 1 - logvar).
torch::Tensor kl_divergence(const torch::Tensor& mu, const torch::Tensor& logvar);

/// L1 reconstruction + kl_weight * KL.
torch::Tensor vae_loss(const torch::Tensor& x, const torch::Tensor& recon, const LatentCode& code, double kl_weight);

/// Per-channel affine map that brings encoder means to zero mean and unit
/// variance; the diffusion model works in the normalized space.
struct LatentStats {
  torch::Tensor mean;  ///< [Z]
  torch::Tensor std;   ///< [Z]

  bool defined() const { return mean.defined(); }
  torch::Tensor normalize(const torch::Tensor& z) const;    ///< z [.., Z, h, w]
  torch::Tensor denormalize(const torch::Tensor& z) const;
};

struct VaeTrainConfig {
  std::int64_t steps = 1500;
  std::int64_t batch_size = 4;
  std::uint64_t seed = 0;
  nn::OptimConfig optim{.lr = 1e-3};

  nlohmann::json to_json() const;
  static VaeTrainConfig from_json(const nlohmann::json& j);
};

class VaeTrainer {
 public:
  VaeTrainer(const VaeConfig& cfg, const VaeTrainConfig& train_cfg);

  /// data: residual fields [1, H, W]. Returns the loss before the update.
  double step(const std::vector<torch::Tensor>& data);
  void train(const std::vector<torch::Tensor>& data,
             const std::function<void(std::int64_t, double)>& on_step = {});
  /// Fits LatentStats on the encoder means of `data`.
  void fit_latent_stats(const std::vector<torch::Tensor>& data);

  Checkpoint checkpoint() const;
  static std::unique_ptr<VaeTrainer> resume(const Checkpoint& ckpt);

  Vae& model() { return model_; }
  const LatentStats& latent_stats() const { return stats_; }
  const std::vector<double>& history() const { return history_; }
  std::int64_t steps_taken() const { return optim_->steps_taken(); }

 private:
  VaeConfig cfg_;
  VaeTrainConfig train_cfg_;
  Vae model_{nullptr};
  std::unique_ptr<nn::Adam> optim_;
  std::vector<double> history_;
  LatentStats stats_;
};

struct LoadedVae {
  Vae model{nullptr};
  LatentStats stats;
};

/// Frozen model (eval mode) plus latent statistics, if recorded.
LoadedVae load_vae(const Checkpoint& ckpt);

/// Encoder means [N, Z, h, w] for a set of residual fields, no gradient.
torch::Tensor encode_means(Vae& model, const std::vector<torch::Tensor>& data);

}  // namespace precipdiff::vae

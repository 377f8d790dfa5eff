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
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace precipdiff::det {

enum class EmbeddingKind { kStandard, kNonLinear };
enum class UpsamplerKind { kBilinear, kReconstruction };  // Upsampler1, Upsampler2
enum class LossKind { kMse, kMseSsim };

/// Token grid extent (depth, height, width).
struct Extent3 {
  std::int64_t d = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;
  bool operator==(const Extent3&) const = default;
};

struct DetModelConfig {
  // Input grid.
  std::int64_t height = 25;
  std::int64_t width = 35;
  std::int64_t levels = 5;
  std::int64_t surface_vars = 4;
  std::int64_t upper_vars = 5;
  std::int64_t timesteps = 2;
  bool st_features = true;

  // Architecture.
  std::int64_t embed_dim = 32;
  std::int64_t embed_hidden = 8;  ///< per-variable width of the non-linear embedding
  std::array<std::int64_t, 3> depths{3, 9, 3};
  std::array<std::int64_t, 3> heads{2, 4, 2};
  std::array<std::int64_t, 3> window{2, 6, 6};
  std::int64_t surface_patch = 4;
  std::array<std::int64_t, 3> upper_patch{2, 4, 4};
  double mlp_ratio = 4.0;
  EmbeddingKind embedding = EmbeddingKind::kNonLinear;
  UpsamplerKind upsampler = UpsamplerKind::kReconstruction;

  // Objective.
  LossKind loss = LossKind::kMseSsim;
  double lambda1 = 0.5;
  double lambda2 = 1.5;

  std::int64_t surface_channels() const;
  std::int64_t upper_channels() const { return upper_vars * timesteps; }
  std::int64_t padded_levels() const;
  Extent3 tokens() const;
  Extent3 merged_tokens() const;
  void validate() const;

  nlohmann::json to_json() const;
  static DetModelConfig from_json(const nlohmann::json& j);
};

/// Ablation rows: "baseline", "exp-d1" ... "exp-d4".
inline const std::array<std::string, 5> kExperiments = {"baseline", "exp-d1", "exp-d2", "exp-d3", "exp-d4"};

/// Applies the loss / feature / embedding / upsampler switches of one row.
DetModelConfig apply_experiment(DetModelConfig base, const std::string& experiment);

/// Accepts "d4", "exp-d4" or "baseline".
std::string canonical_experiment(const std::string& name);

// Patch embedding ------------------------------------------------------------

struct Embedded {
  torch::Tensor surface;  ///< [B, C, 1, h, w]
  torch::Tensor upper;    ///< [B, C, d, h, w]
  torch::Tensor tokens;   ///< [B, C, 1 + d, h, w]
};

/// Standard: one joint linear convolution per stream. Non-linear: a grouped
/// convolution per variable, GELU, a pointwise MLP and another GELU.
class PatchEmbedImpl : public torch::nn::Module {
 public:
  explicit PatchEmbedImpl(const DetModelConfig& cfg);
  /// surface [B, Cs, H, W]; upper [B, Cu, L, H, W].
  Embedded forward(const torch::Tensor& surface, const torch::Tensor& upper);

 private:
  DetModelConfig cfg_;
  torch::nn::Conv2d surface_conv_{nullptr};
  torch::nn::Conv2d feature_conv_{nullptr};
  torch::nn::Conv2d surface_mlp_{nullptr};
  torch::nn::Conv3d upper_conv_{nullptr};
  torch::nn::Conv3d upper_mlp_{nullptr};
};
TORCH_MODULE(PatchEmbed);

// 3-D shifted-window transformer -------------------------------------------

/// Multi-head self-attention inside one 3-D window with a learned relative
/// position bias.
class WindowAttention3dImpl : public torch::nn::Module {
 public:
  WindowAttention3dImpl(std::int64_t dim, Extent3 window, std::int64_t heads);
  /// x [num_windows * B, N, C]; mask [num_windows, N, N] or undefined.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& mask = {});
  /// Softmax attention weights [num_windows * B, heads, N, N].
  torch::Tensor attention(const torch::Tensor& x, const torch::Tensor& mask = {});

 private:
  torch::Tensor scores(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& mask);

  std::int64_t heads_;
  double scale_;
  Extent3 window_;
  torch::nn::Linear qkv_{nullptr};
  torch::nn::Linear proj_{nullptr};
  torch::Tensor bias_table_;
  torch::Tensor bias_index_;
};
TORCH_MODULE(WindowAttention3d);

class SwinBlock3dImpl : public torch::nn::Module {
 public:
  SwinBlock3dImpl(std::int64_t dim, std::int64_t heads, Extent3 window, Extent3 shift, double mlp_ratio);
  /// x [B, D, H, W, C]; mask built by SwinLayer3d for the padded extent.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& mask);
  const Extent3& shift() const { return shift_; }

 private:
  Extent3 window_;
  Extent3 shift_;
  torch::nn::LayerNorm norm1_{nullptr};
  WindowAttention3d attn_{nullptr};
  torch::nn::LayerNorm norm2_{nullptr};
  torch::nn::Linear fc1_{nullptr};
  torch::nn::Linear fc2_{nullptr};
};
TORCH_MODULE(SwinBlock3d);

/// Window size clamped to the token extent; no shift along clamped axes.
struct WindowPlan {
  Extent3 window;
  Extent3 shift;
};
WindowPlan plan_windows(Extent3 window, Extent3 extent);

/// A stack of blocks alternating plain and half-window-shifted attention,
/// followed by a LayerNorm.
class SwinLayer3dImpl : public torch::nn::Module {
 public:
  SwinLayer3dImpl(std::int64_t dim, std::int64_t depth, std::int64_t heads, Extent3 window, Extent3 extent,
                  double mlp_ratio);
  torch::Tensor forward(const torch::Tensor& x);  ///< [B, D, H, W, C]
  const WindowPlan& plan() const { return plan_; }
  std::vector<SwinBlock3d>& blocks() { return blocks_; }
  torch::nn::LayerNorm& norm() { return norm_; }

 private:
  WindowPlan plan_;
  std::vector<SwinBlock3d> blocks_;
  torch::nn::LayerNorm norm_{nullptr};
};
TORCH_MODULE(SwinLayer3d);

/// Concatenates 2x2 spatial neighbours (depth preserved), LayerNorm, then
/// projects 4C -> 2C. Odd extents are zero-padded.
class PatchMerging3dImpl : public torch::nn::Module {
 public:
  explicit PatchMerging3dImpl(std::int64_t dim);
  torch::Tensor forward(const torch::Tensor& x);  ///< [B, D, H, W, C] -> [B, D, H', W', 2C]

 private:
  torch::nn::LayerNorm norm_{nullptr};
  torch::nn::Linear reduction_{nullptr};
};
TORCH_MODULE(PatchMerging3d);

struct SwinTrace {
  torch::Tensor layer1;  ///< [B, C, D, h, w]
  torch::Tensor merged;  ///< [B, 2C, D, h', w']
  torch::Tensor layer2;  ///< upsampled back, [B, C, D, h, w]
  torch::Tensor output;  ///< [B, C, D, h, w]
};

/// Three layers (depths from the config) with patch merging after the first,
/// trilinear upsampling + pointwise projection after the second, and skip
/// connections: layer 3 sees layer1 + layer2, and the output is
/// layer3 + layer1 + layer2.
class Swin3dImpl : public torch::nn::Module {
 public:
  explicit Swin3dImpl(const DetModelConfig& cfg);
  torch::Tensor forward(const torch::Tensor& tokens);  ///< [B, C, D, h, w]
  SwinTrace trace(const torch::Tensor& tokens);

  SwinLayer3d& layer(int k) { return k == 0 ? layer1_ : (k == 1 ? layer2_ : layer3_); }
  torch::nn::Conv3d& up_projection() { return up_proj_; }

 private:
  DetModelConfig cfg_;
  SwinLayer3d layer1_{nullptr};
  PatchMerging3d merge_{nullptr};
  SwinLayer3d layer2_{nullptr};
  torch::nn::Conv3d up_proj_{nullptr};
  SwinLayer3d layer3_{nullptr};
};
TORCH_MODULE(Swin3d);

// Upsamplers -----------------------------------------------------------------

struct UpsampleOut {
  torch::Tensor intermediate;  ///< [B, C, 1, ceil(H/2), ceil(W/2)]
  torch::Tensor output;        ///< [B, 1, H, W]
};

/// Upsampler1: depth-collapsing 3-D convolution, bilinear x2, 2-D
/// convolution, bilinear x2; each doubling is cropped back to the grid.
class BilinearUpsamplerImpl : public torch::nn::Module {
 public:
  explicit BilinearUpsamplerImpl(const DetModelConfig& cfg);
  UpsampleOut forward(const torch::Tensor& tokens);
  torch::nn::Conv2d& head() { return conv_; }

 private:
  DetModelConfig cfg_;
  torch::nn::Conv3d depth_conv_{nullptr};
  torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(BilinearUpsampler);

/// Upsampler2: depth-collapsing 3-D convolution + GELU, then a
/// reconstruction head (conv + LeakyReLU, two conv + pixel-shuffle x2
/// stages, refinement conv + LeakyReLU, output conv).
class ReconstructionUpsamplerImpl : public torch::nn::Module {
 public:
  explicit ReconstructionUpsamplerImpl(const DetModelConfig& cfg);
  UpsampleOut forward(const torch::Tensor& tokens);
  torch::nn::Conv2d& head() { return conv_last_; }

 private:
  DetModelConfig cfg_;
  torch::nn::Conv3d depth_conv_{nullptr};
  torch::nn::Conv2d conv_before_{nullptr};
  torch::nn::Conv2d up1_{nullptr};
  torch::nn::Conv2d up2_{nullptr};
  torch::nn::Conv2d conv_hr_{nullptr};
  torch::nn::Conv2d conv_last_{nullptr};
};
TORCH_MODULE(ReconstructionUpsampler);

// Full model -----------------------------------------------------------------

struct DetTrace {
  Embedded embedded;
  SwinTrace swin;
  UpsampleOut upsampled;
};

/// Mean-precipitation network: embedding -> 3-D Swin -> upsampler. Output is
/// normalized-dBZ precipitation [B, 1, H, W] on the input grid.
class DetModelImpl : public torch::nn::Module {
 public:
  explicit DetModelImpl(const DetModelConfig& cfg);
  torch::Tensor forward(const torch::Tensor& surface, const torch::Tensor& upper);
  DetTrace trace(const torch::Tensor& surface, const torch::Tensor& upper);

  /// Zeroes the final output convolution (weights and bias).
  void zero_output_head();

  const DetModelConfig& config() const { return cfg_; }
  Swin3d& swin() { return swin_; }

 private:
  UpsampleOut upsample(const torch::Tensor& tokens);

  DetModelConfig cfg_;
  PatchEmbed embed_{nullptr};
  Swin3d swin_{nullptr};
  BilinearUpsampler up1_{nullptr};
  ReconstructionUpsampler up2_{nullptr};
};
TORCH_MODULE(DetModel);

}  // namespace precipdiff::det

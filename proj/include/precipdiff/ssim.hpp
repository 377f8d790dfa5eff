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

#include <torch/torch.h>

#include "precipdiff/grid.hpp"

namespace precipdiff::nn {

/// Structural similarity with a Gaussian window. Window statistics near the
/// border are renormalized over the in-bounds part of the window, so fields
/// smaller than the window are handled.
struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Mean SSIM over all pixels and batch entries. Inputs are [H, W],
/// [B, H, W] or [B, 1, H, W] tensors of identical shape; differentiable.
torch::Tensor ssim(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& opt = {});

double ssim(const GridField& a, const GridField& b, const SsimOptions& opt = {});

/// lambda1 * mean((pred - target)^2) + lambda2 * (1 - SSIM(pred, target)).
torch::Tensor loss_mse_ssim(const torch::Tensor& pred, const torch::Tensor& target, double lambda1 = 0.5,
                            double lambda2 = 1.5, const SsimOptions& opt = {});

}  // namespace precipdiff::nn

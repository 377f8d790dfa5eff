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
#include <vector>

#include <torch/torch.h>

#include "precipdiff/diffusion.hpp"
#include "precipdiff/ensemble.hpp"
#include "precipdiff/grid.hpp"
#include "precipdiff/vae.hpp"

namespace precipdiff::inference {

inline constexpr int kDefaultMembers = 11;
inline constexpr std::int64_t kDefaultDdimSteps = 300;

/// Everything that varies per forecast time.
struct MemberRequest {
  GridField mean_coarse_norm;  ///< deterministic forecast, normalized dBZ, coarse grid
  torch::Tensor cond;          ///< [Cc, Hc, Wc] diffusion condition
  GridSpec fine_grid;          ///< residual grid
  double fine_dbz_scale = 1.0;
  Timestamp timestamp = 0;
};

struct MemberSettings {
  int members = kDefaultMembers;
  std::uint64_t base_seed = 0;
  std::int64_t ddim_steps = kDefaultDdimSteps;
};

/// Normalized-dBZ residual fields [N, H, W] decoded from latents sampled
/// with seeds base_seed + i.
torch::Tensor sample_residuals(vae::LoadedVae& vae, diffusion::LoadedDiffusion& diff, const torch::Tensor& cond,
                               const MemberSettings& settings);

/// Members in mm: each sampled residual is added to the regridded mean
/// forecast and taken back through the unit chain.
EnsembleSet generate_members(vae::LoadedVae& vae, diffusion::LoadedDiffusion& diff, const MemberRequest& request,
                             const MemberSettings& settings = {});

}  // namespace precipdiff::inference

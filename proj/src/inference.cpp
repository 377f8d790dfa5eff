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

#include "precipdiff/inference.hpp"

#include "precipdiff/errors.hpp"
#include "precipdiff/nn.hpp"

namespace precipdiff::inference {

torch::Tensor sample_residuals(vae::LoadedVae& vae, diffusion::LoadedDiffusion& diff, const torch::Tensor& cond,
                               const MemberSettings& settings) {
  if (settings.members < 1) throw ValidationError("at least one member required");
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < settings.members; ++i) seeds.push_back(settings.base_seed + static_cast<std::uint64_t>(i));
  auto z = diffusion::sample_latents(diff.model, cond, diff.schedule, settings.ddim_steps, seeds);
  torch::NoGradGuard guard;
  if (vae.stats.defined()) z = vae.stats.denormalize(z);
  vae.model->eval();
  return vae.model->decode(z).squeeze(1);
}

EnsembleSet generate_members(vae::LoadedVae& vae, diffusion::LoadedDiffusion& diff, const MemberRequest& request,
                             const MemberSettings& settings) {
  const auto& vc = vae.model->config();
  if (request.fine_grid.nlat != vc.height || request.fine_grid.nlon != vc.width) {
    throw ValidationError("fine grid does not match the VAE extent");
  }
  auto residuals = sample_residuals(vae, diff, request.cond, settings);
  EnsembleSet ens;
  ens.timestamp = request.timestamp;
  GridField tmpl(request.fine_grid, UnitTag::kNorm, "TP_residual");
  tmpl.set_timestamp(request.timestamp);
  for (int i = 0; i < settings.members; ++i) {
    ResidualField r{nn::from_tensor(residuals[i], tmpl), bounds_of(request.fine_grid)};
    auto member = recombine(request.mean_coarse_norm, r, request.fine_dbz_scale);
    member.set_timestamp(request.timestamp);
    ens.members.push_back(std::move(member));
    ens.seeds.push_back(settings.base_seed + static_cast<std::uint64_t>(i));
  }
  return ens;
}

}  // namespace precipdiff::inference

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

#include "precipdiff/det_model.hpp"
#include "precipdiff/det_train.hpp"
#include "precipdiff/diffusion.hpp"
#include "precipdiff/state.hpp"
#include "precipdiff/synth.hpp"
#include "precipdiff/vae.hpp"

namespace precipdiff {

/// Complete run configuration. Network extents are derived from the data
/// grids by `finalize`, so overriding a grid keeps the networks consistent.
struct Profile {
  std::string name = "desk";
  std::uint64_t seed = 7;

  SynthConfig synth;
  CropWindow cond_window{5, 20, 0, 28};  ///< diffusion condition crop on the coarse grid
  std::int64_t latent_reduction = 10;
  double train_fraction = 0.75;

  std::string experiment = "exp-d4";
  det::DetModelConfig det;
  det::DetTrainConfig det_train;
  vae::VaeConfig vae;
  vae::VaeTrainConfig vae_train;
  diffusion::DitConfig dit;
  diffusion::DiffusionTrainConfig diffusion_train;

  int members = 11;
  std::int64_t ddim_steps = 300;
  std::vector<double> thresholds;
  std::vector<double> cdf_edges;

  GridSpec fine_grid() const;
  /// Copies grid-derived extents into the network configs and seeds the
  /// training configs from `seed`.
  void finalize();
  void validate() const;

  nlohmann::json to_json() const;
};

/// "desk" or "paper".
Profile make_profile(const std::string& name);

/// Starts from the named profile (key "name", default desk), applies the
/// given JSON as a merge patch, then finalizes.
Profile profile_from_json(const nlohmann::json& patch);

/// Applies "a.b.c=value" overrides to a JSON document. Values are parsed as
/// JSON when possible and taken as strings otherwise.
void apply_overrides(nlohmann::json& doc, const std::vector<std::string>& assignments);

/// SHA-256 of the canonical JSON dump.
std::string config_hash(const Profile& p);

nlohmann::json to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CropWindow& w);
CropWindow crop_window_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GridSpec& g);
GridSpec grid_from_json(const nlohmann::json& j);

}  // namespace precipdiff

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

#include "precipdiff/features.hpp"
#include "precipdiff/grid.hpp"
#include "precipdiff/state.hpp"

namespace precipdiff {

struct SynthConfig {
  GridSpec coarse{0.0, 70.0, 0.25, 0.25, 25, 35};
  std::vector<double> pressure_levels_hpa{1000.0, 850.0, 700.0, 500.0, 250.0};
  std::int64_t refinement = 5;
  CropWindow region{5, 20, 0, 28};  ///< high-resolution region on the coarse grid
  int timesteps = 48;
  int storms = 6;
  double advection_speed = 0.15;  ///< degrees per hour
  double advection_direction_deg = 30.0;
  Timestamp start = 1627779600;  ///< 2021-08-01T01:00:00Z
  double fine_noise = 0.5;       ///< std of the log-multiplicative sub-grid noise
  double fine_noise_length = 1.5;  ///< correlation length in fine cells
};

/// Synthetic stand-in for reanalysis + high-resolution precipitation.
struct SynthDataset {
  SynthConfig config;
  StaticFields statics;
  GridSpec fine_grid;
  std::vector<AtmosphericState> states;  ///< coarse grid, one per hour
  std::vector<GridField> tp_coarse;      ///< mm, full coarse grid
  std::vector<GridField> tp_fine;        ///< mm, fine grid over `config.region`
};

/// Gaussian rain cells advected by a uniform steering wind. The fine field
/// is the same pattern sampled on the fine grid times correlated lognormal
/// noise; humidity, pressure, wind and temperature anomalies are tied to the
/// rain so the coarse state carries the precipitation signal.
SynthDataset synth_generate(std::uint64_t seed, const SynthConfig& config);

/// Pearson correlation of two equally sized sequences.
double pearson(std::span<const double> a, std::span<const double> b);

}  // namespace precipdiff

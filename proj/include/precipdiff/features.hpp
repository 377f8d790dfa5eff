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

#include "precipdiff/grid.hpp"

namespace precipdiff {

/// Time-invariant surface descriptors on a grid.
struct StaticFields {
  GridField land_sea_mask;         ///< 1 over land, 0 over sea
  GridField surface_geopotential;  ///< m^2 s^-2
  GridField soil_type;             ///< integer category codes in [0, soil_categories)
  int soil_categories = 8;
};

/// Deterministic synthetic terrain (coastline, mountain ranges, soil
/// patches) for a grid. Depends only on cell coordinates.
StaticFields synthetic_static_fields(const GridSpec& grid);

/// Number of channels produced by build_features.
inline constexpr int kFeatureChannels = 9;

/// Geopotential used to bring the surface geopotential channel to O(1).
inline constexpr double kGeopotentialReference = 9.80665 * 5000.0;

/// Static and temporal feature stack with leading dim "feature", in order:
/// land-sea mask, surface geopotential / kGeopotentialReference, soil type
/// scaled to [0, 1], latitude (rad), longitude (rad), sin/cos of local
/// time of day, sin/cos of the fraction of the year elapsed.
GridField build_features(const GridSpec& grid, Timestamp time, const StaticFields& statics);

/// Local solar hour in [0, 24) from UTC time and longitude.
double local_hour(Timestamp time, double lon_deg);

/// Fraction of the calendar year elapsed at `time`, in [0, 1).
double year_fraction(Timestamp time);

}  // namespace precipdiff

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

#include "precipdiff/grid.hpp"

namespace precipdiff {

inline const std::array<std::string, 4> kSurfaceVariables = {"T2M", "U10", "V10", "MSLP"};
inline const std::array<std::string, 5> kUpperVariables = {"Z", "T", "U", "V", "SH"};

/// Rectangular index window on a grid.
struct CropWindow {
  std::int64_t row0 = 0;
  std::int64_t rows = 0;
  std::int64_t col0 = 0;
  std::int64_t cols = 0;

  GridSpec apply(const GridSpec& g) const;
  bool operator==(const CropWindow&) const = default;
};

/// Surface and upper-air variables at one time on a shared grid. Surface
/// fields are 2-D; upper-air fields carry a leading "level" dimension.
struct AtmosphericState {
  std::vector<GridField> surface;  ///< kSurfaceVariables order
  std::vector<GridField> upper;    ///< kUpperVariables order
  Timestamp timestamp = 0;

  const GridSpec& grid() const { return surface.front().grid(); }
  std::int64_t levels() const { return upper.front().leading().front(); }
  void validate() const;
};

AtmosphericState crop_state(const AtmosphericState& s, const CropWindow& w);

}  // namespace precipdiff

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

#include "precipdiff/state.hpp"

#include "precipdiff/errors.hpp"

namespace precipdiff {

GridSpec CropWindow::apply(const GridSpec& g) const {
  if (row0 < 0 || col0 < 0 || rows <= 0 || cols <= 0 || row0 + rows > g.nlat || col0 + cols > g.nlon) {
    throw ValidationError("crop window outside the grid");
  }
  return {g.lat(row0), g.lon(col0), g.dlat, g.dlon, rows, cols};
}

void AtmosphericState::validate() const {
  if (surface.size() != kSurfaceVariables.size() || upper.size() != kUpperVariables.size()) {
    throw ValidationError("atmospheric state: wrong variable count");
  }
  const GridSpec& g = surface.front().grid();
  for (std::size_t k = 0; k < surface.size(); ++k) {
    if (surface[k].grid() != g || surface[k].slices() != 1 || surface[k].variable() != kSurfaceVariables[k]) {
      throw ValidationError("atmospheric state: malformed surface variable " + kSurfaceVariables[k]);
    }
  }
  const auto levels = upper.front().leading().empty() ? 0 : upper.front().leading().front();
  for (std::size_t k = 0; k < upper.size(); ++k) {
    if (upper[k].grid() != g || upper[k].leading().size() != 1 || upper[k].leading().front() != levels ||
        upper[k].variable() != kUpperVariables[k]) {
      throw ValidationError("atmospheric state: malformed upper-air variable " + kUpperVariables[k]);
    }
  }
}

AtmosphericState crop_state(const AtmosphericState& s, const CropWindow& w) {
  AtmosphericState out;
  out.timestamp = s.timestamp;
  for (const auto& f : s.surface) out.surface.push_back(crop_index(f, w.row0, w.rows, w.col0, w.cols));
  for (const auto& f : s.upper) out.upper.push_back(crop_index(f, w.row0, w.rows, w.col0, w.cols));
  return out;
}

}  // namespace precipdiff

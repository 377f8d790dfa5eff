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

#include "precipdiff/grid.hpp"

namespace precipdiff {

/// N precipitation members (mm) on a shared fine grid.
struct EnsembleSet {
  std::vector<GridField> members;
  std::vector<std::uint64_t> seeds;
  Timestamp timestamp = 0;

  std::size_t size() const { return members.size(); }
  const GridSpec& grid() const { return members.front().grid(); }
  void validate(std::size_t min_members = 1) const;
};

/// Regrids the coarse normalized mean onto the residual grid, adds the
/// residual in normalized-dBZ space, then inverts the unit chain with the
/// fine-data scale. Cells at or below the dBZ floor come out as 0 mm.
GridField recombine(const GridField& mean_coarse_norm, const ResidualField& residual, double fine_dbz_scale);

/// Cell-wise arithmetic mean of the members.
GridField ensemble_mean(const EnsembleSet& ens);

/// Probability-matched mean: the pooled member values, sorted descending and
/// thinned to every N-th value, are assigned to cells in descending order of
/// the ensemble mean. Equal means are ordered by cell index.
GridField probability_match(const EnsembleSet& ens);

}  // namespace precipdiff

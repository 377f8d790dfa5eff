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

#include "precipdiff/ensemble.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "precipdiff/errors.hpp"

namespace precipdiff {

void EnsembleSet::validate(std::size_t min_members) const {
  if (members.size() < std::max<std::size_t>(min_members, 1)) {
    throw ValidationError("ensemble needs at least " + std::to_string(std::max<std::size_t>(min_members, 1)) +
                          " members, has " + std::to_string(members.size()));
  }
  for (const auto& m : members) {
    if (m.grid() != members.front().grid() || m.shape() != members.front().shape()) {
      throw ValidationError("ensemble members are on different grids");
    }
  }
}

GridField recombine(const GridField& mean_coarse_norm, const ResidualField& residual, double fine_dbz_scale) {
  const GridSpec& fine = residual.values.grid();
  const LatLonBounds region = bounds_of(fine);
  const LatLonBounds expected = residual.region;
  const double tol = 1e-6 * fine.dlat;
  if (std::abs(region.lat_min - expected.lat_min) > tol || std::abs(region.lat_max - expected.lat_max) > tol ||
      std::abs(region.lon_min - expected.lon_min) > tol || std::abs(region.lon_max - expected.lon_max) > tol) {
    throw ValidationError("recombine: residual values do not cover the declared region");
  }
  const GridField norm = add_back(residual, mean_coarse_norm);
  GridField mm = from_dbz(denormalize_dbz(norm, fine_dbz_scale));
  mm.set_variable("TP");
  return mm;
}

GridField ensemble_mean(const EnsembleSet& ens) {
  ens.validate();
  GridField out = ens.members.front();
  auto acc = out.values();
  for (std::size_t m = 1; m < ens.size(); ++m) {
    auto v = ens.members[m].values();
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += v[k];
  }
  const double inv = 1.0 / static_cast<double>(ens.size());
  for (double& a : acc) a *= inv;
  return out;
}

GridField probability_match(const EnsembleSet& ens) {
  if (ens.members.empty()) throw ValidationError("probability_match: empty ensemble");
  ens.validate(1);
  const std::size_t n = ens.size();
  const GridField mean = ensemble_mean(ens);
  const std::size_t cells = mean.size();

  std::vector<double> pooled;
  pooled.reserve(n * cells);
  for (const auto& m : ens.members) pooled.insert(pooled.end(), m.values().begin(), m.values().end());
  std::sort(pooled.begin(), pooled.end(), std::greater<>());

  std::vector<std::size_t> order(cells);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto mv = mean.values();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mv[a] > mv[b]; });

  GridField out = ens.members.front();
  out.set_variable("TP_PM");
  auto ov = out.values();
  for (std::size_t r = 0; r < cells; ++r) ov[order[r]] = pooled[r * n];
  return out;
}

}  // namespace precipdiff

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

#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <random>

#include "precipdiff/ensemble.hpp"
#include "precipdiff/errors.hpp"

using namespace precipdiff;

namespace {

EnsembleSet random_ensemble(std::size_t n, std::int64_t nlat, std::int64_t nlon, std::mt19937_64& rng) {
  EnsembleSet e;
  std::gamma_distribution<double> rain(0.6, 3.0);
  for (std::size_t m = 0; m < n; ++m) {
    GridField f(GridSpec{0, 0, 1, 1, nlat, nlon}, UnitTag::kMm, "TP");
    for (double& v : f.values()) v = rain(rng);
    e.members.push_back(f);
  }
  return e;
}

}  // namespace

TEST(ProbabilityMatch, HandEnumeratedTwoMembers) {
  EnsembleSet e;
  GridField a(GridSpec{0, 0, 1, 1, 1, 2}, UnitTag::kMm, "TP");
  GridField b = a;
  a.values()[0] = 1;
  a.values()[1] = 3;
  b.values()[0] = 2;
  b.values()[1] = 4;
  e.members = {a, b};
  const GridField pm = probability_match(e);
  EXPECT_EQ(pm.values()[0], 2.0);
  EXPECT_EQ(pm.values()[1], 4.0);
}

TEST(ProbabilityMatch, IdenticalMembersBitForBit) {
  std::mt19937_64 rng(2);
  EnsembleSet one = random_ensemble(1, 9, 7, rng);
  EnsembleSet e;
  e.members.assign(11, one.members.front());
  const GridField pm = probability_match(e);
  EXPECT_EQ(pm.storage(), one.members.front().storage());
}

TEST(ProbabilityMatch, EmptyEnsembleRejected) {
  EnsembleSet e;
  EXPECT_THROW(probability_match(e), ValidationError);
}

TEST(ProbabilityMatch, SelectionRankOrderAndCdfProperties) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 2 + trial % 10;
    EnsembleSet e = random_ensemble(n, 6, 8, rng);
    const GridField pm = probability_match(e);
    const GridField mean = ensemble_mean(e);

    std::vector<double> pooled;
    for (const auto& m : e.members) pooled.insert(pooled.end(), m.values().begin(), m.values().end());
    std::sort(pooled.begin(), pooled.end(), std::greater<>());
    std::vector<double> thinned;
    for (std::size_t r = 0; r < pm.size(); ++r) thinned.push_back(pooled[r * n]);

    // Exact multiset equality with the every-N-th pooled values.
    std::vector<double> got(pm.values().begin(), pm.values().end());
    std::sort(got.begin(), got.end(), std::greater<>());
    EXPECT_EQ(got, thinned);

    // Spatial rank order of the mean is preserved.
    for (std::size_t a = 0; a < pm.size(); ++a) {
      for (std::size_t b = 0; b < pm.size(); ++b) {
        if (mean.values()[a] > mean.values()[b]) EXPECT_GE(pm.values()[a], pm.values()[b]);
      }
    }
  }
}

TEST(Recombine, ZeroResidualGivesRegriddedMean) {
  const GridSpec coarse{15.0, 70.0, 0.25, 0.25, 2, 3};
  GridField mean(coarse, UnitTag::kNorm, "TP");
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.2);
  for (double& v : mean.values()) v = u(rng);
  const GridSpec fine = refine_grid(coarse, 5);
  ResidualField zero{GridField(fine, UnitTag::kNorm, "residual"), bounds_of(fine)};
  const double scale = 45.0;
  const GridField out = recombine(mean, zero, scale);
  const GridField expect = from_dbz(denormalize_dbz(nearest_regrid(mean, fine), scale));
  EXPECT_EQ(out.storage(), expect.storage());
  EXPECT_EQ(out.unit(), UnitTag::kMm);
}

TEST(Recombine, DecompositionRoundTrip) {
  const GridSpec coarse{15.0, 70.0, 0.25, 0.25, 3, 3};
  const GridSpec fine = refine_grid(coarse, 5);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.3);
  GridField mean(coarse, UnitTag::kNorm, "TP");
  for (double& v : mean.values()) v = u(rng);
  GridField target(fine, UnitTag::kNorm, "TP");
  for (double& v : target.values()) v = u(rng);
  const double scale = 52.0;
  const ResidualField res = decompose_residual(target, mean);
  const GridField mm = recombine(mean, res, scale);
  const GridField want = from_dbz(denormalize_dbz(target, scale));
  for (std::size_t k = 0; k < mm.size(); ++k) {
    const double w = want.values()[k];
    EXPECT_LE(std::abs(mm.values()[k] - w), 1e-9 * std::max(w, 1e-300));
  }
}

TEST(Recombine, NonNegativeAndRegionChecked) {
  const GridSpec coarse{15.0, 70.0, 0.25, 0.25, 2, 2};
  const GridSpec fine = refine_grid(coarse, 5);
  GridField mean(coarse, UnitTag::kNorm, "TP");
  for (double& v : mean.values()) v = 0.1;
  ResidualField res{GridField(fine, UnitTag::kNorm, "residual"), bounds_of(fine)};
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 0.5);
  for (double& v : res.values.values()) v = n(rng);
  const GridField out = recombine(mean, res, 40.0);
  EXPECT_GE(out.min(), 0.0);
  res.region.lat_min -= 1.0;
  EXPECT_THROW(recombine(mean, res, 40.0), ValidationError);
}

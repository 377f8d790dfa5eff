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
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "precipdiff/ensemble.hpp"
#include "precipdiff/grid.hpp"

namespace precipdiff {

/// Default evaluation thresholds in mm/h.
inline const std::vector<double> kDefaultThresholds = {0.1, 2.0, 5.0, 10.0, 15.0, 20.0};

/// 2x2 contingency counts for the event "value >= threshold".
struct ContingencyTable {
  std::int64_t hits = 0;
  std::int64_t misses = 0;
  std::int64_t false_alarms = 0;
  std::int64_t correct_negatives = 0;
  double threshold = 0.0;

  std::int64_t total() const { return hits + misses + false_alarms + correct_negatives; }
  ContingencyTable& operator+=(const ContingencyTable& o);
  bool operator==(const ContingencyTable&) const = default;
};

ContingencyTable contingency(std::span<const double> forecast, std::span<const double> observed, double threshold);
ContingencyTable contingency(const GridField& forecast, const GridField& observed, double threshold);

/// Scores with an empty optional where the denominator vanishes.
struct CategoricalScores {
  std::optional<double> csi;
  std::optional<double> pod;
  std::optional<double> far;
};

CategoricalScores csi_pod_far(const ContingencyTable& t);

struct RankHistogram {
  std::vector<std::int64_t> counts;  ///< N + 1 bins

  explicit RankHistogram(std::size_t members = 0) : counts(members + 1, 0) {}
  std::int64_t total() const;
  /// Pearson chi-square statistic against the uniform histogram.
  double chi_square() const;
  /// Upper-tail probability of chi_square() with counts.size() - 1 degrees of freedom.
  double uniformity_p_value() const;
};

/// Adds one observation. Its rank is the number of members strictly below
/// it plus a uniform draw over the members tied with it.
void accumulate_rank(RankHistogram& h, std::span<const double> members, double observed, std::mt19937_64& rng);

/// Rank histogram over aligned series of ensembles and observations; every
/// cell of every time contributes one sample.
RankHistogram rank_histogram(std::span<const EnsembleSet> ensembles, std::span<const GridField> observed,
                             std::uint64_t seed);

/// Empirical CDF at the given bin edges (plus +inf as the final edge).
struct CdfCurve {
  std::vector<double> edges;
  std::vector<double> frequency;
};

CdfCurve cdf_curve(std::span<const double> values, std::vector<double> edges);
CdfCurve cdf_curve(const GridField& field, const LatLonBounds& region, std::vector<double> edges);
/// Pooled CDF over all members inside the region.
CdfCurve cdf_curve(const EnsembleSet& ens, const LatLonBounds& region, std::vector<double> edges);

}  // namespace precipdiff

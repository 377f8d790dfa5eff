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

#include "precipdiff/verification.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/distributions/chi_squared.hpp>

#include "precipdiff/errors.hpp"

namespace precipdiff {

ContingencyTable& ContingencyTable::operator+=(const ContingencyTable& o) {
  hits += o.hits;
  misses += o.misses;
  false_alarms += o.false_alarms;
  correct_negatives += o.correct_negatives;
  return *this;
}

ContingencyTable contingency(std::span<const double> forecast, std::span<const double> observed, double threshold) {
  if (forecast.size() != observed.size()) throw ValidationError("contingency: forecast/observation size mismatch");
  if (!(threshold > 0.0)) throw ValidationError("contingency: threshold must be positive");
  // Branch-free accumulation of the event indicators.
  std::int64_t both = 0, fc = 0, ob = 0;
  for (std::size_t k = 0; k < forecast.size(); ++k) {
    const std::int64_t f = forecast[k] >= threshold;
    const std::int64_t o = observed[k] >= threshold;
    both += f & o;
    fc += f;
    ob += o;
  }
  ContingencyTable t;
  t.threshold = threshold;
  t.hits = both;
  t.false_alarms = fc - both;
  t.misses = ob - both;
  t.correct_negatives = static_cast<std::int64_t>(forecast.size()) - fc - ob + both;
  return t;
}

ContingencyTable contingency(const GridField& forecast, const GridField& observed, double threshold) {
  if (forecast.grid() != observed.grid() || forecast.shape() != observed.shape()) {
    throw ValidationError("contingency: forecast and observation grids differ");
  }
  return contingency(forecast.values(), observed.values(), threshold);
}

CategoricalScores csi_pod_far(const ContingencyTable& t) {
  CategoricalScores s;
  const auto h = static_cast<double>(t.hits);
  if (t.hits + t.misses > 0) s.pod = h / static_cast<double>(t.hits + t.misses);
  if (t.hits + t.false_alarms > 0) s.far = static_cast<double>(t.false_alarms) / static_cast<double>(t.hits + t.false_alarms);
  if (t.hits + t.misses + t.false_alarms > 0) s.csi = h / static_cast<double>(t.hits + t.misses + t.false_alarms);
  return s;
}

std::int64_t RankHistogram::total() const {
  std::int64_t n = 0;
  for (auto c : counts) n += c;
  return n;
}

double RankHistogram::chi_square() const {
  const double expected = static_cast<double>(total()) / static_cast<double>(counts.size());
  if (expected <= 0.0) return 0.0;
  double chi2 = 0.0;
  for (auto c : counts) {
    const double d = static_cast<double>(c) - expected;
    chi2 += d * d / expected;
  }
  return chi2;
}

double RankHistogram::uniformity_p_value() const {
  if (counts.size() < 2) return 1.0;
  const boost::math::chi_squared dist(static_cast<double>(counts.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, chi_square()));
}

void accumulate_rank(RankHistogram& h, std::span<const double> members, double observed, std::mt19937_64& rng) {
  if (h.counts.size() != members.size() + 1) throw ValidationError("rank histogram: member count mismatch");
  std::size_t below = 0, ties = 0;
  for (double m : members) {
    below += m < observed;
    ties += m == observed;
  }
  std::size_t rank = below;
  if (ties > 0) rank += std::uniform_int_distribution<std::size_t>(0, ties)(rng);
  ++h.counts[rank];
}

RankHistogram rank_histogram(std::span<const EnsembleSet> ensembles, std::span<const GridField> observed,
                             std::uint64_t seed) {
  if (ensembles.size() != observed.size() || ensembles.empty()) {
    throw ValidationError("rank_histogram: ensemble and observation series are misaligned");
  }
  const std::size_t n = ensembles.front().size();
  RankHistogram h(n);
  std::mt19937_64 rng(seed);
  std::vector<double> column(n);
  for (std::size_t t = 0; t < ensembles.size(); ++t) {
    const auto& ens = ensembles[t];
    ens.validate(2);
    if (ens.size() != n) throw ValidationError("rank_histogram: member count changes along the series");
    if (ens.grid() != observed[t].grid() || ens.members.front().size() != observed[t].size()) {
      throw ValidationError("rank_histogram: observation grid differs from the ensemble grid");
    }
    const auto obs = observed[t].values();
    for (std::size_t k = 0; k < obs.size(); ++k) {
      for (std::size_t m = 0; m < n; ++m) column[m] = ens.members[m].values()[k];
      accumulate_rank(h, column, obs[k], rng);
    }
  }
  return h;
}

CdfCurve cdf_curve(std::span<const double> values, std::vector<double> edges) {
  if (values.empty()) throw ValidationError("cdf_curve: empty region");
  if (!std::is_sorted(edges.begin(), edges.end())) throw ValidationError("cdf_curve: bin edges must be sorted");
  if (edges.empty() || std::isfinite(edges.back())) edges.push_back(std::numeric_limits<double>::infinity());
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  CdfCurve c;
  c.edges = std::move(edges);
  const double n = static_cast<double>(sorted.size());
  for (double e : c.edges) {
    const auto le = std::upper_bound(sorted.begin(), sorted.end(), e) - sorted.begin();
    c.frequency.push_back(static_cast<double>(le) / n);
  }
  return c;
}

CdfCurve cdf_curve(const GridField& field, const LatLonBounds& region, std::vector<double> edges) {
  const GridField sub = crop_region(field, region);
  return cdf_curve(sub.values(), std::move(edges));
}

CdfCurve cdf_curve(const EnsembleSet& ens, const LatLonBounds& region, std::vector<double> edges) {
  ens.validate();
  std::vector<double> pooled;
  for (const auto& m : ens.members) {
    const GridField sub = crop_region(m, region);
    pooled.insert(pooled.end(), sub.values().begin(), sub.values().end());
  }
  return cdf_curve(pooled, std::move(edges));
}

}  // namespace precipdiff

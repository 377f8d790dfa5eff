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

#include "precipdiff/grid.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "precipdiff/errors.hpp"

namespace precipdiff {

namespace {

constexpr double kCoordEps = 1e-6;

void require_unit(const GridField& f, UnitTag expected, const char* op) {
  if (f.unit() != expected) {
    throw ValidationError(std::string(op) + ": expected unit '" + to_string(expected) +
                          "', got '" + to_string(f.unit()) + "'");
  }
}

}  // namespace

std::string to_string(UnitTag unit) {
  switch (unit) {
    case UnitTag::kMm: return "mm";
    case UnitTag::kDbz: return "dbz";
    case UnitTag::kNorm: return "norm";
    case UnitTag::kRaw: return "raw";
  }
  return "raw";
}

UnitTag unit_from_string(const std::string& s) {
  if (s == "mm") return UnitTag::kMm;
  if (s == "dbz") return UnitTag::kDbz;
  if (s == "norm") return UnitTag::kNorm;
  if (s == "raw") return UnitTag::kRaw;
  throw ValidationError("unknown unit tag '" + s + "'");
}

std::string format_timestamp(Timestamp t) {
  using namespace std::chrono;
  const sys_seconds tp{seconds{t}};
  const auto day = floor<days>(tp);
  const year_month_day ymd{day};
  const hh_mm_ss hms{tp - day};
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02ld:%02ld:%02ldZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<long>(hms.hours().count()), static_cast<long>(hms.minutes().count()),
                static_cast<long>(hms.seconds().count()));
  return buf;
}

Timestamp parse_timestamp(const std::string& iso) {
  using namespace std::chrono;
  int y = 0;
  unsigned mo = 0, d = 0, h = 0, mi = 0, s = 0;
  if (std::sscanf(iso.c_str(), "%d-%u-%uT%u:%u:%u", &y, &mo, &d, &h, &mi, &s) != 6) {
    throw ValidationError("malformed timestamp '" + iso + "'");
  }
  const year_month_day ymd{year{y}, month{mo}, day{d}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60) {
    throw ValidationError("invalid timestamp '" + iso + "'");
  }
  const sys_seconds tp = sys_days{ymd} + hours{h} + minutes{mi} + seconds{s};
  return tp.time_since_epoch().count();
}

void GridSpec::validate() const {
  if (!(dlat > 0.0) || !(dlon > 0.0)) throw ValidationError("grid spacing must be positive");
  if (nlat <= 0 || nlon <= 0) throw ValidationError("grid extent must be positive");
}

GridField::GridField(GridSpec grid, UnitTag unit, std::string variable,
                     std::vector<std::int64_t> leading, std::vector<std::string> leading_names)
    : grid_(grid),
      unit_(unit),
      variable_(std::move(variable)),
      leading_(std::move(leading)),
      leading_names_(std::move(leading_names)) {
  grid_.validate();
  if (leading_names_.empty()) {
    for (std::size_t k = 0; k < leading_.size(); ++k) leading_names_.push_back("dim" + std::to_string(k));
  }
  if (leading_names_.size() != leading_.size()) {
    throw ValidationError("leading dimension names do not match leading extents");
  }
  for (auto e : leading_) {
    if (e <= 0) throw ValidationError("leading dimension extent must be positive");
  }
  values_.assign(static_cast<std::size_t>(slices() * grid_.cells()), 0.0);
}

std::vector<std::int64_t> GridField::shape() const {
  auto s = leading_;
  s.push_back(grid_.nlat);
  s.push_back(grid_.nlon);
  return s;
}

std::vector<std::string> GridField::dim_names() const {
  auto n = leading_names_;
  n.emplace_back("lat");
  n.emplace_back("lon");
  return n;
}

std::int64_t GridField::slices() const {
  return std::accumulate(leading_.begin(), leading_.end(), std::int64_t{1}, std::multiplies<>());
}

std::span<double> GridField::slice(std::int64_t s) {
  return std::span<double>(values_).subspan(static_cast<std::size_t>(s * grid_.cells()),
                                            static_cast<std::size_t>(grid_.cells()));
}

std::span<const double> GridField::slice(std::int64_t s) const {
  return std::span<const double>(values_).subspan(static_cast<std::size_t>(s * grid_.cells()),
                                                  static_cast<std::size_t>(grid_.cells()));
}

double GridField::max() const { return *std::max_element(values_.begin(), values_.end()); }
double GridField::min() const { return *std::min_element(values_.begin(), values_.end()); }
double GridField::mean() const {
  return std::accumulate(values_.begin(), values_.end(), 0.0) / static_cast<double>(values_.size());
}

GridField GridField::like(const GridSpec& grid) const {
  GridField out(grid, unit_, variable_, leading_, leading_names_);
  out.timestamp_ = timestamp_;
  return out;
}

// Unit chain -----------------------------------------------------------------

double tp_to_dbz(double tp_mm) {
  if (!(tp_mm >= 0.0)) throw ValidationError("precipitation must be non-negative");
  if (tp_mm < kTpFloor) return kDbzFloor;
  // 10*log10(200*TP^1.6), split to keep the logarithm well conditioned.
  const double dbz = 10.0 * (std::log10(200.0) + 1.6 * std::log10(tp_mm));
  return std::max(dbz, kDbzFloor);
}

double dbz_to_tp(double dbz) {
  if (dbz <= kDbzFloor) return 0.0;
  return std::pow(10.0, (dbz / 10.0 - std::log10(200.0)) / 1.6);
}

GridField to_dbz(const GridField& tp) {
  require_unit(tp, UnitTag::kMm, "to_dbz");
  GridField out = tp;
  for (double& v : out.values()) {
    if (!(v >= 0.0)) throw ValidationError("to_dbz: negative or non-finite precipitation");
    v = tp_to_dbz(v);
  }
  out.set_unit(UnitTag::kDbz);
  return out;
}

GridField from_dbz(const GridField& z) {
  require_unit(z, UnitTag::kDbz, "from_dbz");
  GridField out = z;
  for (double& v : out.values()) v = dbz_to_tp(v);
  out.set_unit(UnitTag::kMm);
  return out;
}

double compute_dbz_scale(std::span<const GridField> series) {
  if (series.empty()) throw ValidationError("compute_dbz_scale: empty series");
  double total = 0.0;
  for (const auto& f : series) {
    if (f.grid() != series.front().grid() || f.shape() != series.front().shape()) {
      throw ValidationError("compute_dbz_scale: series grids differ");
    }
    require_unit(f, UnitTag::kDbz, "compute_dbz_scale");
    total += f.max();
  }
  return total / static_cast<double>(series.size());
}

GridField normalize_dbz(const GridField& z, double scale) {
  if (!(scale > 0.0)) throw ValidationError("normalize_dbz: scale must be positive");
  require_unit(z, UnitTag::kDbz, "normalize_dbz");
  GridField out = z;
  for (double& v : out.values()) v /= scale;
  out.set_unit(UnitTag::kNorm);
  return out;
}

GridField denormalize_dbz(const GridField& z, double scale) {
  if (!(scale > 0.0)) throw ValidationError("denormalize_dbz: scale must be positive");
  require_unit(z, UnitTag::kNorm, "denormalize_dbz");
  GridField out = z;
  for (double& v : out.values()) v *= scale;
  out.set_unit(UnitTag::kDbz);
  return out;
}

const Moments& NormalizationStats::at(const std::string& variable) const {
  auto it = variables.find(variable);
  if (it == variables.end()) throw ConfigError("no normalization stats for variable '" + variable + "'");
  return it->second;
}

void NormalizationStats::validate() const {
  for (const auto& [name, m] : variables) {
    if (m.mean.empty() || m.mean.size() != m.std.size()) {
      throw ConfigError("malformed moments for '" + name + "'");
    }
    for (double s : m.std) {
      if (!(s > 0.0)) throw ConfigError("non-positive standard deviation for '" + name + "'");
    }
  }
  if (!(dbz_scale_coarse > 0.0) || !(dbz_scale_fine > 0.0)) throw ConfigError("dbz scale must be positive");
}

namespace {

template <class Fn>
GridField apply_moments(const GridField& v, const NormalizationStats& stats, Fn fn) {
  const Moments& m = stats.at(v.variable());
  const auto n = v.slices();
  if (m.mean.size() != 1 && static_cast<std::int64_t>(m.mean.size()) != n) {
    throw ConfigError("stats for '" + v.variable() + "' have " + std::to_string(m.mean.size()) +
                      " levels, field has " + std::to_string(n));
  }
  GridField out = v;
  for (std::int64_t s = 0; s < n; ++s) {
    const std::size_t k = m.mean.size() == 1 ? 0 : static_cast<std::size_t>(s);
    if (!(m.std[k] > 0.0)) throw ConfigError("non-positive standard deviation for '" + v.variable() + "'");
    for (double& x : out.slice(s)) x = fn(x, m.mean[k], m.std[k]);
  }
  return out;
}

}  // namespace

GridField standardize(const GridField& v, const NormalizationStats& stats) {
  return apply_moments(v, stats, [](double x, double mu, double sd) { return (x - mu) / sd; });
}

GridField destandardize(const GridField& v, const NormalizationStats& stats) {
  return apply_moments(v, stats, [](double x, double mu, double sd) { return x * sd + mu; });
}

// Spatial transforms ---------------------------------------------------------

GridField avgpool_downsample(const GridField& f, std::int64_t k) {
  if (k <= 0) throw ValidationError("avgpool_downsample: k must be positive");
  const GridSpec& g = f.grid();
  GridSpec out_grid{g.lat0 + 0.5 * static_cast<double>(k - 1) * g.dlat,
                    g.lon0 + 0.5 * static_cast<double>(k - 1) * g.dlon,
                    g.dlat * static_cast<double>(k),
                    g.dlon * static_cast<double>(k),
                    g.nlat / k,
                    g.nlon / k};
  if (out_grid.nlat == 0 || out_grid.nlon == 0) {
    throw ValidationError("avgpool_downsample: field smaller than the pooling window");
  }
  GridField out = f.like(out_grid);
  const double inv = 1.0 / static_cast<double>(k * k);
  for (std::int64_t s = 0; s < f.slices(); ++s) {
    for (std::int64_t i = 0; i < out_grid.nlat; ++i) {
      for (std::int64_t j = 0; j < out_grid.nlon; ++j) {
        double acc = 0.0;
        for (std::int64_t a = 0; a < k; ++a) {
          for (std::int64_t b = 0; b < k; ++b) acc += f.at(s, i * k + a, j * k + b);
        }
        out.at(s, i, j) = acc * inv;
      }
    }
  }
  return out;
}

namespace {

// Index of the nearest source center along one axis, ties to the lower index.
std::int64_t nearest_index(double coord, double origin, double step, std::int64_t n, const char* axis) {
  const double x = (coord - origin) / step;
  if (x < -0.5 - kCoordEps || x > static_cast<double>(n) - 0.5 + kCoordEps) {
    throw ValidationError(std::string("nearest_regrid: target ") + axis + " " + std::to_string(coord) +
                          " outside the source grid");
  }
  auto idx = static_cast<std::int64_t>(std::ceil(x - 0.5 - kCoordEps));
  return std::clamp<std::int64_t>(idx, 0, n - 1);
}

}  // namespace

GridField nearest_regrid(const GridField& f, const GridSpec& target) {
  target.validate();
  const GridSpec& src = f.grid();
  std::vector<std::int64_t> rows(static_cast<std::size_t>(target.nlat));
  std::vector<std::int64_t> cols(static_cast<std::size_t>(target.nlon));
  for (std::int64_t i = 0; i < target.nlat; ++i) {
    rows[static_cast<std::size_t>(i)] = nearest_index(target.lat(i), src.lat0, src.dlat, src.nlat, "latitude");
  }
  for (std::int64_t j = 0; j < target.nlon; ++j) {
    cols[static_cast<std::size_t>(j)] = nearest_index(target.lon(j), src.lon0, src.dlon, src.nlon, "longitude");
  }
  GridField out = f.like(target);
  for (std::int64_t s = 0; s < f.slices(); ++s) {
    for (std::int64_t i = 0; i < target.nlat; ++i) {
      for (std::int64_t j = 0; j < target.nlon; ++j) {
        out.at(s, i, j) = f.at(s, rows[static_cast<std::size_t>(i)], cols[static_cast<std::size_t>(j)]);
      }
    }
  }
  return out;
}

GridSpec refine_grid(const GridSpec& coarse, std::int64_t factor) {
  if (factor <= 0) throw ValidationError("refine_grid: factor must be positive");
  const double r = static_cast<double>(factor);
  GridSpec fine;
  fine.dlat = coarse.dlat / r;
  fine.dlon = coarse.dlon / r;
  fine.lat0 = coarse.lat0 - 0.5 * (r - 1.0) * fine.dlat;
  fine.lon0 = coarse.lon0 - 0.5 * (r - 1.0) * fine.dlon;
  fine.nlat = coarse.nlat * factor;
  fine.nlon = coarse.nlon * factor;
  return fine;
}

GridField crop_index(const GridField& f, std::int64_t row0, std::int64_t nrows, std::int64_t col0,
                     std::int64_t ncols) {
  const GridSpec& g = f.grid();
  if (row0 < 0 || col0 < 0 || nrows <= 0 || ncols <= 0 || row0 + nrows > g.nlat || col0 + ncols > g.nlon) {
    throw ValidationError("crop: index window outside the grid");
  }
  GridSpec sub{g.lat(row0), g.lon(col0), g.dlat, g.dlon, nrows, ncols};
  GridField out = f.like(sub);
  for (std::int64_t s = 0; s < f.slices(); ++s) {
    for (std::int64_t i = 0; i < nrows; ++i) {
      for (std::int64_t j = 0; j < ncols; ++j) out.at(s, i, j) = f.at(s, row0 + i, col0 + j);
    }
  }
  return out;
}

GridField crop_region(const GridField& f, const LatLonBounds& b) {
  const GridSpec& g = f.grid();
  const double elat = kCoordEps * g.dlat;
  const double elon = kCoordEps * g.dlon;
  if (b.lat_min > b.lat_max || b.lon_min > b.lon_max) throw ValidationError("crop_region: inverted bounds");
  if (b.lat_min < g.lat(0) - elat || b.lat_max > g.lat(g.nlat - 1) + elat || b.lon_min < g.lon(0) - elon ||
      b.lon_max > g.lon(g.nlon - 1) + elon) {
    throw ValidationError("crop_region: bounds outside the grid");
  }
  const auto row0 = static_cast<std::int64_t>(std::ceil((b.lat_min - g.lat0) / g.dlat - kCoordEps));
  const auto row1 = static_cast<std::int64_t>(std::floor((b.lat_max - g.lat0) / g.dlat + kCoordEps));
  const auto col0 = static_cast<std::int64_t>(std::ceil((b.lon_min - g.lon0) / g.dlon - kCoordEps));
  const auto col1 = static_cast<std::int64_t>(std::floor((b.lon_max - g.lon0) / g.dlon + kCoordEps));
  if (row1 < row0 || col1 < col0) throw ValidationError("crop_region: no cell centers inside bounds");
  return crop_index(f, row0, row1 - row0 + 1, col0, col1 - col0 + 1);
}

GridField quantize_f32(const GridField& f) {
  GridField out = f;
  for (double& v : out.values()) v = static_cast<double>(static_cast<float>(v));
  return out;
}

LatLonBounds bounds_of(const GridSpec& g) {
  return {g.lat(0), g.lat(g.nlat - 1), g.lon(0), g.lon(g.nlon - 1)};
}

ResidualField decompose_residual(const GridField& fine_norm, const GridField& coarse_norm) {
  require_unit(fine_norm, UnitTag::kNorm, "decompose_residual");
  require_unit(coarse_norm, UnitTag::kNorm, "decompose_residual");
  if (fine_norm.slices() != coarse_norm.slices()) {
    throw ValidationError("decompose_residual: leading dimensions differ");
  }
  const GridField mean_fine = nearest_regrid(coarse_norm, fine_norm.grid());
  ResidualField r{fine_norm, bounds_of(fine_norm.grid())};
  r.values.set_variable("residual");
  auto out = r.values.values();
  auto m = mean_fine.values();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] -= m[k];
  return r;
}

GridField add_back(const ResidualField& residual, const GridField& coarse_norm) {
  require_unit(residual.values, UnitTag::kNorm, "add_back");
  require_unit(coarse_norm, UnitTag::kNorm, "add_back");
  GridField out = nearest_regrid(coarse_norm, residual.values.grid());
  auto r = residual.values.values();
  auto o = out.values();
  for (std::size_t k = 0; k < o.size(); ++k) o[k] = r[k] + o[k];
  out.set_timestamp(residual.values.timestamp());
  return out;
}

}  // namespace precipdiff

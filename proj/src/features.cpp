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

#include "precipdiff/features.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

#include "precipdiff/errors.hpp"

namespace precipdiff {

namespace {

constexpr double kPi = std::numbers::pi;

double deg2rad(double d) { return d * kPi / 180.0; }

// Smooth coastline: land where this is positive.
double land_function(double lat, double lon) {
  return (lon - 100.0) + 6.0 * std::sin(deg2rad(lat * 9.0)) + 4.0 * std::cos(deg2rad(lon * 7.0)) -
         0.4 * (lat - 30.0);
}

double orography_m(double lat, double lon) {
  const double a = std::exp(-((lat - 32.0) * (lat - 32.0) / 18.0 + (lon - 92.0) * (lon - 92.0) / 60.0));
  const double b = std::exp(-((lat - 42.0) * (lat - 42.0) / 8.0 + (lon - 112.0) * (lon - 112.0) / 20.0));
  const double ripple = 0.5 + 0.5 * std::sin(deg2rad(lat * 40.0)) * std::cos(deg2rad(lon * 35.0));
  return 4500.0 * a + 1800.0 * b + 250.0 * ripple;
}

}  // namespace

StaticFields synthetic_static_fields(const GridSpec& grid) {
  StaticFields s;
  s.land_sea_mask = GridField(grid, UnitTag::kRaw, "LSM");
  s.surface_geopotential = GridField(grid, UnitTag::kRaw, "ZSFC");
  s.soil_type = GridField(grid, UnitTag::kRaw, "SOIL");
  for (std::int64_t i = 0; i < grid.nlat; ++i) {
    for (std::int64_t j = 0; j < grid.nlon; ++j) {
      const double lat = grid.lat(i);
      const double lon = grid.lon(j);
      const bool land = land_function(lat, lon) > 0.0;
      s.land_sea_mask.at(i, j) = land ? 1.0 : 0.0;
      s.surface_geopotential.at(i, j) = land ? 9.80665 * orography_m(lat, lon) : 0.0;
      if (land) {
        const double u = 0.5 + 0.5 * std::sin(deg2rad(lat * 13.0 + lon * 5.0));
        s.soil_type.at(i, j) = 1.0 + std::floor(u * (s.soil_categories - 1) * 0.999);
      }
    }
  }
  return s;
}

double local_hour(Timestamp time, double lon_deg) {
  const double utc = static_cast<double>(((time % 86400) + 86400) % 86400) / 3600.0;
  double h = std::fmod(utc + lon_deg / 15.0, 24.0);
  if (h < 0.0) h += 24.0;
  return h;
}

double year_fraction(Timestamp time) {
  using namespace std::chrono;
  const sys_seconds tp{seconds{time}};
  const year_month_day ymd{floor<days>(tp)};
  const sys_days start{ymd.year() / January / 1};
  const sys_days next{(ymd.year() + years{1}) / January / 1};
  const double elapsed = static_cast<double>((tp - start).count());
  const double length = static_cast<double>(duration_cast<seconds>(next - start).count());
  return elapsed / length;
}

GridField build_features(const GridSpec& grid, Timestamp time, const StaticFields& statics) {
  grid.validate();
  if (statics.land_sea_mask.grid() != grid || statics.surface_geopotential.grid() != grid ||
      statics.soil_type.grid() != grid) {
    throw ValidationError("build_features: static fields are on a different grid");
  }
  if (statics.soil_categories < 2) throw ValidationError("build_features: need at least two soil categories");
  GridField out(grid, UnitTag::kRaw, "features", {kFeatureChannels}, {"feature"});
  out.set_timestamp(time);
  const double soil_span = static_cast<double>(statics.soil_categories - 1);
  const double yr = 2.0 * kPi * year_fraction(time);
  const double sin_yr = std::sin(yr);
  const double cos_yr = std::cos(yr);
  for (std::int64_t i = 0; i < grid.nlat; ++i) {
    for (std::int64_t j = 0; j < grid.nlon; ++j) {
      const double day = 2.0 * kPi * local_hour(time, grid.lon(j)) / 24.0;
      out.at(0, i, j) = statics.land_sea_mask.at(i, j) > 0.5 ? 1.0 : 0.0;
      out.at(1, i, j) = statics.surface_geopotential.at(i, j) / kGeopotentialReference;
      out.at(2, i, j) = statics.soil_type.at(i, j) / soil_span;
      out.at(3, i, j) = grid.lat(i) * kPi / 180.0;
      out.at(4, i, j) = grid.lon(j) * kPi / 180.0;
      out.at(5, i, j) = std::sin(day);
      out.at(6, i, j) = std::cos(day);
      out.at(7, i, j) = sin_yr;
      out.at(8, i, j) = cos_yr;
    }
  }
  return out;
}

}  // namespace precipdiff

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
#include <map>
#include <span>
#include <string>
#include <vector>

namespace precipdiff {

/// Physical meaning of the values carried by a GridField.
enum class UnitTag { kMm, kDbz, kNorm, kRaw };

std::string to_string(UnitTag unit);
UnitTag unit_from_string(const std::string& s);

/// Seconds since the Unix epoch, UTC.
using Timestamp = std::int64_t;

std::string format_timestamp(Timestamp t);
Timestamp parse_timestamp(const std::string& iso);

/// Regular latitude/longitude grid. Row 0 is `lat0`, latitude grows with the
/// row index; column 0 is `lon0`. Coordinates are cell centers in degrees.
struct GridSpec {
  double lat0 = 0.0;
  double lon0 = 0.0;
  double dlat = 1.0;
  double dlon = 1.0;
  std::int64_t nlat = 0;
  std::int64_t nlon = 0;

  double lat(std::int64_t i) const { return lat0 + static_cast<double>(i) * dlat; }
  double lon(std::int64_t j) const { return lon0 + static_cast<double>(j) * dlon; }
  std::int64_t cells() const { return nlat * nlon; }
  void validate() const;

  bool operator==(const GridSpec&) const = default;
};

/// Inclusive latitude/longitude box selecting cell centers.
struct LatLonBounds {
  double lat_min = 0.0;
  double lat_max = 0.0;
  double lon_min = 0.0;
  double lon_max = 0.0;
};

/// A georeferenced array. The last two dimensions are always (lat, lon);
/// any leading dimensions (level, channel, ...) are carried along unchanged
/// by the spatial transforms. Values are stored row-major in double precision.
class GridField {
 public:
  GridField() = default;
  GridField(GridSpec grid, UnitTag unit, std::string variable = {},
            std::vector<std::int64_t> leading = {},
            std::vector<std::string> leading_names = {});

  const GridSpec& grid() const { return grid_; }
  UnitTag unit() const { return unit_; }
  const std::string& variable() const { return variable_; }
  Timestamp timestamp() const { return timestamp_; }

  void set_unit(UnitTag u) { unit_ = u; }
  void set_variable(std::string v) { variable_ = std::move(v); }
  void set_timestamp(Timestamp t) { timestamp_ = t; }

  /// Full shape, leading dims followed by (nlat, nlon).
  std::vector<std::int64_t> shape() const;
  std::vector<std::string> dim_names() const;
  const std::vector<std::int64_t>& leading() const { return leading_; }

  /// Number of (lat, lon) slices, i.e. the product of the leading dims.
  std::int64_t slices() const;
  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& storage() { return values_; }
  const std::vector<double>& storage() const { return values_; }

  std::span<double> slice(std::int64_t s);
  std::span<const double> slice(std::int64_t s) const;

  double& at(std::int64_t i, std::int64_t j) { return values_[i * grid_.nlon + j]; }
  double at(std::int64_t i, std::int64_t j) const { return values_[i * grid_.nlon + j]; }
  double& at(std::int64_t s, std::int64_t i, std::int64_t j) {
    return values_[(s * grid_.nlat + i) * grid_.nlon + j];
  }
  double at(std::int64_t s, std::int64_t i, std::int64_t j) const {
    return values_[(s * grid_.nlat + i) * grid_.nlon + j];
  }

  double max() const;
  double min() const;
  double mean() const;

  /// Same metadata and leading dims on a different grid, zero-filled.
  GridField like(const GridSpec& grid) const;

 private:
  GridSpec grid_;
  UnitTag unit_ = UnitTag::kRaw;
  std::string variable_;
  Timestamp timestamp_ = 0;
  std::vector<std::int64_t> leading_;
  std::vector<std::string> leading_names_;
  std::vector<double> values_;
};

// Precipitation unit chain ---------------------------------------------------

/// Rain rates below this accumulation (mm) are treated as dry.
inline constexpr double kTpFloor = 0.01;
/// Reflectivity assigned to dry cells; the transform never goes below it.
inline constexpr double kDbzFloor = 0.0;

double tp_to_dbz(double tp_mm);
double dbz_to_tp(double dbz);

GridField to_dbz(const GridField& tp);
GridField from_dbz(const GridField& z);

/// Mean over time of the spatial maximum.
double compute_dbz_scale(std::span<const GridField> series);

GridField normalize_dbz(const GridField& z, double scale);
GridField denormalize_dbz(const GridField& z, double scale);

/// Per-variable standardization moments. A variable with levels carries one
/// (mean, std) pair per level; a single pair broadcasts over all slices.
struct Moments {
  std::vector<double> mean;
  std::vector<double> std;
};

struct NormalizationStats {
  std::map<std::string, Moments> variables;
  double dbz_scale_coarse = 1.0;  ///< reanalysis precipitation
  double dbz_scale_fine = 1.0;    ///< high-resolution analysis precipitation

  const Moments& at(const std::string& variable) const;
  void validate() const;
};

GridField standardize(const GridField& v, const NormalizationStats& stats);
GridField destandardize(const GridField& v, const NormalizationStats& stats);

// Spatial transforms ---------------------------------------------------------

/// Non-overlapping k x k mean pooling. Trailing rows/columns that do not fill
/// a whole block are dropped.
GridField avgpool_downsample(const GridField& f, std::int64_t k);

/// Nearest source cell center for every target cell center; equidistant ties
/// go to the lower source index.
GridField nearest_regrid(const GridField& f, const GridSpec& target);

/// Target grid that refines `coarse` by an integer factor so that every
/// coarse cell maps onto an r x r block of fine cells.
GridSpec refine_grid(const GridSpec& coarse, std::int64_t factor);

GridField crop_region(const GridField& f, const LatLonBounds& bounds);

/// Sub-grid selection by index range [row0, row0+nrows) x [col0, col0+ncols).
GridField crop_index(const GridField& f, std::int64_t row0, std::int64_t nrows,
                     std::int64_t col0, std::int64_t ncols);

/// Rounds every value to the nearest float32. Fields that went through
/// GridPack storage are already in this state.
GridField quantize_f32(const GridField& f);

// Mean + residual decomposition ---------------------------------------------

struct ResidualField {
  GridField values;     ///< normalized-dBZ residual on the fine grid
  LatLonBounds region;  ///< fine-grid cell-center bounds
};

/// residual = fine - nearest_regrid(coarse). Adding the regridded coarse field
/// back reproduces `fine_norm` exactly whenever the subtraction is exact,
/// which holds for float32-representable inputs.
ResidualField decompose_residual(const GridField& fine_norm, const GridField& coarse_norm);

/// Inverse of decompose_residual in normalized space.
GridField add_back(const ResidualField& residual, const GridField& coarse_norm);

LatLonBounds bounds_of(const GridSpec& grid);

}  // namespace precipdiff

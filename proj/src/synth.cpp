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

#include "precipdiff/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "precipdiff/errors.hpp"

namespace precipdiff {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kGravity = 9.80665;

struct Storm {
  double lat;
  double lon;
  double amplitude;  // peak mm/h
  double radius;     // degrees
  double peak_hour;
  double lifetime;   // hours (Gaussian envelope width)
};

double height_m(double p_hpa) { return 44330.0 * (1.0 - std::pow(p_hpa / 1013.25, 0.1903)); }

double wrap(double x, double lo, double span) {
  double r = std::fmod(x - lo, span);
  if (r < 0.0) r += span;
  return lo + r;
}

class RainModel {
 public:
  RainModel(const SynthConfig& cfg, std::vector<Storm> storms) : cfg_(cfg), storms_(std::move(storms)) {
    const double dir = cfg.advection_direction_deg * kPi / 180.0;
    u_ = cfg.advection_speed * std::cos(dir);
    v_ = cfg.advection_speed * std::sin(dir);
    lat_lo_ = cfg.coarse.lat0 - 0.5 * cfg.coarse.dlat;
    lon_lo_ = cfg.coarse.lon0 - 0.5 * cfg.coarse.dlon;
    lat_span_ = cfg.coarse.dlat * static_cast<double>(cfg.coarse.nlat);
    lon_span_ = cfg.coarse.dlon * static_cast<double>(cfg.coarse.nlon);
  }

  double steering_u() const { return u_; }
  double steering_v() const { return v_; }

  // Rain rate (mm/h) and the normalized storm-relative vortex components.
  struct Sample {
    double rain = 0.0;
    double activity = 0.0;  // sum of unit-amplitude bumps weighted by envelope
    double vortex_u = 0.0;
    double vortex_v = 0.0;
  };

  Sample at(double lat, double lon, double hour) const {
    Sample s;
    for (const auto& st : storms_) {
      const double env = std::exp(-0.5 * std::pow((hour - st.peak_hour) / st.lifetime, 2.0));
      const double clat = wrap(st.lat + v_ * hour, lat_lo_, lat_span_);
      const double clon = wrap(st.lon + u_ * hour, lon_lo_, lon_span_);
      const double dy = lat - clat;
      const double dx = lon - clon;
      const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * st.radius * st.radius));
      s.rain += st.amplitude * env * g;
      s.activity += env * g;
      // Cyclonic rotation about the storm center.
      s.vortex_u += -dy / st.radius * env * g;
      s.vortex_v += dx / st.radius * env * g;
    }
    return s;
  }

 private:
  const SynthConfig& cfg_;
  std::vector<Storm> storms_;
  double u_ = 0.0, v_ = 0.0;
  double lat_lo_ = 0.0, lon_lo_ = 0.0, lat_span_ = 1.0, lon_span_ = 1.0;
};

// Unit-variance spatially correlated Gaussian noise (separable blur of white noise).
std::vector<double> correlated_noise(std::int64_t nlat, std::int64_t nlon, double length, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> white(static_cast<std::size_t>(nlat * nlon));
  for (double& w : white) w = normal(rng);
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * length)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  for (int k = -radius; k <= radius; ++k) {
    kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * (k * k) / (length * length));
  }
  auto blur = [&](const std::vector<double>& in, bool along_rows) {
    std::vector<double> out(in.size(), 0.0);
    for (std::int64_t i = 0; i < nlat; ++i) {
      for (std::int64_t j = 0; j < nlon; ++j) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          // Periodic boundaries keep the variance uniform.
          const std::int64_t ii = along_rows ? (i + k + nlat * 8) % nlat : i;
          const std::int64_t jj = along_rows ? j : (j + k + nlon * 8) % nlon;
          acc += kernel[static_cast<std::size_t>(k + radius)] * in[static_cast<std::size_t>(ii * nlon + jj)];
        }
        out[static_cast<std::size_t>(i * nlon + j)] = acc;
      }
    }
    return out;
  };
  auto field = blur(blur(white, true), false);
  double mean = 0.0;
  for (double v : field) mean += v;
  mean /= static_cast<double>(field.size());
  double var = 0.0;
  for (double v : field) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(field.size()));
  for (double& v : field) v = (v - mean) / sd;
  return field;
}

}  // namespace

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw ValidationError("pearson: size mismatch");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ma += a[k];
    mb += b[k];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    sab += (a[k] - ma) * (b[k] - mb);
    saa += (a[k] - ma) * (a[k] - ma);
    sbb += (b[k] - mb) * (b[k] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

SynthDataset synth_generate(std::uint64_t seed, const SynthConfig& cfg) {
  cfg.coarse.validate();
  if (cfg.timesteps < 1) throw ValidationError("synth_generate: need at least one timestep");
  if (cfg.storms < 0) throw ValidationError("synth_generate: negative storm count");
  if (cfg.pressure_levels_hpa.empty()) throw ValidationError("synth_generate: no pressure levels");

  SynthDataset ds;
  ds.config = cfg;
  const GridSpec region = cfg.region.apply(cfg.coarse);
  ds.fine_grid = refine_grid(region, cfg.refinement);
  ds.statics = synthetic_static_fields(cfg.coarse);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const GridSpec& g = cfg.coarse;
  const double lat_span = g.dlat * static_cast<double>(g.nlat);
  const double lon_span = g.dlon * static_cast<double>(g.nlon);
  const double hours = static_cast<double>(cfg.timesteps);
  std::vector<Storm> storms;
  for (int k = 0; k < cfg.storms; ++k) {
    Storm s;
    s.lat = g.lat0 + unif(rng) * lat_span;
    s.lon = g.lon0 + unif(rng) * lon_span;
    s.amplitude = 3.0 + 22.0 * unif(rng);
    s.radius = (0.08 + 0.12 * unif(rng)) * std::min(lat_span, lon_span);
    s.peak_hour = -0.25 * hours + 1.5 * hours * unif(rng);
    s.lifetime = 0.2 * hours + 0.4 * hours * unif(rng);
    storms.push_back(s);
  }
  const RainModel rain(cfg, storms);

  const auto levels = static_cast<std::int64_t>(cfg.pressure_levels_hpa.size());
  std::normal_distribution<double> normal(0.0, 1.0);
  const double lat_mid = g.lat0 + 0.5 * lat_span;

  for (int t = 0; t < cfg.timesteps; ++t) {
    const double hour = static_cast<double>(t);
    const Timestamp ts = cfg.start + static_cast<Timestamp>(t) * 3600;

    AtmosphericState st;
    st.timestamp = ts;
    for (const auto& name : kSurfaceVariables) {
      st.surface.emplace_back(g, UnitTag::kRaw, name);
      st.surface.back().set_timestamp(ts);
    }
    for (const auto& name : kUpperVariables) {
      st.upper.emplace_back(g, UnitTag::kRaw, name, std::vector<std::int64_t>{levels},
                            std::vector<std::string>{"level"});
      st.upper.back().set_timestamp(ts);
    }
    GridField tp(g, UnitTag::kMm, "TP");
    tp.set_timestamp(ts);

    for (std::int64_t i = 0; i < g.nlat; ++i) {
      for (std::int64_t j = 0; j < g.nlon; ++j) {
        const double lat = g.lat(i);
        const double lon = g.lon(j);
        const auto s = rain.at(lat, lon, hour);
        const double wet = s.rain / (s.rain + 2.0);  // saturating rain proxy in [0, 1)
        const double diurnal = std::sin(2.0 * kPi * local_hour(ts, lon) / 24.0);
        tp.at(i, j) = s.rain;

        st.surface[0].at(i, j) = 300.0 - 0.6 * (lat - lat_mid) + 3.0 * diurnal - 2.5 * wet + 0.3 * normal(rng);
        st.surface[1].at(i, j) = 8.0 * rain.steering_u() + 6.0 * s.vortex_u + 0.3 * normal(rng);
        st.surface[2].at(i, j) = 8.0 * rain.steering_v() + 6.0 * s.vortex_v + 0.3 * normal(rng);
        st.surface[3].at(i, j) = 101325.0 - 900.0 * s.activity - 20.0 * (lat - lat_mid) + 30.0 * normal(rng);

        for (std::int64_t l = 0; l < levels; ++l) {
          const double p = cfg.pressure_levels_hpa[static_cast<std::size_t>(l)];
          const double h = height_m(p);
          const double shear = 1.0 + h / 4000.0;
          st.upper[0].at(l, i, j) = kGravity * h - 40.0 * (lat - lat_mid) - 150.0 * s.activity + 5.0 * normal(rng);
          st.upper[1].at(l, i, j) =
              288.15 - 0.0065 * std::min(h, 11000.0) - 0.5 * (lat - lat_mid) + 1.5 * wet + 0.2 * normal(rng);
          st.upper[2].at(l, i, j) = 10.0 * shear * rain.steering_u() + 5.0 * s.vortex_u + 0.4 * normal(rng);
          st.upper[3].at(l, i, j) = 10.0 * shear * rain.steering_v() + 5.0 * s.vortex_v + 0.4 * normal(rng);
          const double q0 = 0.014 * std::exp(-h / 2500.0);
          st.upper[4].at(l, i, j) = std::max(0.0, q0 * (0.55 + 0.45 * wet) * (1.0 + 0.03 * normal(rng)));
        }
      }
    }

    const auto noise = correlated_noise(ds.fine_grid.nlat, ds.fine_grid.nlon, cfg.fine_noise_length, rng);
    GridField fine(ds.fine_grid, UnitTag::kMm, "TP");
    fine.set_timestamp(ts);
    const double sigma = cfg.fine_noise;
    for (std::int64_t i = 0; i < ds.fine_grid.nlat; ++i) {
      for (std::int64_t j = 0; j < ds.fine_grid.nlon; ++j) {
        const double r = rain.at(ds.fine_grid.lat(i), ds.fine_grid.lon(j), hour).rain;
        const double eta = noise[static_cast<std::size_t>(i * ds.fine_grid.nlon + j)];
        fine.at(i, j) = r * std::exp(sigma * eta - 0.5 * sigma * sigma);
      }
    }

    ds.states.push_back(std::move(st));
    ds.tp_coarse.push_back(std::move(tp));
    ds.tp_fine.push_back(std::move(fine));
  }
  return ds;
}

}  // namespace precipdiff

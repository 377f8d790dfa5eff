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

#include "precipdiff/profile.hpp"

#include "precipdiff/errors.hpp"
#include "precipdiff/io.hpp"
#include "precipdiff/nn.hpp"
#include "precipdiff/verification.hpp"

namespace precipdiff {

namespace {

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

template <typename T>
T get(const nlohmann::json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

nlohmann::json to_json(const GridSpec& g) {
  return {{"lat0", g.lat0}, {"lon0", g.lon0}, {"dlat", g.dlat}, {"dlon", g.dlon}, {"nlat", g.nlat}, {"nlon", g.nlon}};
}

GridSpec grid_from_json(const nlohmann::json& j) {
  return GridSpec{get<double>(j, "lat0"),        get<double>(j, "lon0"),        get<double>(j, "dlat"),
                  get<double>(j, "dlon"),        get<std::int64_t>(j, "nlat"), get<std::int64_t>(j, "nlon")};
}

nlohmann::json to_json(const CropWindow& w) {
  return {{"row0", w.row0}, {"rows", w.rows}, {"col0", w.col0}, {"cols", w.cols}};
}

CropWindow crop_window_from_json(const nlohmann::json& j) {
  return CropWindow{get<std::int64_t>(j, "row0"), get<std::int64_t>(j, "rows"), get<std::int64_t>(j, "col0"),
                    get<std::int64_t>(j, "cols")};
}

nlohmann::json to_json(const SynthConfig& c) {
  return {{"coarse", to_json(c.coarse)},
          {"pressure_levels_hpa", c.pressure_levels_hpa},
          {"refinement", c.refinement},
          {"region", to_json(c.region)},
          {"timesteps", c.timesteps},
          {"storms", c.storms},
          {"advection_speed", c.advection_speed},
          {"advection_direction_deg", c.advection_direction_deg},
          {"start", c.start},
          {"fine_noise", c.fine_noise},
          {"fine_noise_length", c.fine_noise_length}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.coarse = grid_from_json(j.at("coarse"));
  c.pressure_levels_hpa = get<std::vector<double>>(j, "pressure_levels_hpa");
  c.refinement = get<std::int64_t>(j, "refinement");
  c.region = crop_window_from_json(j.at("region"));
  c.timesteps = get<int>(j, "timesteps");
  c.storms = get<int>(j, "storms");
  c.advection_speed = get<double>(j, "advection_speed");
  c.advection_direction_deg = get<double>(j, "advection_direction_deg");
  c.start = get<Timestamp>(j, "start");
  c.fine_noise = get<double>(j, "fine_noise");
  c.fine_noise_length = get<double>(j, "fine_noise_length");
  return c;
}

GridSpec Profile::fine_grid() const { return refine_grid(synth.region.apply(synth.coarse), synth.refinement); }

void Profile::finalize() {
  const auto levels = static_cast<std::int64_t>(synth.pressure_levels_hpa.size());
  det.height = synth.coarse.nlat;
  det.width = synth.coarse.nlon;
  det.levels = levels;
  det.surface_vars = static_cast<std::int64_t>(kSurfaceVariables.size());
  det.upper_vars = static_cast<std::int64_t>(kUpperVariables.size());
  det.timesteps = 2;

  const auto fine = fine_grid();
  vae.height = fine.nlat;
  vae.width = fine.nlon;
  vae.latent_height = ceil_div(fine.nlat, latent_reduction);
  vae.latent_width = ceil_div(fine.nlon, latent_reduction);

  dit.latent_channels = vae.latent_channels;
  dit.latent_height = vae.latent_height;
  dit.latent_width = vae.latent_width;
  dit.cond_surface_vars = static_cast<std::int64_t>(kSurfaceVariables.size()) + 1;  // + TP
  dit.cond_upper_vars = static_cast<std::int64_t>(kUpperVariables.size());
  dit.levels = levels;
  dit.cond_height = cond_window.rows;
  dit.cond_width = cond_window.cols;

  det_train.seed = nn::derive_seed(seed, 1);
  vae_train.seed = nn::derive_seed(seed, 2);
  diffusion_train.seed = nn::derive_seed(seed, 3);
  if (thresholds.empty()) thresholds = kDefaultThresholds;
  if (cdf_edges.empty()) cdf_edges = {0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 15.0, 20.0, 30.0, 50.0};
}

void Profile::validate() const {
  synth.coarse.validate();
  const auto region = synth.region.apply(synth.coarse);
  cond_window.apply(synth.coarse);
  const auto fine = fine_grid();
  if (fine.nlat != region.nlat * synth.refinement || fine.nlon != region.nlon * synth.refinement) {
    throw ConfigError("fine extent must equal the cropped coarse extent times the refinement factor");
  }
  if (synth.timesteps < 4) throw ConfigError("need at least 4 timesteps");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must be in (0, 1)");
  if (members < 2) throw ConfigError("members must be >= 2");
  if (ddim_steps < 1 || ddim_steps > diffusion_train.timesteps) throw ConfigError("ddim_steps must be in [1, T]");
  if (latent_reduction < 1) throw ConfigError("latent_reduction must be positive");
  det::canonical_experiment(experiment);
  det.validate();
  vae.validate();
  dit.validate();
}

nlohmann::json Profile::to_json() const {
  return {{"name", name},
          {"seed", seed},
          {"synth", precipdiff::to_json(synth)},
          {"cond_window", precipdiff::to_json(cond_window)},
          {"latent_reduction", latent_reduction},
          {"train_fraction", train_fraction},
          {"experiment", experiment},
          {"det", det.to_json()},
          {"det_train", det_train.to_json()},
          {"vae", vae.to_json()},
          {"vae_train", vae_train.to_json()},
          {"dit", dit.to_json()},
          {"diffusion_train", diffusion_train.to_json()},
          {"members", members},
          {"ddim_steps", ddim_steps},
          {"thresholds", thresholds},
          {"cdf_edges", cdf_edges}};
}

namespace {

Profile parse_profile(const nlohmann::json& j) {
  Profile p;
  p.name = get<std::string>(j, "name");
  p.seed = get<std::uint64_t>(j, "seed");
  p.synth = synth_config_from_json(j.at("synth"));
  p.cond_window = crop_window_from_json(j.at("cond_window"));
  p.latent_reduction = get<std::int64_t>(j, "latent_reduction");
  p.train_fraction = get<double>(j, "train_fraction");
  p.experiment = get<std::string>(j, "experiment");
  p.det = det::DetModelConfig::from_json(j.at("det"));
  p.det_train = det::DetTrainConfig::from_json(j.at("det_train"));
  p.vae = vae::VaeConfig::from_json(j.at("vae"));
  p.vae_train = vae::VaeTrainConfig::from_json(j.at("vae_train"));
  p.dit = diffusion::DitConfig::from_json(j.at("dit"));
  p.diffusion_train = diffusion::DiffusionTrainConfig::from_json(j.at("diffusion_train"));
  p.members = get<int>(j, "members");
  p.ddim_steps = get<std::int64_t>(j, "ddim_steps");
  p.thresholds = get<std::vector<double>>(j, "thresholds");
  p.cdf_edges = get<std::vector<double>>(j, "cdf_edges");
  return p;
}

}  // namespace

Profile make_profile(const std::string& name) {
  Profile p;
  p.name = name;
  if (name == "desk") {
    p.det.embed_dim = 32;
    p.det.heads = {2, 4, 2};
    p.det_train.steps = 300;
    p.det_train.batch_size = 4;
    p.det_train.optim.lr = 1e-3;
    p.det_train.optim.total_steps = p.det_train.steps;
    p.vae.channels = {8, 16, 32};
    p.vae.bottleneck_channels = 32;
    p.vae_train.steps = 600;
    p.vae_train.batch_size = 4;
    p.vae_train.optim.lr = 2e-3;
    p.vae_train.optim.total_steps = p.vae_train.steps;
    p.dit.hidden = 128;
    p.dit.depth = 4;
    p.dit.heads = 4;
    p.diffusion_train.steps = 1500;
    p.diffusion_train.batch_size = 16;
    p.diffusion_train.optim.lr = 1e-3;
    p.diffusion_train.optim.total_steps = p.diffusion_train.steps;
  } else if (name == "paper") {
    p.synth.coarse = GridSpec{0.0, 70.0, 0.25, 0.25, 241, 281};
    p.synth.pressure_levels_hpa = {1000, 925, 850, 700, 600, 500, 400, 300, 250, 200, 150, 100, 50};
    p.synth.region = CropWindow{60, 180, 0, 280};
    p.synth.storms = 40;
    p.cond_window = CropWindow{60, 181, 0, 241};
    p.det.embed_dim = 96;
    p.det.heads = {3, 6, 3};
    p.det.embed_hidden = 16;
    p.det_train.steps = 20000;
    p.det_train.batch_size = 1;
    p.det_train.optim.total_steps = p.det_train.steps;
    p.vae.channels = {32, 64, 128};
    p.vae.bottleneck_channels = 128;
    p.vae_train.steps = 20000;
    p.vae_train.batch_size = 1;
    p.vae_train.optim.total_steps = p.vae_train.steps;
    p.dit.hidden = 384;
    p.dit.depth = 12;
    p.dit.heads = 6;
    p.dit.cond_hidden = 16;
    p.diffusion_train.steps = 50000;
    p.diffusion_train.batch_size = 4;
    p.diffusion_train.optim.total_steps = p.diffusion_train.steps;
  } else {
    throw ConfigError("unknown profile: " + name + " (expected desk or paper)");
  }
  p.finalize();
  return p;
}

Profile profile_from_json(const nlohmann::json& patch) {
  const std::string name = patch.contains("name") ? get<std::string>(patch, "name") : std::string("desk");
  auto doc = make_profile(name).to_json();
  doc.merge_patch(patch);
  Profile p = parse_profile(doc);
  p.finalize();
  p.validate();
  return p;
}

void apply_overrides(nlohmann::json& doc, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + a);
    std::string pointer;
    std::string key = a.substr(0, eq);
    std::size_t start = 0;
    while (start <= key.size()) {
      const auto dot = key.find('.', start);
      pointer += "/" + key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    const std::string raw = a.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, /*allow_exceptions=*/false);
    if (value.is_discarded()) value = raw;
    doc[nlohmann::json::json_pointer(pointer)] = value;
  }
}

std::string config_hash(const Profile& p) { return sha256_hex(p.to_json().dump()); }

}  // namespace precipdiff

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

#include "precipdiff/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "precipdiff/diffusion.hpp"
#include "precipdiff/ensemble.hpp"
#include "precipdiff/errors.hpp"
#include "precipdiff/features.hpp"
#include "precipdiff/inference.hpp"
#include "precipdiff/io.hpp"
#include "precipdiff/nn.hpp"
#include "precipdiff/vae.hpp"
#include "precipdiff/verification.hpp"

#ifndef PRECIPDIFF_VERSION
#define PRECIPDIFF_VERSION "0.1.0"
#endif

namespace precipdiff::pipeline {

namespace {

void write_json(const nlohmann::json& j, const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::string rel(const fs::path& p, const fs::path& base) { return fs::relative(p, base).generic_string(); }

void log(const StageOptions& opt, const std::string& msg) {
  if (opt.verbose) std::clog << msg << std::endl;
}

std::function<void(std::int64_t, double)> step_logger(const StageOptions& opt, const std::string& tag,
                                                      std::int64_t total) {
  if (!opt.verbose) return {};
  return [&opt, tag, total](std::int64_t step, double loss) {
    if (step == 0 || (step + 1) % opt.log_every == 0 || step + 1 == total) {
      std::clog << "  " << tag << " step " << (step + 1) << "/" << total << " loss " << loss << std::endl;
    }
  };
}

/// Re-raises with the stage name prepended, keeping the error category.
template <typename F>
auto tagged(const std::string& stage, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const ConfigError& e) {
    throw ConfigError("[" + stage + "] " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError("[" + stage + "] " + e.what());
  } catch (const NumericError& e) {
    throw NumericError("[" + stage + "] " + e.what());
  } catch (const IoError& e) {
    throw IoError("[" + stage + "] " + e.what());
  }
}

std::string format_value(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string format_optional(const std::optional<double>& v) { return v ? format_value(*v) : "nan"; }

std::string member_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "member_%02zu", i);
  return buf;
}

std::vector<torch::Tensor> residual_tensors(const Prepared& prep) {
  std::vector<torch::Tensor> out;
  for (auto t : prep.split.train) out.push_back(nn::to_tensor(prep.residual[t]).unsqueeze(0));
  return out;
}

const fs::path kDataDir = "data";
const fs::path kPrepDir = "prep";
const fs::path kModelDir = "models";
const fs::path kInferDir = "infer";
const fs::path kEvalDir = "eval";

}  // namespace

fs::path cache_dir() {
  if (const char* env = std::getenv("PRECIPDIFF_CACHE"); env != nullptr && *env != '\0') return env;
  if (const char* xdg = std::getenv("XDG_CACHE_HOME"); xdg != nullptr && *xdg != '\0') {
    return fs::path(xdg) / "precipdiff";
  }
  if (const char* home = std::getenv("HOME"); home != nullptr && *home != '\0') {
    return fs::path(home) / ".cache" / "precipdiff";
  }
  return fs::temp_directory_path() / "precipdiff";
}

fs::path default_workdir(const Profile& p) {
  return cache_dir() / "runs" / (p.name + "-seed" + std::to_string(p.seed));
}

void save_profile(const Profile& p, const fs::path& workdir) { write_json(p.to_json(), workdir / "config.json"); }

Profile load_profile(const fs::path& workdir) {
  const auto path = workdir / "config.json";
  if (!fs::exists(path)) throw ConfigError("no config.json in " + workdir.string() + "; run synth-data first");
  return profile_from_json(read_json(path));
}

// Stacking --------------------------------------------------------------------

GridField stack_time(const std::vector<GridField>& series) {
  if (series.empty()) throw ValidationError("stack_time: empty series");
  const auto& first = series.front();
  std::vector<std::int64_t> leading{static_cast<std::int64_t>(series.size())};
  leading.insert(leading.end(), first.leading().begin(), first.leading().end());
  auto names = first.dim_names();
  names.resize(names.size() - 2);
  names.insert(names.begin(), "time");
  GridField out(first.grid(), first.unit(), first.variable(), leading, names);
  out.set_timestamp(first.timestamp());
  auto dst = out.values();
  std::size_t offset = 0;
  for (const auto& f : series) {
    if (f.shape() != first.shape() || !(f.grid() == first.grid())) {
      throw ValidationError("stack_time: fields differ in shape");
    }
    std::copy(f.values().begin(), f.values().end(), dst.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += f.size();
  }
  return out;
}

std::vector<GridField> unstack_time(const GridField& stacked, const std::vector<Timestamp>& times) {
  if (stacked.leading().empty() || stacked.leading().front() != static_cast<std::int64_t>(times.size())) {
    throw ValidationError("unstack_time: leading dimension does not match the time axis");
  }
  std::vector<std::int64_t> leading(stacked.leading().begin() + 1, stacked.leading().end());
  auto names = stacked.dim_names();
  names.resize(names.size() - 2);
  names.erase(names.begin());
  std::vector<GridField> out;
  const auto per = stacked.size() / times.size();
  for (std::size_t t = 0; t < times.size(); ++t) {
    GridField f(stacked.grid(), stacked.unit(), stacked.variable(), leading, names);
    f.set_timestamp(times[t]);
    std::copy_n(stacked.values().begin() + static_cast<std::ptrdiff_t>(t * per), per, f.values().begin());
    out.push_back(std::move(f));
  }
  return out;
}

// Dataset ---------------------------------------------------------------------

void save_dataset(const SynthDataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<Timestamp> times;
  for (const auto& s : ds.states) times.push_back(s.timestamp);
  write_json({{"synth", to_json(ds.config)},
              {"timestamps", times},
              {"fine_grid", to_json(ds.fine_grid)},
              {"soil_categories", ds.statics.soil_categories}},
             dir / "meta.json");
  for (std::size_t v = 0; v < kSurfaceVariables.size(); ++v) {
    std::vector<GridField> series;
    for (const auto& s : ds.states) series.push_back(s.surface[v]);
    write_gridpack(stack_time(series), dir / (kSurfaceVariables[v] + ".gp"));
  }
  for (std::size_t v = 0; v < kUpperVariables.size(); ++v) {
    std::vector<GridField> series;
    for (const auto& s : ds.states) series.push_back(s.upper[v]);
    write_gridpack(stack_time(series), dir / (kUpperVariables[v] + ".gp"));
  }
  write_gridpack(stack_time(ds.tp_coarse), dir / "TP_coarse.gp");
  write_gridpack(stack_time(ds.tp_fine), dir / "TP_fine.gp");
  write_gridpack(ds.statics.land_sea_mask, dir / "LSM.gp");
  write_gridpack(ds.statics.surface_geopotential, dir / "ZS.gp");
  write_gridpack(ds.statics.soil_type, dir / "SOIL.gp");
}

SynthDataset load_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "meta.json")) throw ConfigError("no dataset in " + dir.string() + "; run synth-data first");
  const auto meta = read_json(dir / "meta.json");
  SynthDataset ds;
  ds.config = synth_config_from_json(meta.at("synth"));
  ds.fine_grid = grid_from_json(meta.at("fine_grid"));
  const auto times = meta.at("timestamps").get<std::vector<Timestamp>>();
  ds.states.resize(times.size());
  for (std::size_t t = 0; t < times.size(); ++t) ds.states[t].timestamp = times[t];
  for (const auto& name : kSurfaceVariables) {
    auto series = unstack_time(read_gridpack(dir / (name + ".gp")), times);
    for (std::size_t t = 0; t < times.size(); ++t) ds.states[t].surface.push_back(std::move(series[t]));
  }
  for (const auto& name : kUpperVariables) {
    auto series = unstack_time(read_gridpack(dir / (name + ".gp")), times);
    for (std::size_t t = 0; t < times.size(); ++t) ds.states[t].upper.push_back(std::move(series[t]));
  }
  ds.tp_coarse = unstack_time(read_gridpack(dir / "TP_coarse.gp"), times);
  ds.tp_fine = unstack_time(read_gridpack(dir / "TP_fine.gp"), times);
  ds.statics.land_sea_mask = read_gridpack(dir / "LSM.gp");
  ds.statics.surface_geopotential = read_gridpack(dir / "ZS.gp");
  ds.statics.soil_type = read_gridpack(dir / "SOIL.gp");
  ds.statics.soil_categories = meta.at("soil_categories").get<int>();
  for (const auto& s : ds.states) s.validate();
  return ds;
}

// Statistics ------------------------------------------------------------------

nlohmann::json to_json(const NormalizationStats& s) {
  nlohmann::json vars = nlohmann::json::object();
  for (const auto& [name, m] : s.variables) vars[name] = {{"mean", m.mean}, {"std", m.std}};
  return {{"variables", vars}, {"dbz_scale_coarse", s.dbz_scale_coarse}, {"dbz_scale_fine", s.dbz_scale_fine}};
}

NormalizationStats stats_from_json(const nlohmann::json& j) {
  NormalizationStats s;
  try {
    for (const auto& [name, m] : j.at("variables").items()) {
      s.variables[name] = Moments{m.at("mean").get<std::vector<double>>(), m.at("std").get<std::vector<double>>()};
    }
    s.dbz_scale_coarse = j.at("dbz_scale_coarse").get<double>();
    s.dbz_scale_fine = j.at("dbz_scale_fine").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("stats: ") + e.what());
  }
  s.validate();
  return s;
}

NormalizationStats fit_stats(const SynthDataset& ds, const std::vector<std::size_t>& times) {
  if (times.empty()) throw ValidationError("fit_stats: no training times");
  NormalizationStats stats;
  auto moments = [&](auto&& field_of, std::int64_t slices) {
    Moments m;
    for (std::int64_t s = 0; s < slices; ++s) {
      double sum = 0.0, sq = 0.0;
      std::size_t n = 0;
      for (auto t : times) {
        for (double v : field_of(t).slice(s)) {
          sum += v;
          sq += v * v;
          ++n;
        }
      }
      const double mean = sum / static_cast<double>(n);
      const double var = std::max(sq / static_cast<double>(n) - mean * mean, 0.0);
      m.mean.push_back(mean);
      m.std.push_back(std::max(std::sqrt(var), 1e-6));
    }
    return m;
  };
  for (std::size_t v = 0; v < kSurfaceVariables.size(); ++v) {
    stats.variables[kSurfaceVariables[v]] =
        moments([&](std::size_t t) -> const GridField& { return ds.states[t].surface[v]; }, 1);
  }
  const auto levels = ds.states.front().levels();
  for (std::size_t v = 0; v < kUpperVariables.size(); ++v) {
    stats.variables[kUpperVariables[v]] =
        moments([&](std::size_t t) -> const GridField& { return ds.states[t].upper[v]; }, levels);
  }
  std::vector<GridField> coarse, fine;
  for (auto t : times) {
    coarse.push_back(to_dbz(ds.tp_coarse[t]));
    fine.push_back(to_dbz(ds.tp_fine[t]));
  }
  stats.dbz_scale_coarse = compute_dbz_scale(coarse);
  stats.dbz_scale_fine = compute_dbz_scale(fine);
  if (!(stats.dbz_scale_coarse > 0.0) || !(stats.dbz_scale_fine > 0.0)) {
    throw ValidationError("fit_stats: training period has no precipitation above the dBZ floor");
  }
  stats.validate();
  return stats;
}

Split make_split(std::size_t timesteps, double train_fraction) {
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(timesteps) * train_fraction));
  if (n_train < 2 || n_train >= timesteps) throw ConfigError("split leaves an empty train or test period");
  Split s;
  for (std::size_t t = 0; t < timesteps; ++t) (t < n_train ? s.train : s.test).push_back(t);
  return s;
}

Prepared load_prepared(const fs::path& workdir) {
  const auto dir = workdir / kPrepDir;
  if (!fs::exists(dir / "stats.json")) throw ConfigError("no prep/ in " + workdir.string() + "; run preprocess first");
  Prepared p;
  p.stats = stats_from_json(read_json(dir / "stats.json"));
  const auto split = read_json(dir / "split.json");
  p.split.train = split.at("train").get<std::vector<std::size_t>>();
  p.split.test = split.at("test").get<std::vector<std::size_t>>();
  const auto times = split.at("timestamps").get<std::vector<Timestamp>>();
  p.tp_coarse_norm = unstack_time(read_gridpack(dir / "tp_coarse_norm.gp"), times);
  p.tp_fine_norm = unstack_time(read_gridpack(dir / "tp_fine_norm.gp"), times);
  p.residual = unstack_time(read_gridpack(dir / "residual.gp"), times);
  return p;
}

torch::Tensor build_condition(const AtmosphericState& state, const GridField& tp_coarse_norm,
                              const NormalizationStats& stats, const CropWindow& window) {
  if (!(tp_coarse_norm.grid() == state.grid())) throw ValidationError("condition: precipitation grid mismatch");
  auto crop = [&](const GridField& f) {
    return nn::to_tensor(crop_index(f, window.row0, window.rows, window.col0, window.cols));
  };
  std::vector<torch::Tensor> parts;
  for (const auto& f : state.surface) parts.push_back(crop(standardize(f, stats)).unsqueeze(0));
  parts.push_back(crop(tp_coarse_norm).unsqueeze(0));
  for (const auto& f : state.upper) parts.push_back(crop(standardize(f, stats)));
  return torch::cat(parts, 0);
}

det::DetSample det_sample(const det::DetModelConfig& cfg, const SynthDataset& ds, const Prepared& prep,
                          std::size_t t, bool with_target) {
  if (t == 0 || t >= ds.states.size()) throw ValidationError("det sample needs a previous state");
  auto s = det::assemble_sample(ds.states[t - 1], ds.states[t], prep.stats, cfg.st_features ? &ds.statics : nullptr);
  if (with_target) s.target = nn::to_tensor(prep.tp_coarse_norm[t]).unsqueeze(0);
  return s;
}

// Stages ----------------------------------------------------------------------

Artifacts stage_synth(const Profile& p, const fs::path& workdir, const StageOptions& opt) {
  return tagged("synth-data", [&] {
    p.validate();
    save_profile(p, workdir);
    const auto key = sha256_hex(to_json(p.synth).dump() + "|" + std::to_string(p.seed)).substr(0, 16);
    const auto cached = cache_dir() / "synth" / key;
    const auto dest = workdir / kDataDir;
    fs::remove_all(dest);
    if (fs::exists(cached / "meta.json")) {
      log(opt, "synth-data: reusing " + cached.string());
      fs::create_directories(dest);
      fs::copy(cached, dest, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
    } else {
      log(opt, "synth-data: generating " + std::to_string(p.synth.timesteps) + " hours");
      const auto ds = synth_generate(p.seed, p.synth);
      save_dataset(ds, dest);
      std::error_code ec;
      fs::create_directories(cached.parent_path(), ec);
      const auto staging = cached.string() + ".tmp";
      fs::remove_all(staging, ec);
      fs::copy(dest, staging, fs::copy_options::recursive, ec);
      if (!ec) fs::rename(staging, cached, ec);
      if (ec) fs::remove_all(staging, ec);
    }
    Artifacts out{"config.json"};
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dest)) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out.push_back(rel(f, workdir));
    return out;
  });
}

Artifacts stage_preprocess(const Profile& p, const fs::path& workdir, const StageOptions& opt) {
  return tagged("preprocess", [&] {
    const auto ds = load_dataset(workdir / kDataDir);
    const auto split = make_split(ds.states.size(), p.train_fraction);
    const auto stats = fit_stats(ds, split.train);
    log(opt, "preprocess: dbz scales coarse " + format_value(stats.dbz_scale_coarse) + " fine " +
                 format_value(stats.dbz_scale_fine));
    std::vector<GridField> coarse, fine, residual;
    std::vector<Timestamp> times;
    for (std::size_t t = 0; t < ds.states.size(); ++t) {
      times.push_back(ds.states[t].timestamp);
      coarse.push_back(quantize_f32(normalize_dbz(to_dbz(ds.tp_coarse[t]), stats.dbz_scale_coarse)));
      fine.push_back(quantize_f32(normalize_dbz(to_dbz(ds.tp_fine[t]), stats.dbz_scale_fine)));
      residual.push_back(decompose_residual(fine.back(), coarse.back()).values);
      residual.back().set_variable("TP_residual");
    }
    const auto dir = workdir / kPrepDir;
    fs::create_directories(dir);
    write_json(to_json(stats), dir / "stats.json");
    write_json({{"train", split.train}, {"test", split.test}, {"timestamps", times}}, dir / "split.json");
    write_gridpack(stack_time(coarse), dir / "tp_coarse_norm.gp");
    write_gridpack(stack_time(fine), dir / "tp_fine_norm.gp");
    write_gridpack(stack_time(residual), dir / "residual.gp");
    return Artifacts{"prep/stats.json", "prep/split.json", "prep/tp_coarse_norm.gp", "prep/tp_fine_norm.gp",
                     "prep/residual.gp"};
  });
}

Artifacts stage_train_det(const Profile& p, const fs::path& workdir, const StageOptions& opt,
                          const std::optional<fs::path>& out) {
  return tagged("train-det", [&] {
    const auto ds = load_dataset(workdir / kDataDir);
    const auto prep = load_prepared(workdir);
    const auto cfg = det::apply_experiment(p.det, p.experiment);
    std::vector<det::DetSample> data;
    for (auto t : prep.split.train) {
      if (t >= 1) data.push_back(det_sample(cfg, ds, prep, t, true));
    }
    log(opt, "train-det: " + det::canonical_experiment(p.experiment) + ", " + std::to_string(data.size()) +
                 " samples, " + std::to_string(p.det_train.steps) + " steps");
    det::DetTrainer trainer(cfg, p.det_train);
    trainer.train(data, step_logger(opt, "det", p.det_train.steps));
    const auto path = out.value_or(workdir / kModelDir / "det.ckpt");
    fs::create_directories(fs::absolute(path).parent_path());
    write_checkpoint(trainer.checkpoint(), path);
    return Artifacts{rel(fs::absolute(path), fs::absolute(workdir))};
  });
}

Artifacts stage_train_vae(const Profile& p, const fs::path& workdir, const StageOptions& opt) {
  return tagged("train-vae", [&] {
    const auto prep = load_prepared(workdir);
    const auto data = residual_tensors(prep);
    log(opt, "train-vae: " + std::to_string(data.size()) + " residual fields, " + std::to_string(p.vae_train.steps) +
                 " steps");
    vae::VaeTrainer trainer(p.vae, p.vae_train);
    trainer.train(data, step_logger(opt, "vae", p.vae_train.steps));
    trainer.fit_latent_stats(data);
    fs::create_directories(workdir / kModelDir);
    write_checkpoint(trainer.checkpoint(), workdir / kModelDir / "vae.ckpt");
    return Artifacts{"models/vae.ckpt"};
  });
}

Artifacts stage_train_diffusion(const Profile& p, const fs::path& workdir, const StageOptions& opt) {
  return tagged("train-diffusion", [&] {
    const auto ds = load_dataset(workdir / kDataDir);
    const auto prep = load_prepared(workdir);
    auto vae = vae::load_vae(read_checkpoint(workdir / kModelDir / "vae.ckpt"));
    if (!vae.stats.defined()) throw ConfigError("VAE checkpoint carries no latent statistics");
    const auto latents = vae.stats.normalize(vae::encode_means(vae.model, residual_tensors(prep)));
    std::vector<diffusion::DiffusionSample> data;
    for (std::size_t k = 0; k < prep.split.train.size(); ++k) {
      const auto t = prep.split.train[k];
      data.push_back({latents[static_cast<std::int64_t>(k)],
                      build_condition(ds.states[t], prep.tp_coarse_norm[t], prep.stats, p.cond_window)});
    }
    log(opt, "train-diffusion: " + std::to_string(data.size()) + " latents, " +
                 std::to_string(p.diffusion_train.steps) + " steps");
    diffusion::DiffusionTrainer trainer(p.dit, p.diffusion_train);
    trainer.train(data, step_logger(opt, "diffusion", p.diffusion_train.steps));
    write_checkpoint(trainer.checkpoint(), workdir / kModelDir / "diffusion.ckpt");
    return Artifacts{"models/diffusion.ckpt"};
  });
}

void postprocess_members(const fs::path& dir) {
  EnsembleSet ens;
  for (std::size_t i = 0;; ++i) {
    const auto path = dir / (member_name(i) + ".gp");
    if (!fs::exists(path)) break;
    ens.members.push_back(read_gridpack(path));
    ens.seeds.push_back(i);
  }
  if (ens.members.empty()) throw ValidationError("no member_XX.gp files in " + dir.string());
  ens.timestamp = ens.members.front().timestamp();
  write_gridpack(ensemble_mean(ens), dir / "mean.gp");
  write_gridpack(probability_match(ens), dir / "pm.gp");
}

Artifacts stage_infer(const Profile& p, const fs::path& workdir, const StageOptions& opt,
                      const std::optional<fs::path>& out) {
  return tagged("infer", [&] {
    const auto ds = load_dataset(workdir / kDataDir);
    const auto prep = load_prepared(workdir);
    auto det_model = det::load_det_model(read_checkpoint(workdir / kModelDir / "det.ckpt"));
    auto vae = vae::load_vae(read_checkpoint(workdir / kModelDir / "vae.ckpt"));
    auto diff = diffusion::load_diffusion(read_checkpoint(workdir / kModelDir / "diffusion.ckpt"));
    const auto root = out.value_or(workdir / kInferDir);
    fs::remove_all(root);
    Artifacts written;
    GridField zero(ds.fine_grid, UnitTag::kNorm, "TP_residual");
    for (auto t : prep.split.test) {
      const auto ts = ds.states[t].timestamp;
      const auto sample = det_sample(det_model->config(), ds, prep, t, false);
      GridField det_norm = nn::from_tensor(det::det_predict(det_model, sample), prep.tp_coarse_norm[t]);
      det_norm.set_timestamp(ts);

      inference::MemberRequest req{det_norm, build_condition(ds.states[t], det_norm, prep.stats, p.cond_window),
                                   ds.fine_grid, prep.stats.dbz_scale_fine, ts};
      inference::MemberSettings settings{p.members, nn::derive_seed(p.seed, 1000 + t), p.ddim_steps};
      const auto ens = inference::generate_members(vae, diff, req, settings);

      const auto dir = root / std::to_string(t);
      fs::create_directories(dir);
      for (std::size_t i = 0; i < ens.size(); ++i) write_gridpack(ens.members[i], dir / (member_name(i) + ".gp"));
      postprocess_members(dir);
      zero.set_timestamp(ts);
      auto det_fine = recombine(det_norm, ResidualField{zero, bounds_of(ds.fine_grid)}, prep.stats.dbz_scale_fine);
      det_fine.set_timestamp(ts);
      write_gridpack(det_fine, dir / "det.gp");
      write_gridpack(ds.tp_fine[t], dir / "obs.gp");
      std::vector<std::string> names;
      for (std::size_t i = 0; i < ens.size(); ++i) names.push_back(member_name(i));
      names.insert(names.end(), {"mean", "pm", "det", "obs"});
      for (const auto& n : names) written.push_back(rel(fs::absolute(dir / (n + ".gp")), fs::absolute(workdir)));
      log(opt, "infer: " + format_timestamp(ts) + " " + std::to_string(ens.size()) + " members");
    }
    return written;
  });
}

namespace {

struct InferredTime {
  Timestamp timestamp = 0;
  EnsembleSet ensemble;
  GridField mean, pm, det, obs;
};

std::vector<InferredTime> load_inferred(const fs::path& root, const EvalOptions& eval) {
  if (!fs::exists(root)) throw ConfigError("no inference output in " + root.string() + "; run infer first");
  std::vector<std::pair<long, fs::path>> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (!e.is_directory()) continue;
    const auto name = e.path().filename().string();
    if (!name.empty() && std::all_of(name.begin(), name.end(), ::isdigit)) dirs.emplace_back(std::stol(name), e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  auto cut = [&](GridField f) { return eval.region ? crop_region(f, *eval.region) : f; };
  std::vector<InferredTime> out;
  for (const auto& [idx, dir] : dirs) {
    InferredTime it;
    it.obs = cut(read_gridpack(dir / "obs.gp"));
    it.timestamp = it.obs.timestamp();
    if (eval.period_start && it.timestamp < *eval.period_start) continue;
    if (eval.period_end && it.timestamp > *eval.period_end) continue;
    for (std::size_t i = 0;; ++i) {
      const auto path = dir / (member_name(i) + ".gp");
      if (!fs::exists(path)) break;
      it.ensemble.members.push_back(cut(read_gridpack(path)));
      it.ensemble.seeds.push_back(i);
    }
    it.ensemble.timestamp = it.timestamp;
    it.ensemble.validate(2);
    it.mean = cut(read_gridpack(dir / "mean.gp"));
    it.pm = cut(read_gridpack(dir / "pm.gp"));
    it.det = cut(read_gridpack(dir / "det.gp"));
    out.push_back(std::move(it));
  }
  if (out.empty()) throw ValidationError("no inferred times inside the requested period");
  return out;
}

std::string product_name(std::size_t m, std::size_t members) {
  if (m < members) return std::to_string(m);
  return m == members ? "mean" : m == members + 1 ? "pm" : "det";
}

void emit_scores(std::ostream& csv, const std::string& threshold, const std::string& lead, const std::string& member,
                 const ContingencyTable& table) {
  const auto s = csi_pod_far(table);
  csv << "csi," << threshold << ',' << lead << ',' << member << ',' << format_optional(s.csi) << '\n';
  csv << "pod," << threshold << ',' << lead << ',' << member << ',' << format_optional(s.pod) << '\n';
  csv << "far," << threshold << ',' << lead << ',' << member << ',' << format_optional(s.far) << '\n';
}

}  // namespace

Artifacts stage_evaluate(const Profile& p, const fs::path& workdir, const EvalOptions& eval, const StageOptions& opt,
                         const std::optional<fs::path>& infer_dir) {
  return tagged("evaluate", [&] {
    for (const auto& m : eval.metrics) {
      if (m != "csi" && m != "rank" && m != "cdf") throw ValidationError("unknown metric: " + m);
    }
    const auto times = load_inferred(infer_dir.value_or(workdir / kInferDir), eval);
    const auto thresholds = eval.thresholds.empty() ? p.thresholds : eval.thresholds;
    const auto t0 = times.front().timestamp;
    const auto members = times.front().ensemble.size();

    std::ostringstream csv;
    csv << "metric,threshold,lead_time,member,value\n";
    if (eval.metrics.count("csi")) {
      for (double thr : thresholds) {
        const auto th = format_value(thr);
        std::vector<ContingencyTable> total(members + 3);
        for (const auto& it : times) {
          const auto lead = std::to_string((it.timestamp - t0) / 3600);
          for (std::size_t m = 0; m < members + 3; ++m) {
            const GridField& f = m < members         ? it.ensemble.members[m]
                                 : m == members     ? it.mean
                                 : m == members + 1 ? it.pm
                                                    : it.det;
            const auto table = contingency(f, it.obs, thr);
            total[m] += table;
            emit_scores(csv, th, lead, product_name(m, members), table);
          }
        }
        for (std::size_t m = 0; m < members + 3; ++m) emit_scores(csv, th, "all", product_name(m, members), total[m]);
      }
    }
    if (eval.metrics.count("rank")) {
      std::vector<EnsembleSet> ens;
      std::vector<GridField> obs;
      for (const auto& it : times) {
        ens.push_back(it.ensemble);
        obs.push_back(it.obs);
      }
      const auto hist = rank_histogram(ens, obs, nn::derive_seed(p.seed, 77));
      for (std::size_t b = 0; b < hist.counts.size(); ++b) {
        csv << "rank,nan,all," << b << ',' << hist.counts[b] << '\n';
      }
      csv << "rank_chi2,nan,all,all," << format_value(hist.chi_square()) << '\n';
      csv << "rank_p,nan,all,all," << format_value(hist.uniformity_p_value()) << '\n';
    }
    if (eval.metrics.count("cdf")) {
      std::map<std::string, std::vector<double>> pools;
      for (const auto& it : times) {
        for (const auto& m : it.ensemble.members) {
          pools["ensemble"].insert(pools["ensemble"].end(), m.values().begin(), m.values().end());
        }
        for (const auto& [name, f] : {std::pair<std::string, const GridField*>{"obs", &it.obs},
                                      {"mean", &it.mean}, {"pm", &it.pm}, {"det", &it.det}}) {
          pools[name].insert(pools[name].end(), f->values().begin(), f->values().end());
        }
      }
      for (const char* name : {"obs", "ensemble", "mean", "pm", "det"}) {
        const auto curve = cdf_curve(pools[name], p.cdf_edges);
        for (std::size_t k = 0; k < curve.edges.size(); ++k) {
          csv << "cdf," << format_value(curve.edges[k]) << ",all," << name << ',' << format_value(curve.frequency[k])
              << '\n';
        }
      }
    }
    const auto path = workdir / kEvalDir / "metrics.csv";
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << csv.str();
    log(opt, "evaluate: " + std::to_string(times.size()) + " times -> " + path.string());
    return Artifacts{"eval/metrics.csv"};
  });
}

Artifacts stage_ablation(const Profile& p, const fs::path& workdir, const StageOptions& opt) {
  return tagged("ablation", [&] {
    const auto ds = load_dataset(workdir / kDataDir);
    const auto prep = load_prepared(workdir);
    std::ostringstream csv;
    csv << "metric,threshold,lead_time,member,value\n";
    for (const auto& exp : det::kExperiments) {
      const auto cfg = det::apply_experiment(p.det, exp);
      std::vector<det::DetSample> train;
      for (auto t : prep.split.train) {
        if (t >= 1) train.push_back(det_sample(cfg, ds, prep, t, true));
      }
      log(opt, "ablation: " + exp);
      det::DetTrainer trainer(cfg, p.det_train);
      trainer.train(train, step_logger(opt, exp, p.det_train.steps));
      trainer.model()->eval();
      std::vector<GridField> forecasts;
      for (auto t : prep.split.test) {
        const auto norm =
            nn::from_tensor(det::det_predict(trainer.model(), det_sample(cfg, ds, prep, t, false)), prep.tp_coarse_norm[t]);
        forecasts.push_back(from_dbz(denormalize_dbz(norm, prep.stats.dbz_scale_coarse)));
      }
      for (double thr : p.thresholds) {
        ContingencyTable total;
        for (std::size_t k = 0; k < prep.split.test.size(); ++k) {
          total += contingency(forecasts[k], ds.tp_coarse[prep.split.test[k]], thr);
        }
        csv << "csi," << format_value(thr) << ",all," << exp << ',' << format_optional(csi_pod_far(total).csi) << '\n';
      }
    }
    const auto path = workdir / kEvalDir / "ablation.csv";
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << csv.str();
    return Artifacts{"eval/ablation.csv"};
  });
}

nlohmann::json run_pipeline(const Profile& p, const fs::path& workdir, const StageOptions& opt) {
  p.validate();
  fs::create_directories(workdir);
  nlohmann::json stages = nlohmann::json::array();
  auto record = [&](const std::string& name, const Artifacts& files) {
    nlohmann::json sums = nlohmann::json::object();
    for (const auto& f : files) sums[f] = sha256_file(workdir / f);
    stages.push_back({{"stage", name}, {"files", sums}});
  };
  record("synth-data", stage_synth(p, workdir, opt));
  record("preprocess", stage_preprocess(p, workdir, opt));
  record("train-det", stage_train_det(p, workdir, opt));
  record("train-vae", stage_train_vae(p, workdir, opt));
  record("train-diffusion", stage_train_diffusion(p, workdir, opt));
  record("infer", stage_infer(p, workdir, opt));
  record("evaluate", stage_evaluate(p, workdir, EvalOptions{}, opt));
  nlohmann::json manifest = {{"version", PRECIPDIFF_VERSION},
                             {"torch_version", TORCH_VERSION},
                             {"config", p.to_json()},
                             {"config_hash", config_hash(p)},
                             {"seed", p.seed},
                             {"stages", stages}};
  write_json(manifest, workdir / "manifest.json");
  return manifest;
}

namespace {

std::map<std::string, std::string> read_metric_rows(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::map<std::string, std::string> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cut = line.rfind(',');
    if (cut == std::string::npos) throw ValidationError("malformed CSV row in " + path.string());
    rows[line.substr(0, cut)] = line.substr(cut + 1);
  }
  return rows;
}

}  // namespace

double compare_metric_csv(const fs::path& a, const fs::path& b) {
  const auto ra = read_metric_rows(a);
  const auto rb = read_metric_rows(b);
  if (ra.size() != rb.size()) throw ValidationError("metric CSVs have different row counts");
  double worst = 0.0;
  for (const auto& [key, va] : ra) {
    const auto it = rb.find(key);
    if (it == rb.end()) throw ValidationError("row missing from second CSV: " + key);
    if (va == it->second) continue;
    const double x = std::strtod(va.c_str(), nullptr);
    const double y = std::strtod(it->second.c_str(), nullptr);
    if (std::isnan(x) || std::isnan(y)) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, std::abs(x - y));
  }
  return worst;
}

double replay_manifest(const fs::path& manifest, const fs::path& workdir, const StageOptions& opt) {
  const auto m = read_json(manifest);
  const auto p = profile_from_json(m.at("config"));
  if (config_hash(p) != m.at("config_hash").get<std::string>()) {
    throw ConfigError("manifest config does not reproduce its hash");
  }
  run_pipeline(p, workdir, opt);
  return compare_metric_csv(manifest.parent_path() / kEvalDir / "metrics.csv", workdir / kEvalDir / "metrics.csv");
}

}  // namespace precipdiff::pipeline

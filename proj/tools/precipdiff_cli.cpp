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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <torch/torch.h>

#include "precipdiff/errors.hpp"
#include "precipdiff/inference.hpp"
#include "precipdiff/io.hpp"
#include "precipdiff/nn.hpp"
#include "precipdiff/pipeline.hpp"
#include "precipdiff/profile.hpp"

namespace fs = std::filesystem;
using namespace precipdiff;

namespace {

struct Common {
  std::string workdir;
  std::string config_file;
  std::string profile;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_seed = true) {
  cmd->add_option("-w,--workdir", c.workdir, "Work directory (default: $PRECIPDIFF_CACHE/runs/<profile>-seed<seed>)");
  cmd->add_option("-c,--config", c.config_file, "JSON configuration file, merged over the profile");
  cmd->add_option("-p,--profile", c.profile, "Profile name: desk or paper");
  if (with_seed) cmd->add_option("-s,--seed", c.seed, "Base seed");
  cmd->add_option("--set", c.overrides, "Override a config value, e.g. --set det_train.steps=50");
  cmd->add_flag("-q,--quiet", c.quiet, "Suppress progress output");
}

nlohmann::json flag_patch(const Common& c) {
  nlohmann::json doc = nlohmann::json::object();
  if (!c.config_file.empty()) {
    std::ifstream in(c.config_file);
    if (!in) throw IoError("cannot read " + c.config_file);
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(c.config_file + ": " + e.what());
    }
  }
  if (!c.profile.empty()) doc["name"] = c.profile;
  if (c.seed) doc["seed"] = *c.seed;
  return doc;
}

struct Resolved {
  Profile profile;
  fs::path workdir;
};

/// `fresh` stages build the config from flags; later stages start from the
/// config stored in the work directory.
Resolved resolve(const Common& c, bool fresh) {
  auto patch = flag_patch(c);
  nlohmann::json base = profile_from_json(patch).to_json();
  fs::path workdir = c.workdir.empty() ? pipeline::default_workdir(profile_from_json(patch)) : fs::path(c.workdir);
  if (!fresh && fs::exists(workdir / "config.json")) {
    base = pipeline::load_profile(workdir).to_json();
    if (patch.contains("name") && patch["name"] != base["name"]) {
      throw ConfigError("work directory holds profile '" + base["name"].get<std::string>() + "'");
    }
    base.merge_patch(patch);
  } else {
    base = make_profile(base["name"].get<std::string>()).to_json();
    base.merge_patch(patch);
  }
  apply_overrides(base, c.overrides);
  return {profile_from_json(base), workdir};
}

pipeline::StageOptions stage_options(const Common& c) {
  pipeline::StageOptions o;
  o.verbose = !c.quiet;
  return o;
}

LatLonBounds parse_region(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(std::stod(item));
  if (v.size() != 4) throw ValidationError("--region expects lat_min,lat_max,lon_min,lon_max");
  return {v[0], v[1], v[2], v[3]};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"precipdiff: latent diffusion downscaling of precipitation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", PRECIPDIFF_VERSION);

  Common common;

  auto* synth = app.add_subcommand("synth-data", "Generate the synthetic coarse/fine dataset");
  add_common(synth, common);
  auto* prep = app.add_subcommand("preprocess", "Fit normalization stats, split, and build residual fields");
  add_common(prep, common);

  auto* tdet = app.add_subcommand("train-det", "Train the deterministic (mean) model");
  add_common(tdet, common);
  std::string experiment, det_out;
  tdet->add_option("-e,--exp", experiment, "Ablation configuration: baseline, d1, d2, d3, d4");
  tdet->add_option("-o,--out", det_out, "Checkpoint path (default: <workdir>/models/det.ckpt)");

  auto* tvae = app.add_subcommand("train-vae", "Train the residual autoencoder");
  add_common(tvae, common);
  auto* tdiff = app.add_subcommand("train-diffusion", "Train the latent diffusion model");
  add_common(tdiff, common);

  auto* sample = app.add_subcommand("sample", "Draw residual samples for one time from the trained models");
  add_common(sample, common, false);
  int sample_members = inference::kDefaultMembers;
  std::int64_t sample_steps = inference::kDefaultDdimSteps;
  std::uint64_t sample_seed = 0;
  std::size_t sample_time = 0;
  std::string sample_out;
  sample->add_option("-n,--members", sample_members, "Number of samples")->check(CLI::PositiveNumber);
  sample->add_option("--steps", sample_steps, "DDIM steps")->check(CLI::PositiveNumber);
  sample->add_option("-s,--seed", sample_seed, "Seed of the first sample; sample i uses seed + i");
  sample->add_option("-t,--time", sample_time, "Time index (default: first test time)");
  sample->add_option("-o,--out", sample_out, "Output directory")->required();

  auto* infer = app.add_subcommand("infer", "Generate ensembles, mean and PM products for the test period");
  add_common(infer, common);
  std::optional<int> infer_members;
  std::optional<std::int64_t> infer_steps;
  std::string infer_out;
  infer->add_option("-n,--members", infer_members, "Ensemble size")->check(CLI::PositiveNumber);
  infer->add_option("--steps", infer_steps, "DDIM steps")->check(CLI::PositiveNumber);
  infer->add_option("-o,--out", infer_out, "Output directory (default: <workdir>/infer)");

  auto* pm = app.add_subcommand("pm", "Recompute mean.gp and pm.gp from member_XX.gp files");
  std::string pm_dir;
  pm->add_option("dir", pm_dir, "Directory holding member_XX.gp")->required()->check(CLI::ExistingDirectory);

  auto* eval = app.add_subcommand("evaluate", "Score inferred ensembles into eval/metrics.csv");
  add_common(eval, common);
  std::vector<std::string> metrics;
  std::vector<double> thresholds;
  std::string region, period_start, period_end, eval_infer;
  eval->add_option("-m,--metric", metrics, "csi, rank or cdf (repeatable; default all)")
      ->check(CLI::IsMember({"csi", "rank", "cdf"}));
  eval->add_option("-t,--threshold", thresholds, "Threshold in mm (repeatable; default profile set)");
  eval->add_option("--region", region, "lat_min,lat_max,lon_min,lon_max");
  eval->add_option("--from", period_start, "First valid time, ISO 8601");
  eval->add_option("--to", period_end, "Last valid time, ISO 8601");
  eval->add_option("--infer-dir", eval_infer, "Inference output (default: <workdir>/infer)");

  auto* ablation = app.add_subcommand("ablation", "Train every deterministic configuration and score CSI");
  add_common(ablation, common);

  auto* pipe = app.add_subcommand("pipeline", "Run synth-data through evaluate and write manifest.json");
  add_common(pipe, common);
  std::string replay;
  pipe->add_option("--replay", replay, "Re-run from a manifest and compare metric CSVs")->check(CLI::ExistingFile);
  double replay_tol = 1e-6;
  pipe->add_option("--tolerance", replay_tol, "Replay tolerance on metric values");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ExitCode::kValidation);
  }

  try {
    const auto opt = stage_options(common);
    if (*synth) {
      auto r = resolve(common, true);
      pipeline::stage_synth(r.profile, r.workdir, opt);
      std::cout << r.workdir.string() << '\n';
    } else if (*prep) {
      auto r = resolve(common, false);
      pipeline::stage_preprocess(r.profile, r.workdir, opt);
    } else if (*tdet) {
      auto r = resolve(common, false);
      if (!experiment.empty()) r.profile.experiment = det::canonical_experiment(experiment);
      pipeline::stage_train_det(r.profile, r.workdir, opt,
                                det_out.empty() ? std::nullopt : std::optional<fs::path>(det_out));
    } else if (*tvae) {
      auto r = resolve(common, false);
      pipeline::stage_train_vae(r.profile, r.workdir, opt);
    } else if (*tdiff) {
      auto r = resolve(common, false);
      pipeline::stage_train_diffusion(r.profile, r.workdir, opt);
    } else if (*sample) {
      auto r = resolve(common, false);
      const auto ds = pipeline::load_dataset(r.workdir / "data");
      const auto prepd = pipeline::load_prepared(r.workdir);
      const auto t = sample->count("--time") ? sample_time : prepd.split.test.front();
      if (t >= ds.states.size()) throw ValidationError("--time out of range");
      auto vae = vae::load_vae(read_checkpoint(r.workdir / "models" / "vae.ckpt"));
      auto diff = diffusion::load_diffusion(read_checkpoint(r.workdir / "models" / "diffusion.ckpt"));
      const auto cond = pipeline::build_condition(ds.states[t], prepd.tp_coarse_norm[t], prepd.stats,
                                                  r.profile.cond_window);
      const auto res = inference::sample_residuals(vae, diff, cond, {sample_members, sample_seed, sample_steps});
      GridField like(ds.fine_grid, UnitTag::kNorm, "TP_residual");
      like.set_timestamp(ds.states[t].timestamp);
      fs::create_directories(sample_out);
      for (int i = 0; i < sample_members; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "residual_%02d.gp", i);
        write_gridpack(nn::from_tensor(res[i], like), fs::path(sample_out) / name);
      }
    } else if (*infer) {
      auto r = resolve(common, false);
      if (infer_members) r.profile.members = *infer_members;
      if (infer_steps) r.profile.ddim_steps = *infer_steps;
      r.profile.validate();
      pipeline::stage_infer(r.profile, r.workdir, opt,
                            infer_out.empty() ? std::nullopt : std::optional<fs::path>(infer_out));
    } else if (*pm) {
      pipeline::postprocess_members(pm_dir);
    } else if (*eval) {
      auto r = resolve(common, false);
      pipeline::EvalOptions eo;
      if (!metrics.empty()) eo.metrics = {metrics.begin(), metrics.end()};
      eo.thresholds = thresholds;
      if (!region.empty()) eo.region = parse_region(region);
      if (!period_start.empty()) eo.period_start = parse_timestamp(period_start);
      if (!period_end.empty()) eo.period_end = parse_timestamp(period_end);
      pipeline::stage_evaluate(r.profile, r.workdir, eo, opt,
                               eval_infer.empty() ? std::nullopt : std::optional<fs::path>(eval_infer));
      std::cout << (r.workdir / "eval" / "metrics.csv").string() << '\n';
    } else if (*ablation) {
      auto r = resolve(common, false);
      pipeline::stage_ablation(r.profile, r.workdir, opt);
      std::cout << (r.workdir / "eval" / "ablation.csv").string() << '\n';
    } else if (*pipe) {
      if (!replay.empty()) {
        if (common.workdir.empty()) throw ConfigError("--replay needs --workdir for the new run");
        const double diff = pipeline::replay_manifest(replay, common.workdir, opt);
        std::cout << "max metric difference " << diff << '\n';
        if (!(diff <= replay_tol)) {
          std::cerr << "replay differs by more than " << replay_tol << '\n';
          return static_cast<int>(ExitCode::kNumeric);
        }
      } else {
        auto r = resolve(common, true);
        pipeline::run_pipeline(r.profile, r.workdir, opt);
        std::cout << (r.workdir / "manifest.json").string() << '\n';
      }
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kValidation);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kNumeric);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kFailure);
  }
  return static_cast<int>(ExitCode::kOk);
}

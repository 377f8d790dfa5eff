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
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "precipdiff/det_train.hpp"
#include "precipdiff/profile.hpp"
#include "precipdiff/synth.hpp"

namespace precipdiff::pipeline {

namespace fs = std::filesystem;

/// Cache root: $PRECIPDIFF_CACHE, else $XDG_CACHE_HOME/precipdiff, else
/// ~/.cache/precipdiff.
fs::path cache_dir();
/// Default work directory for a profile, under the cache root.
fs::path default_workdir(const Profile& p);

// Work-directory persistence ------------------------------------------------

void save_profile(const Profile& p, const fs::path& workdir);
/// Reads workdir/config.json; ConfigError when absent.
Profile load_profile(const fs::path& workdir);

/// Stacks equally shaped fields along a new leading "time" dimension.
GridField stack_time(const std::vector<GridField>& series);
std::vector<GridField> unstack_time(const GridField& stacked, const std::vector<Timestamp>& times);

void save_dataset(const SynthDataset& ds, const fs::path& dir);
SynthDataset load_dataset(const fs::path& dir);

nlohmann::json to_json(const NormalizationStats& s);
NormalizationStats stats_from_json(const nlohmann::json& j);

/// Per-variable moments over the given states (surface variables one pair,
/// upper-air variables one pair per level) and the two dBZ scales.
NormalizationStats fit_stats(const SynthDataset& ds, const std::vector<std::size_t>& times);

struct Split {
  std::vector<std::size_t> train;  ///< time indices
  std::vector<std::size_t> test;
};
Split make_split(std::size_t timesteps, double train_fraction);

struct Prepared {
  NormalizationStats stats;
  Split split;
  std::vector<GridField> tp_coarse_norm;  ///< full coarse grid
  std::vector<GridField> tp_fine_norm;
  std::vector<GridField> residual;        ///< fine grid
};
Prepared load_prepared(const fs::path& workdir);

/// Diffusion condition [5 + 5 L, rows, cols]: standardized surface
/// variables, the normalized precipitation field, then the upper-air
/// variables level by level, all cropped to `window`.
torch::Tensor build_condition(const AtmosphericState& state, const GridField& tp_coarse_norm,
                              const NormalizationStats& stats, const CropWindow& window);

/// Det sample for time index t (t >= 1), with target when available.
det::DetSample det_sample(const det::DetModelConfig& cfg, const SynthDataset& ds, const Prepared& prep,
                          std::size_t t, bool with_target);

// Stages ----------------------------------------------------------------------

/// Paths written by a stage, relative to the work directory.
using Artifacts = std::vector<std::string>;

struct StageOptions {
  bool verbose = true;
  std::int64_t log_every = 100;
};

Artifacts stage_synth(const Profile& p, const fs::path& workdir, const StageOptions& opt = {});
Artifacts stage_preprocess(const Profile& p, const fs::path& workdir, const StageOptions& opt = {});
/// `out` overrides the default models/det.ckpt location.
Artifacts stage_train_det(const Profile& p, const fs::path& workdir, const StageOptions& opt = {},
                          const std::optional<fs::path>& out = std::nullopt);
Artifacts stage_train_vae(const Profile& p, const fs::path& workdir, const StageOptions& opt = {});
Artifacts stage_train_diffusion(const Profile& p, const fs::path& workdir, const StageOptions& opt = {});

/// Writes infer/<time index>/{member_XX,mean,pm,det,obs}.gp for every test
/// time. `out` overrides the infer/ directory.
Artifacts stage_infer(const Profile& p, const fs::path& workdir, const StageOptions& opt = {},
                      const std::optional<fs::path>& out = std::nullopt);

/// Recomputes mean.gp and pm.gp from the member_XX.gp files in `dir`.
void postprocess_members(const fs::path& dir);

struct EvalOptions {
  std::set<std::string> metrics{"csi", "rank", "cdf"};
  std::vector<double> thresholds;  ///< empty: profile thresholds
  std::optional<LatLonBounds> region;
  std::optional<Timestamp> period_start;
  std::optional<Timestamp> period_end;
};

/// Reads infer/ and writes eval/metrics.csv with columns
/// metric,threshold,lead_time,member,value.
Artifacts stage_evaluate(const Profile& p, const fs::path& workdir, const EvalOptions& eval = {},
                         const StageOptions& opt = {}, const std::optional<fs::path>& infer_dir = std::nullopt);

/// Trains the deterministic model once per experiment and writes
/// eval/ablation.csv with one CSI row per experiment and threshold.
Artifacts stage_ablation(const Profile& p, const fs::path& workdir, const StageOptions& opt = {});

/// synth-data through evaluate, then manifest.json.
nlohmann::json run_pipeline(const Profile& p, const fs::path& workdir, const StageOptions& opt = {});

/// Largest absolute difference between the value columns of two metric
/// CSVs. Throws ValidationError when the row keys differ.
double compare_metric_csv(const fs::path& a, const fs::path& b);

/// Runs the pipeline from a manifest into `workdir` and returns the largest
/// metric difference against the CSV next to the manifest.
double replay_manifest(const fs::path& manifest, const fs::path& workdir, const StageOptions& opt = {});

}  // namespace precipdiff::pipeline

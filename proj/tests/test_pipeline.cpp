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

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "precipdiff/errors.hpp"
#include "precipdiff/io.hpp"
#include "precipdiff/pipeline.hpp"
#include "precipdiff/profile.hpp"

namespace fs = std::filesystem;
using namespace precipdiff;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("precipdiff_test_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

Profile tiny_profile() {
  auto doc = make_profile("desk").to_json();
  apply_overrides(doc, {"det_train.steps=6", "vae_train.steps=6", "diffusion_train.steps=6", "ddim_steps=5",
                        "members=3", "synth.timesteps=12"});
  return profile_from_json(doc);
}

pipeline::StageOptions quiet() {
  pipeline::StageOptions o;
  o.verbose = false;
  return o;
}

}  // namespace

// Profile -----------------------------------------------------------------------

TEST(Profile, DeskDerivedExtents) {
  const auto p = make_profile("desk");
  EXPECT_EQ(p.fine_grid().nlat, 100);
  EXPECT_EQ(p.fine_grid().nlon, 140);
  EXPECT_EQ(p.vae.latent_height, 10);
  EXPECT_EQ(p.vae.latent_width, 14);
  EXPECT_EQ(p.dit.cond_channels(), 5 + 5 * 5);
  EXPECT_EQ(p.dit.cond_height, 20);
  EXPECT_EQ(p.det.height, 25);
  EXPECT_EQ(p.members, 11);
  EXPECT_EQ(p.ddim_steps, 300);
  EXPECT_NO_THROW(p.validate());
}

TEST(Profile, PaperDerivedExtents) {
  const auto p = make_profile("paper");
  EXPECT_EQ(p.det.height, 241);
  EXPECT_EQ(p.det.width, 281);
  EXPECT_EQ(p.det.levels, 13);
  EXPECT_EQ(p.fine_grid().nlat, 900);
  EXPECT_EQ(p.fine_grid().nlon, 1400);
  EXPECT_EQ(p.vae.latent_height, 90);
  EXPECT_EQ(p.vae.latent_width, 140);
  EXPECT_EQ(p.dit.cond_height, 181);
  EXPECT_EQ(p.dit.cond_width, 241);
  EXPECT_NO_THROW(p.validate());
}

TEST(Profile, JsonRoundTripIsStable) {
  for (const char* name : {"desk", "paper"}) {
    const auto p = make_profile(name);
    const auto q = profile_from_json(p.to_json());
    EXPECT_EQ(p.to_json(), q.to_json()) << name;
    EXPECT_EQ(config_hash(p), config_hash(q));
  }
}

TEST(Profile, OverridesParseJsonOrString) {
  auto doc = make_profile("desk").to_json();
  apply_overrides(doc, {"det_train.steps=7", "experiment=d2", "thresholds=[1,2]"});
  const auto p = profile_from_json(doc);
  EXPECT_EQ(p.det_train.steps, 7);
  EXPECT_EQ(p.experiment, "d2");
  EXPECT_EQ(p.thresholds, (std::vector<double>{1, 2}));
  EXPECT_THROW(apply_overrides(doc, {"novalue"}), ConfigError);
}

TEST(Profile, GridOverrideKeepsNetworksConsistent) {
  auto doc = make_profile("desk").to_json();
  apply_overrides(doc, {"synth.refinement=4"});
  const auto p = profile_from_json(doc);
  EXPECT_EQ(p.vae.height, 80);
  EXPECT_EQ(p.vae.width, 112);
  EXPECT_EQ(p.vae.latent_height, 8);
  EXPECT_EQ(p.dit.latent_width, p.vae.latent_width);
}

TEST(Profile, InvalidConfigurationsRejected) {
  EXPECT_THROW(make_profile("laptop"), ConfigError);
  auto bad_region = make_profile("desk").to_json();
  apply_overrides(bad_region, {"synth.region.rows=40"});
  EXPECT_THROW(profile_from_json(bad_region), ValidationError);
  auto bad_steps = make_profile("desk").to_json();
  apply_overrides(bad_steps, {"ddim_steps=5000"});
  EXPECT_THROW(profile_from_json(bad_steps), ConfigError);
  auto bad_type = make_profile("desk").to_json();
  apply_overrides(bad_type, {"members=\"many\""});
  EXPECT_THROW(profile_from_json(bad_type), ConfigError);
}

TEST(Profile, HashTracksSeed) {
  auto a = make_profile("desk");
  auto b = a;
  b.seed = 8;
  b.finalize();
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_NE(a.det_train.seed, b.det_train.seed);
}

// Persistence -------------------------------------------------------------------

TEST(Persistence, StackRoundTrip) {
  std::vector<GridField> series;
  std::vector<Timestamp> times;
  for (int t = 0; t < 3; ++t) {
    GridField f(GridSpec{0, 0, 1, 1, 2, 3}, UnitTag::kRaw, "Z", {2}, {"level"});
    for (std::size_t k = 0; k < f.size(); ++k) f.values()[k] = t * 100 + static_cast<double>(k);
    f.set_timestamp(3600 * t);
    series.push_back(f);
    times.push_back(3600 * t);
  }
  const auto stacked = pipeline::stack_time(series);
  EXPECT_EQ(stacked.shape(), (std::vector<std::int64_t>{3, 2, 2, 3}));
  EXPECT_EQ(stacked.dim_names().front(), "time");
  const auto back = pipeline::unstack_time(stacked, times);
  ASSERT_EQ(back.size(), 3u);
  for (int t = 0; t < 3; ++t) {
    EXPECT_EQ(back[t].storage(), series[t].storage());
    EXPECT_EQ(back[t].shape(), series[t].shape());
    EXPECT_EQ(back[t].timestamp(), series[t].timestamp());
  }
  EXPECT_THROW(pipeline::unstack_time(stacked, {0, 1}), ValidationError);
}

TEST(Persistence, DatasetRoundTrip) {
  SynthConfig cfg;
  cfg.timesteps = 4;
  const auto ds = synth_generate(3, cfg);
  const auto dir = scratch("dataset");
  pipeline::save_dataset(ds, dir);
  const auto back = pipeline::load_dataset(dir);
  ASSERT_EQ(back.states.size(), 4u);
  EXPECT_EQ(back.fine_grid, ds.fine_grid);
  EXPECT_EQ(back.config.region, ds.config.region);
  for (std::size_t t = 0; t < 4; ++t) {
    EXPECT_EQ(back.states[t].timestamp, ds.states[t].timestamp);
    EXPECT_EQ(back.states[t].upper[2].storage(), quantize_f32(ds.states[t].upper[2]).storage());
    EXPECT_EQ(back.tp_fine[t].storage(), quantize_f32(ds.tp_fine[t]).storage());
  }
  EXPECT_EQ(back.statics.soil_type.storage(), ds.statics.soil_type.storage());
}

TEST(Persistence, StatsJsonRoundTrip) {
  NormalizationStats s;
  s.variables["T2M"] = {{290.5}, {4.25}};
  s.variables["Z"] = {{1.0, 2.0}, {0.5, 0.25}};
  s.dbz_scale_coarse = 38.0;
  s.dbz_scale_fine = 47.5;
  const auto back = pipeline::stats_from_json(pipeline::to_json(s));
  EXPECT_EQ(back.variables.at("Z").std, s.variables.at("Z").std);
  EXPECT_EQ(back.dbz_scale_fine, 47.5);
  EXPECT_THROW(pipeline::stats_from_json(nlohmann::json{{"variables", {}}}), ConfigError);
}

// Preprocessing -----------------------------------------------------------------

TEST(Preprocess, SplitIsChronological) {
  const auto s = pipeline::make_split(48, 0.75);
  EXPECT_EQ(s.train.size(), 36u);
  EXPECT_EQ(s.test.size(), 12u);
  EXPECT_EQ(s.train.back() + 1, s.test.front());
  EXPECT_THROW(pipeline::make_split(3, 0.3), ConfigError);
}

TEST(Preprocess, FittedStatsStandardizeTrainingData) {
  SynthConfig cfg;
  cfg.timesteps = 8;
  const auto ds = synth_generate(5, cfg);
  std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5, 6, 7};
  const auto stats = pipeline::fit_stats(ds, idx);
  EXPECT_EQ(stats.variables.at("T2M").mean.size(), 1u);
  EXPECT_EQ(stats.variables.at("SH").mean.size(), cfg.pressure_levels_hpa.size());
  double sum = 0, sq = 0, n = 0;
  for (auto t : idx) {
    const auto z = standardize(ds.states[t].upper[1], stats);
    for (double v : z.slice(2)) {
      sum += v;
      sq += v * v;
      n += 1;
    }
  }
  EXPECT_NEAR(sum / n, 0.0, 1e-9);
  EXPECT_NEAR(sq / n, 1.0, 1e-9);
  EXPECT_GT(stats.dbz_scale_fine, stats.dbz_scale_coarse);
}

TEST(Preprocess, ConditionLayout) {
  const auto p = make_profile("desk");
  SynthConfig cfg = p.synth;
  cfg.timesteps = 2;
  const auto ds = synth_generate(5, cfg);
  const auto stats = pipeline::fit_stats(ds, {0, 1});
  const auto tp = normalize_dbz(to_dbz(ds.tp_coarse[1]), stats.dbz_scale_coarse);
  const auto c = pipeline::build_condition(ds.states[1], tp, stats, p.cond_window);
  EXPECT_EQ(c.sizes().vec(), (std::vector<std::int64_t>{p.dit.cond_channels(), 20, 28}));
  const auto w = p.cond_window;
  EXPECT_FLOAT_EQ(c[4][3][7].item<float>(), static_cast<float>(tp.at(w.row0 + 3, w.col0 + 7)));
  GridField wrong(GridSpec{0, 0, 1, 1, 3, 3}, UnitTag::kNorm, "TP");
  EXPECT_THROW(pipeline::build_condition(ds.states[1], wrong, stats, p.cond_window), ValidationError);
}

// Stages ------------------------------------------------------------------------

TEST(Stages, MissingInputsAreConfigErrors) {
  const auto dir = scratch("missing");
  const auto p = tiny_profile();
  EXPECT_THROW(pipeline::stage_preprocess(p, dir, quiet()), ConfigError);
  EXPECT_THROW(pipeline::load_profile(dir), ConfigError);
}

TEST(Stages, PostprocessIdenticalMembers) {
  const auto dir = scratch("pm");
  fs::create_directories(dir);
  GridField f(GridSpec{0, 0, 1, 1, 3, 4}, UnitTag::kMm, "TP");
  for (std::size_t k = 0; k < f.size(); ++k) f.values()[k] = 0.5 * static_cast<double>(k);
  for (int i = 0; i < 3; ++i) write_gridpack(f, dir / ("member_0" + std::to_string(i) + ".gp"));
  pipeline::postprocess_members(dir);
  EXPECT_EQ(read_gridpack(dir / "pm.gp").storage(), f.storage());
  EXPECT_EQ(read_gridpack(dir / "mean.gp").storage(), f.storage());
  EXPECT_THROW(pipeline::postprocess_members(scratch("pm_empty")), std::exception);
}

TEST(Stages, TinyPipelineIsReproducible) {
  const auto cache = scratch("cache");
  ::setenv("PRECIPDIFF_CACHE", cache.c_str(), 1);
  const auto p = tiny_profile();
  const auto a = scratch("run_a");
  const auto b = scratch("run_b");
  const auto manifest = pipeline::run_pipeline(p, a, quiet());
  pipeline::run_pipeline(p, b, quiet());

  EXPECT_EQ(manifest.at("config_hash"), config_hash(p));
  ASSERT_EQ(manifest.at("stages").size(), 7u);
  for (const auto& stage : manifest.at("stages")) {
    for (const auto& [file, sum] : stage.at("files").items()) EXPECT_EQ(sha256_file(a / file), sum) << file;
  }
  EXPECT_TRUE(fs::exists(cache / "synth"));
  EXPECT_EQ(pipeline::compare_metric_csv(a / "eval/metrics.csv", b / "eval/metrics.csv"), 0.0);
  EXPECT_EQ(sha256_file(a / "models/diffusion.ckpt"), sha256_file(b / "models/diffusion.ckpt"));

  std::ifstream in(a / "eval/metrics.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "metric,threshold,lead_time,member,value");
  std::int64_t rank_total = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("rank,", 0) == 0) rank_total += std::stoll(line.substr(line.rfind(',') + 1));
  }
  const auto split = pipeline::make_split(12, p.train_fraction);
  EXPECT_EQ(rank_total, static_cast<std::int64_t>(split.test.size()) * p.fine_grid().cells());
  EXPECT_TRUE(fs::exists(a / "infer" / std::to_string(split.test.front()) / "member_02.gp"));

  pipeline::EvalOptions eo;
  eo.metrics = {"csi"};
  eo.thresholds = {2.0};
  eo.period_start = read_gridpack(a / "infer" / std::to_string(split.test.back()) / "obs.gp").timestamp();
  pipeline::stage_evaluate(p, a, eo, quiet());
  std::ifstream sub(a / "eval/metrics.csv");
  std::int64_t rows = -1;
  while (std::getline(sub, line)) ++rows;
  EXPECT_EQ(rows, 2 * 3 * (3 + 3));  // (lead 0, all) x (csi, pod, far) x (members + mean, pm, det)

  eo.metrics = {"brier"};
  EXPECT_THROW(pipeline::stage_evaluate(p, a, eo, quiet()), ValidationError);
}

TEST(Stages, MetricCsvComparison) {
  const auto dir = scratch("csv");
  fs::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& body) {
    std::ofstream(dir / name) << "metric,threshold,lead_time,member,value\n" << body;
  };
  write("a.csv", "csi,1,0,0,0.5\ncsi,2,0,0,nan\n");
  write("b.csv", "csi,1,0,0,0.5000004\ncsi,2,0,0,nan\n");
  write("c.csv", "csi,1,0,1,0.5\ncsi,2,0,0,nan\n");
  EXPECT_NEAR(pipeline::compare_metric_csv(dir / "a.csv", dir / "b.csv"), 4e-7, 1e-12);
  EXPECT_THROW(pipeline::compare_metric_csv(dir / "a.csv", dir / "c.csv"), ValidationError);
}

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

#include <cmath>

#include "precipdiff/diffusion.hpp"
#include "precipdiff/errors.hpp"

using namespace precipdiff;
using namespace precipdiff::diffusion;

namespace {

std::vector<std::int64_t> dims(const torch::Tensor& t) { return t.sizes().vec(); }

DitConfig tiny_dit() {
  DitConfig c;
  c.hidden = 32;
  c.depth = 2;
  c.heads = 2;
  c.levels = 3;
  return c;
}

torch::Tensor random_cond(const DitConfig& c, std::int64_t batch) {
  return torch::randn({batch, c.cond_channels(), c.cond_height, c.cond_width});
}

// Elementwise two-component Gaussian mixture.
torch::Tensor mixture(std::int64_t n, at::Generator gen) {
  auto pick = torch::rand({n, 2, 4, 4}, gen) < 0.7;
  auto noise = torch::randn({n, 2, 4, 4}, gen) * 0.3;
  return torch::where(pick, torch::full_like(noise, 1.5), torch::full_like(noise, -1.0)) + noise;
}

}  // namespace

// Schedule ---------------------------------------------------------------------------

TEST(Schedule, FirstAlphaBar) {
  auto s = make_schedule(1000);
  EXPECT_DOUBLE_EQ(s.alpha_bar[1], 1.0 - 1e-4);
  EXPECT_NEAR(s.ab(1), 0.9999, 1e-15);
  EXPECT_DOUBLE_EQ(s.beta[1000], 0.02);
  EXPECT_DOUBLE_EQ(s.alpha_bar[0], 1.0);
}

TEST(Schedule, Identities) {
  for (auto kind : {ScheduleKind::kLinear, ScheduleKind::kCosine}) {
    auto s = make_schedule(1000, kind);
    for (std::size_t t = 1; t <= 1000; ++t) {
      EXPECT_GT(s.beta[t], 0.0);
      EXPECT_LT(s.beta[t], 1.0);
      EXPECT_DOUBLE_EQ(s.alpha_bar[t], s.alpha_bar[t - 1] * s.alpha[t]);
      EXPECT_LT(s.alpha_bar[t], s.alpha_bar[t - 1]);
    }
  }
}

TEST(Schedule, SingleStep) {
  auto s = make_schedule(1);
  ASSERT_EQ(s.alpha_bar.size(), 2U);
  EXPECT_DOUBLE_EQ(s.beta[1], 1e-4);
  EXPECT_DOUBLE_EQ(s.alpha_bar[1], 0.9999);
  EXPECT_EQ(ddim_timesteps(1, 1), (std::vector<std::int64_t>{1}));
}

TEST(Schedule, Invalid) {
  EXPECT_THROW(make_schedule(0), ValidationError);
  EXPECT_THROW(make_schedule(10, ScheduleKind::kLinear, 0.5, 0.1), ValidationError);
  EXPECT_THROW(make_schedule(10).ab(11), ValidationError);
}

TEST(Schedule, JsonRoundTrip) {
  auto s = make_schedule(50, ScheduleKind::kCosine);
  auto back = NoiseSchedule::from_json(s.to_json());
  EXPECT_EQ(back.alpha_bar, s.alpha_bar);
}

// Forward noising --------------------------------------------------------------------------

TEST(ForwardNoise, ZeroNoiseScalesLatent) {
  auto s = make_schedule(1000);
  auto z0 = torch::randn({3, 2, 4, 4}, torch::kFloat64);
  auto zt = forward_noise(z0, 400, torch::zeros_like(z0), s);
  EXPECT_TRUE(torch::allclose(zt, std::sqrt(s.alpha_bar[400]) * z0, 0.0, 1e-15));
  auto t = torch::tensor({0, 400, 1000}, torch::kLong);
  auto zb = forward_noise(z0, t, torch::zeros_like(z0), s);
  EXPECT_TRUE(torch::equal(zb[0], z0[0]));
  EXPECT_TRUE(torch::allclose(zb[1], zt[1], 0.0, 1e-15));
}

TEST(ForwardNoise, SmallTNearlyClean) {
  auto s = make_schedule(1000);
  auto z0 = torch::randn({1, 16, 10, 14}, torch::kFloat64);
  auto zt = forward_noise(z0, 1, torch::randn_like(z0), s);
  EXPECT_LT((zt - z0).abs().max().item<double>(), 0.06);
}

TEST(ForwardNoise, RejectsOutOfRange) {
  auto s = make_schedule(10);
  auto z0 = torch::zeros({2, 1, 2, 2});
  EXPECT_THROW(forward_noise(z0, torch::tensor({1, 11}, torch::kLong), z0, s), ValidationError);
  EXPECT_THROW(forward_noise(z0, -1, z0, s), ValidationError);
}

TEST(ForwardNoise, MonteCarloMoments) {
  // Each element gets n draws; (z_t - sqrt(ab) z0) / sqrt(1 - ab) is pooled
  // over elements and must look standard normal.
  auto s = make_schedule(1000);
  const std::int64_t n = 10000;
  auto z0 = torch::tensor({-1.5, 0.0, 0.7, 2.0}, torch::kFloat64);
  auto gen = nn::make_generator(123);
  for (std::int64_t t : {1, 250, 700, 1000}) {
    auto eps = torch::randn({n, 4}, gen, torch::kFloat64);
    auto zt = forward_noise(z0.expand({n, 4}).contiguous(), t, eps, s);
    const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
    auto u = ((zt - std::sqrt(ab) * z0) / std::sqrt(1.0 - ab)).flatten();
    const double m = static_cast<double>(u.numel());
    EXPECT_NEAR(u.mean().item<double>(), 0.0, 3.0 / std::sqrt(m)) << t;
    EXPECT_NEAR(u.var().item<double>(), 1.0, 3.0 * std::sqrt(2.0 / (m - 1))) << t;
  }
}

// DDIM ------------------------------------------------------------------------------------

TEST(Ddim, ExactNoiseRecoversLatent) {
  auto s = make_schedule(1000);
  auto z0 = torch::randn({2, 4, 3, 3}, torch::kFloat64);
  auto eps = torch::randn_like(z0);
  for (std::int64_t t : {1, 300, 1000}) {
    auto zt = forward_noise(z0, t, eps, s);
    EXPECT_TRUE(torch::allclose(ddim_step(zt, eps, t, 0, s), z0, 0.0, 1e-9)) << t;
  }
}

TEST(Ddim, SameTimestepIsIdentity) {
  auto s = make_schedule(100);
  auto z = torch::randn({2, 3});
  EXPECT_TRUE(torch::equal(ddim_step(z, torch::randn_like(z), 40, 40, s), z));
  EXPECT_THROW(ddim_step(z, z, 40, 41, s), ValidationError);
}

TEST(Ddim, OneVersusTwoStepsWithLinearOracle) {
  auto s = make_schedule(1000);
  auto target = torch::randn({1, 4, 5, 5}, torch::kFloat64);
  Denoiser oracle = [&](const torch::Tensor& z, std::int64_t t) {
    const double ab = s.ab(t);
    return (z - std::sqrt(ab) * target) / std::sqrt(1.0 - ab);
  };
  auto noise = torch::randn_like(target);
  auto one = ddim_sample(oracle, noise, s, 1);
  auto two = ddim_sample(oracle, noise, s, 2);
  EXPECT_LT((one - two).abs().max().item<double>(), 1e-6);
  EXPECT_LT((two - target).abs().max().item<double>(), 1e-6);
}

TEST(Ddim, TimestepSubsequence) {
  auto ts = ddim_timesteps(1000, 300);
  ASSERT_EQ(ts.size(), 300U);
  EXPECT_EQ(ts.front(), 1);
  EXPECT_LE(ts.back(), 1000);
  for (std::size_t i = 1; i < ts.size(); ++i) EXPECT_GT(ts[i], ts[i - 1]);
  auto all = ddim_timesteps(10, 10);
  EXPECT_EQ(all, (std::vector<std::int64_t>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}));
  EXPECT_THROW(ddim_timesteps(10, 11), ValidationError);
  EXPECT_THROW(ddim_timesteps(10, 0), ValidationError);
}

// Denoiser -----------------------------------------------------------------------------------

TEST(Dit, DeskShapesAndZeroInit) {
  auto c = tiny_dit();
  torch::manual_seed(1);
  Dit m(c);
  torch::NoGradGuard g;
  auto z = torch::randn({3, 16, 10, 14});
  auto t = torch::tensor({1, 500, 1000}, torch::kLong);
  auto out = m(z, t, random_cond(c, 3));
  EXPECT_EQ(dims(out), (std::vector<std::int64_t>{3, 16, 10, 14}));
  EXPECT_EQ(out.abs().max().item<double>(), 0.0);
  EXPECT_EQ(dims(m->embed_condition(random_cond(c, 1))), (std::vector<std::int64_t>{1, 35, 32}));
}

TEST(Dit, PaperShapes) {
  DitConfig c;
  c.latent_height = 90;
  c.latent_width = 140;
  c.levels = 13;
  c.cond_height = 181;
  c.cond_width = 241;
  c.hidden = 32;
  c.depth = 1;
  c.heads = 2;
  EXPECT_EQ(c.cond_token_height(), 46);
  EXPECT_EQ(c.cond_token_width(), 61);
  EXPECT_EQ(c.token_height(), 45);
  EXPECT_EQ(c.token_width(), 70);
  torch::manual_seed(1);
  Dit m(c);
  torch::NoGradGuard g;
  auto cond = random_cond(c, 1);
  EXPECT_EQ(dims(m->embed_condition(cond)), (std::vector<std::int64_t>{1, 45 * 70, 32}));
  auto out = m(torch::randn({1, 16, 90, 140}), torch::tensor({10}, torch::kLong), cond);
  EXPECT_EQ(dims(out), (std::vector<std::int64_t>{1, 16, 90, 140}));
}

TEST(Dit, DeterministicAfterPerturbation) {
  auto c = tiny_dit();
  torch::manual_seed(2);
  Dit m(c);
  {
    torch::NoGradGuard g;
    for (auto& p : m->parameters()) p.add_(torch::randn_like(p) * 0.05);
  }
  torch::NoGradGuard g;
  auto z = torch::randn({2, 16, 10, 14});
  auto t = torch::tensor({3, 900}, torch::kLong);
  auto cond = random_cond(c, 2);
  auto a = m(z, t, cond);
  auto b = m(z, t, cond);
  EXPECT_GT(a.abs().max().item<double>(), 0.0);
  EXPECT_LT((a - b).abs().max().item<double>(), 1e-6);
  m->zero_output_head();
  EXPECT_EQ(m(z, t, cond).abs().max().item<double>(), 0.0);
}

TEST(Dit, RejectsMismatchedCondition) {
  auto c = tiny_dit();
  Dit m(c);
  auto z = torch::randn({1, 16, 10, 14});
  auto t = torch::tensor({5}, torch::kLong);
  EXPECT_THROW(m(z, t, torch::randn({1, c.cond_channels(), 21, 28})), ValidationError);
  EXPECT_THROW(m(torch::randn({1, 16, 10, 12}), t, random_cond(c, 1)), ValidationError);
}

TEST(Dit, PositionTable) {
  auto p = sincos_position_table(3, 4, 8);
  EXPECT_EQ(dims(p), (std::vector<std::int64_t>{12, 8}));
  // Token (0, 0): sin terms 0, cos terms 1.
  EXPECT_FLOAT_EQ(p[0][0].item<float>(), 0.0F);
  EXPECT_FLOAT_EQ(p[0][2].item<float>(), 1.0F);
  // Token (1, 2): row features at position 1, column features at position 2.
  EXPECT_NEAR(p[6][0].item<float>(), std::sin(1.0), 1e-6);
  EXPECT_NEAR(p[6][4].item<float>(), std::sin(2.0), 1e-6);
}

// Loss and training --------------------------------------------------------------------------

TEST(DiffusionLoss, UntrainedNearOne) {
  auto c = tiny_dit();
  torch::manual_seed(3);
  Dit m(c);
  auto s = make_schedule(1000);
  auto z0 = torch::randn({8, 16, 10, 14});
  torch::NoGradGuard g;
  const double loss = diffusion_loss(m, z0, random_cond(c, 8), s, nn::make_generator(4)).item<double>();
  EXPECT_GE(loss, 0.8);
  EXPECT_LE(loss, 1.3);
}

TEST(DiffusionTrain, LossDecreasesOnOverfitSet) {
  auto c = tiny_dit();
  torch::manual_seed(5);
  std::vector<DiffusionSample> data;
  for (int i = 0; i < 4; ++i) data.push_back({torch::randn({16, 10, 14}) * 0.5, torch::randn({c.cond_channels(), 20, 28})});
  DiffusionTrainConfig tc;
  tc.steps = 10;
  tc.batch_size = 4;
  tc.optim.lr = 1e-3;
  tc.optim.cosine = false;
  DiffusionTrainer tr(c, tc);
  auto eval = [&] {
    torch::NoGradGuard g;
    std::vector<torch::Tensor> z, k;
    for (const auto& d : data) {
      z.push_back(d.latent);
      k.push_back(d.cond);
    }
    double total = 0;
    for (std::uint64_t r = 0; r < 8; ++r) {
      total += diffusion_loss(tr.model(), torch::stack(z), torch::stack(k), tr.schedule(), nn::make_generator(r))
                   .item<double>();
    }
    return total / 8;
  };
  const double before = eval();
  tr.train(data);
  EXPECT_LT(eval(), before);
}

TEST(DiffusionTrain, ResumeGivesIdenticalNextLoss) {
  auto c = tiny_dit();
  std::vector<DiffusionSample> data;
  for (int i = 0; i < 5; ++i) data.push_back({torch::randn({16, 10, 14}), torch::randn({c.cond_channels(), 20, 28})});
  DiffusionTrainConfig tc;
  tc.steps = 4;
  tc.batch_size = 2;
  tc.seed = 9;
  DiffusionTrainer a(c, tc);
  a.step(data);
  a.step(data);
  auto b = DiffusionTrainer::resume(a.checkpoint());
  EXPECT_EQ(a.step(data), b->step(data));
  auto loaded = load_diffusion(a.checkpoint());
  EXPECT_EQ(loaded.schedule.alpha_bar, a.schedule().alpha_bar);
}

TEST(DiffusionSample, SeedsControlMembers) {
  auto c = tiny_dit();
  torch::manual_seed(6);
  Dit m(c);
  {
    torch::NoGradGuard g;
    for (auto& p : m->parameters()) p.add_(torch::randn_like(p) * 0.02);
  }
  auto s = make_schedule(100);
  auto cond = random_cond(c, 1)[0];
  auto a = sample_latents(m, cond, s, 10, {7, 8, 9});
  auto b = sample_latents(m, cond, s, 10, {7, 8, 9});
  EXPECT_EQ(dims(a), (std::vector<std::int64_t>{3, 16, 10, 14}));
  EXPECT_LT((a - b).abs().max().item<double>(), 1e-6);
  EXPECT_GT((a[0] - a[1]).abs().max().item<double>(), 0.0);
  auto single = sample_latents(m, cond, s, 10, {8});
  EXPECT_LT((single[0] - a[1]).abs().max().item<double>(), 1e-5);
}

TEST(DiffusionToy, TwoGaussianMomentsWithinTwentyPercent) {
  DitConfig c;
  c.latent_channels = 2;
  c.latent_height = 4;
  c.latent_width = 4;
  c.cond_surface_vars = 1;
  c.cond_upper_vars = 0;
  c.levels = 1;
  c.cond_height = 4;
  c.cond_width = 4;
  c.hidden = 64;
  c.depth = 2;
  c.heads = 4;
  auto gen = nn::make_generator(31);
  auto latents = mixture(2048, gen);
  std::vector<DiffusionSample> data;
  for (std::int64_t i = 0; i < latents.size(0); ++i) data.push_back({latents[i], torch::zeros({1, 4, 4})});
  DiffusionTrainConfig tc;
  tc.steps = 2500;
  tc.batch_size = 128;
  tc.seed = 3;
  tc.optim.lr = 2e-3;
  DiffusionTrainer tr(c, tc);
  tr.train(data);

  std::vector<std::uint64_t> seeds;
  for (std::uint64_t i = 0; i < 1024; ++i) seeds.push_back(1000 + i);
  auto samples = sample_latents(tr.model(), torch::zeros({1, 4, 4}), tr.schedule(), 1000, seeds);
  auto mean_s = samples.mean(0), var_s = samples.var(0);
  auto mean_d = latents.mean(0), var_d = latents.var(0);
  EXPECT_LT(((mean_s - mean_d).abs() / mean_d.abs()).max().item<double>(), 0.2);
  EXPECT_LT(((var_s - var_d).abs() / var_d).max().item<double>(), 0.2);
}

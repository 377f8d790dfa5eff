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
#include <filesystem>

#include "precipdiff/det_model.hpp"
#include "precipdiff/det_train.hpp"
#include "precipdiff/errors.hpp"
#include "precipdiff/io.hpp"
#include "precipdiff/ssim.hpp"
#include "precipdiff/synth.hpp"

using namespace precipdiff;
using namespace precipdiff::det;
using torch::indexing::Slice;

namespace {

std::vector<std::int64_t> dims(const torch::Tensor& t) { return t.sizes().vec(); }

DetModelConfig small_desk(EmbeddingKind e = EmbeddingKind::kNonLinear,
                          UpsamplerKind u = UpsamplerKind::kReconstruction) {
  DetModelConfig c;
  c.embed_dim = 16;
  c.embed_hidden = 4;
  c.depths = {1, 2, 1};
  c.heads = {2, 2, 2};
  c.embedding = e;
  c.upsampler = u;
  return c;
}

std::pair<torch::Tensor, torch::Tensor> random_inputs(const DetModelConfig& c, std::int64_t batch = 1) {
  return {torch::randn({batch, c.surface_channels(), c.height, c.width}),
          torch::randn({batch, c.upper_channels(), c.levels, c.height, c.width})};
}

std::vector<DetSample> random_samples(const DetModelConfig& c, int n) {
  torch::manual_seed(11);
  std::vector<DetSample> out;
  for (int i = 0; i < n; ++i) {
    DetSample s;
    s.surface = torch::randn({c.surface_channels(), c.height, c.width});
    s.upper = torch::randn({c.upper_channels(), c.levels, c.height, c.width});
    s.target = torch::sigmoid(s.surface.index({Slice(0, 1)}) + 0.5 * s.upper.index({4, 2}).unsqueeze(0));
    out.push_back(s);
  }
  return out;
}

// Closed-form SSIM for two constant fields.
double ssim_constants(double a, double b) {
  const double c1 = 1e-4;
  return (2 * a * b + c1) / (a * a + b * b + c1);
}

}  // namespace

// SSIM and loss ----------------------------------------------------------------

TEST(Ssim, IdentityIsOne) {
  torch::manual_seed(0);
  auto x = torch::rand({32, 40}, torch::kFloat64);
  EXPECT_NEAR(nn::ssim(x, x).item<double>(), 1.0, 1e-12);
}

TEST(Ssim, ConstantsMatchClosedForm) {
  auto a = torch::zeros({20, 20}, torch::kFloat64);
  auto b = torch::ones({20, 20}, torch::kFloat64);
  EXPECT_NEAR(nn::ssim(a, b).item<double>(), 9.999e-5, 1e-8);
  EXPECT_NEAR(nn::ssim(a, b).item<double>(), ssim_constants(0.0, 1.0), 1e-12);
}

TEST(Ssim, Symmetric) {
  torch::manual_seed(1);
  auto a = torch::rand({3, 17, 23}, torch::kFloat64);
  auto b = torch::rand({3, 17, 23}, torch::kFloat64);
  EXPECT_NEAR(nn::ssim(a, b).item<double>(), nn::ssim(b, a).item<double>(), 1e-12);
}

TEST(Ssim, GridFieldOverload) {
  GridField a(GridSpec{0, 0, 1, 1, 12, 12}, UnitTag::kNorm);
  GridField b = a;
  for (double& v : b.values()) v = 1.0;
  EXPECT_NEAR(nn::ssim(a, b), 9.999e-5, 1e-8);
  EXPECT_NEAR(nn::ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, RejectsShapeMismatch) {
  EXPECT_THROW(nn::ssim(torch::zeros({4, 4}), torch::zeros({4, 5})), ValidationError);
}

TEST(Loss, ZeroWhenEqual) {
  torch::manual_seed(2);
  auto x = torch::rand({2, 1, 16, 16}, torch::kFloat64);
  EXPECT_NEAR(nn::loss_mse_ssim(x, x).item<double>(), 0.0, 1e-12);
}

TEST(Loss, ConstantOffsetMatchesScalarOracle) {
  for (double c : {0.0, 0.2, 0.7}) {
    for (double delta : {0.05, 0.3, -0.4}) {
      auto target = torch::full({15, 15}, c, torch::kFloat64);
      auto pred = torch::full({15, 15}, c + delta, torch::kFloat64);
      const double expected = 0.5 * delta * delta + 1.5 * (1.0 - ssim_constants(c + delta, c));
      EXPECT_NEAR(nn::loss_mse_ssim(pred, target).item<double>(), expected, 1e-12) << c << " " << delta;
    }
  }
}

TEST(Loss, NonNegative) {
  torch::manual_seed(3);
  for (int k = 0; k < 20; ++k) {
    auto a = torch::randn({10, 13}, torch::kFloat64) * (k + 1) * 0.2;
    auto b = torch::randn({10, 13}, torch::kFloat64);
    EXPECT_GE(nn::loss_mse_ssim(a, b).item<double>(), 0.0);
  }
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  torch::manual_seed(4);
  auto pred = torch::rand({8, 8}, torch::kFloat64).requires_grad_(true);
  auto target = torch::rand({8, 8}, torch::kFloat64);
  nn::loss_mse_ssim(pred, target).backward();
  auto analytic = pred.grad().clone();

  const double h = 1e-6;
  auto numeric = torch::zeros({8, 8}, torch::kFloat64);
  auto base = pred.detach().clone();
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 8; ++j) {
      auto p = base.clone();
      p[i][j] += h;
      auto m = base.clone();
      m[i][j] -= h;
      const double fp = nn::loss_mse_ssim(p, target).item<double>();
      const double fm = nn::loss_mse_ssim(m, target).item<double>();
      numeric[i][j] = (fp - fm) / (2 * h);
    }
  }
  const double rel = (analytic - numeric).norm().item<double>() / numeric.norm().item<double>();
  EXPECT_LT(rel, 1e-4);
}

// Config -------------------------------------------------------------------------

TEST(DetConfig, TokenArithmetic) {
  DetModelConfig desk;
  EXPECT_EQ(desk.tokens(), (Extent3{4, 7, 9}));
  EXPECT_EQ(desk.merged_tokens(), (Extent3{4, 4, 5}));
  DetModelConfig paper;
  paper.height = 241;
  paper.width = 281;
  paper.levels = 13;
  EXPECT_EQ(paper.tokens(), (Extent3{8, 61, 71}));
  EXPECT_EQ(paper.merged_tokens(), (Extent3{8, 31, 36}));
  EXPECT_EQ(paper.padded_levels(), 14);
}

TEST(DetConfig, Experiments) {
  DetModelConfig base;
  auto b = apply_experiment(base, "baseline");
  EXPECT_EQ(b.loss, LossKind::kMse);
  EXPECT_FALSE(b.st_features);
  EXPECT_EQ(b.embedding, EmbeddingKind::kStandard);
  EXPECT_EQ(b.upsampler, UpsamplerKind::kBilinear);
  auto d1 = apply_experiment(base, "d1");
  EXPECT_EQ(d1.loss, LossKind::kMseSsim);
  EXPECT_FALSE(d1.st_features);
  auto d2 = apply_experiment(base, "exp-d2");
  EXPECT_TRUE(d2.st_features);
  EXPECT_EQ(d2.embedding, EmbeddingKind::kStandard);
  auto d3 = apply_experiment(base, "d3");
  EXPECT_EQ(d3.embedding, EmbeddingKind::kNonLinear);
  EXPECT_EQ(d3.upsampler, UpsamplerKind::kBilinear);
  auto d4 = apply_experiment(base, "d4");
  EXPECT_EQ(d4.upsampler, UpsamplerKind::kReconstruction);
  EXPECT_EQ(d4.surface_channels(), 4 * 2 + 9);
  EXPECT_THROW(apply_experiment(base, "d5"), ConfigError);
}

TEST(DetConfig, JsonRoundTrip) {
  auto c = apply_experiment(small_desk(), "d2");
  c.lambda1 = 0.25;
  auto back = DetModelConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
}

TEST(DetConfig, Validation) {
  DetModelConfig c;
  c.window = {2, 8, 6};
  EXPECT_THROW(c.validate(), ValidationError);
  c = DetModelConfig{};
  c.lambda2 = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = DetModelConfig{};
  c.heads = {3, 4, 2};
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(DetConfig, WindowPlanClampsToExtent) {
  auto p = plan_windows({2, 6, 6}, {4, 4, 5});
  EXPECT_EQ(p.window, (Extent3{2, 4, 5}));
  EXPECT_EQ(p.shift, (Extent3{1, 0, 0}));
  p = plan_windows({2, 6, 6}, {8, 61, 71});
  EXPECT_EQ(p.window, (Extent3{2, 6, 6}));
  EXPECT_EQ(p.shift, (Extent3{1, 3, 3}));
}

// Shapes -------------------------------------------------------------------------

class DetShapes : public ::testing::TestWithParam<std::tuple<EmbeddingKind, UpsamplerKind, bool>> {};

TEST_P(DetShapes, DeskProfile) {
  auto [e, u, st] = GetParam();
  auto c = small_desk(e, u);
  c.st_features = st;
  torch::manual_seed(5);
  DetModel m(c);
  auto [s, up] = random_inputs(c, 2);
  torch::NoGradGuard g;
  auto tr = m->trace(s, up);
  EXPECT_EQ(dims(tr.embedded.surface), (std::vector<std::int64_t>{2, 16, 1, 7, 9}));
  EXPECT_EQ(dims(tr.embedded.upper), (std::vector<std::int64_t>{2, 16, 3, 7, 9}));
  EXPECT_EQ(dims(tr.embedded.tokens), (std::vector<std::int64_t>{2, 16, 4, 7, 9}));
  EXPECT_EQ(dims(tr.swin.merged), (std::vector<std::int64_t>{2, 32, 4, 4, 5}));
  EXPECT_EQ(dims(tr.swin.output), (std::vector<std::int64_t>{2, 16, 4, 7, 9}));
  EXPECT_EQ(dims(tr.upsampled.intermediate), (std::vector<std::int64_t>{2, 16, 1, 13, 18}));
  EXPECT_EQ(dims(tr.upsampled.output), (std::vector<std::int64_t>{2, 1, 25, 35}));
  EXPECT_TRUE(torch::isfinite(tr.upsampled.output).all().item<bool>());
}

INSTANTIATE_TEST_SUITE_P(AllVariants, DetShapes,
                         ::testing::Combine(::testing::Values(EmbeddingKind::kStandard, EmbeddingKind::kNonLinear),
                                            ::testing::Values(UpsamplerKind::kBilinear,
                                                              UpsamplerKind::kReconstruction),
                                            ::testing::Bool()));

TEST(DetShapesPaper, PaperProfile) {
  DetModelConfig c;
  c.height = 241;
  c.width = 281;
  c.levels = 13;
  c.embed_dim = 96;
  c.heads = {3, 6, 3};
  c.depths = {1, 1, 1};
  c.embed_hidden = 4;
  for (auto up : {UpsamplerKind::kBilinear, UpsamplerKind::kReconstruction}) {
    c.upsampler = up;
    torch::manual_seed(6);
    DetModel m(c);
    auto [s, u] = random_inputs(c);
    torch::NoGradGuard g;
    auto tr = m->trace(s, u);
    EXPECT_EQ(dims(tr.embedded.surface), (std::vector<std::int64_t>{1, 96, 1, 61, 71}));
    EXPECT_EQ(dims(tr.embedded.upper), (std::vector<std::int64_t>{1, 96, 7, 61, 71}));
    EXPECT_EQ(dims(tr.embedded.tokens), (std::vector<std::int64_t>{1, 96, 8, 61, 71}));
    EXPECT_EQ(dims(tr.swin.merged), (std::vector<std::int64_t>{1, 192, 8, 31, 36}));
    EXPECT_EQ(dims(tr.swin.output), (std::vector<std::int64_t>{1, 96, 8, 61, 71}));
    EXPECT_EQ(dims(tr.upsampled.intermediate), (std::vector<std::int64_t>{1, 96, 1, 121, 141}));
    EXPECT_EQ(dims(tr.upsampled.output), (std::vector<std::int64_t>{1, 1, 241, 281}));
  }
}

TEST(DetModel, RejectsWrongInputShape) {
  auto c = small_desk();
  DetModel m(c);
  auto [s, u] = random_inputs(c);
  EXPECT_THROW(m(s.index({Slice(), Slice(0, 5)}), u), ValidationError);
  EXPECT_THROW(m(s, u.index({Slice(), Slice(), Slice(0, 4)})), ValidationError);
}

// Properties -----------------------------------------------------------------------

TEST(DetModel, AttentionRowsSumToOne) {
  torch::manual_seed(7);
  WindowAttention3d attn(16, Extent3{2, 3, 3}, 4);
  auto x = torch::randn({5, 18, 16});
  auto a = attn->attention(x);
  EXPECT_LT((a.sum(-1) - 1).abs().max().item<double>(), 1e-6);
  EXPECT_GE(a.min().item<double>(), 0.0);
}

TEST(DetModel, ShiftedAttentionRowsSumToOne) {
  torch::manual_seed(8);
  auto c = small_desk();
  SwinLayer3d layer(16, 2, 2, Extent3{2, 6, 6}, c.tokens(), 4.0);
  ASSERT_EQ(layer->plan().shift, (Extent3{1, 3, 3}));
  auto y = layer(torch::randn({1, 4, 7, 9, 16}));
  EXPECT_EQ(dims(y), (std::vector<std::int64_t>{1, 4, 7, 9, 16}));
  EXPECT_TRUE(torch::isfinite(y).all().item<bool>());
}

TEST(DetModel, IdenticalWindowTokensGiveIdenticalOutputs) {
  torch::manual_seed(9);
  SwinBlock3d block(16, 2, Extent3{2, 3, 3}, Extent3{}, 4.0);
  auto x = torch::randn({1, 4, 6, 6, 16});
  auto v = torch::randn({16});
  x.index_put_({0, Slice(0, 2), Slice(0, 3), Slice(0, 3)}, v);
  torch::NoGradGuard g;
  auto y = block(x, torch::Tensor());
  auto win = y.index({0, Slice(0, 2), Slice(0, 3), Slice(0, 3)}).reshape({-1, 16});
  EXPECT_LT((win - win[0]).abs().max().item<double>(), 1e-6);
  auto other = y.index({0, Slice(2, 4), Slice(0, 3), Slice(0, 3)}).reshape({-1, 16});
  EXPECT_GT((other - other[0]).abs().max().item<double>(), 1e-3);
}

TEST(DetModel, SkipSurgeryReducesToLayerOne) {
  torch::manual_seed(10);
  auto c = small_desk();
  Swin3d swin(c);
  {
    torch::NoGradGuard g;
    for (int k : {1, 2}) {
      swin->layer(k)->norm()->weight.zero_();
      swin->layer(k)->norm()->bias.zero_();
    }
    swin->up_projection()->bias.zero_();
  }
  auto t = c.tokens();
  auto x = torch::randn({1, c.embed_dim, t.d, t.h, t.w});
  torch::NoGradGuard g;
  auto tr = swin->trace(x);
  EXPECT_LT((tr.output - tr.layer1).abs().max().item<double>(), 1e-6);
  EXPECT_LT(tr.layer2.abs().max().item<double>(), 1e-7);
}

TEST(DetModel, ZeroHeadGivesZeroOutput) {
  for (auto u : {UpsamplerKind::kBilinear, UpsamplerKind::kReconstruction}) {
    auto c = small_desk(EmbeddingKind::kNonLinear, u);
    DetModel m(c);
    m->zero_output_head();
    auto [s, up] = random_inputs(c);
    torch::NoGradGuard g;
    EXPECT_EQ(m(s, up).abs().max().item<double>(), 0.0);
  }
}

TEST(DetModel, Deterministic) {
  auto c = small_desk();
  torch::manual_seed(12);
  DetModel a(c);
  torch::manual_seed(12);
  DetModel b(c);
  auto [s, u] = random_inputs(c);
  torch::NoGradGuard g;
  auto ya = a(s, u);
  EXPECT_LT((ya - a(s, u)).abs().max().item<double>(), 1e-6);
  EXPECT_LT((ya - b(s, u)).abs().max().item<double>(), 1e-6);
}

// Input assembly ---------------------------------------------------------------------

TEST(DetInputs, AssembleFromSynthStates) {
  SynthConfig sc;
  sc.timesteps = 3;
  auto ds = synth_generate(1, sc);
  NormalizationStats stats;
  for (const auto& v : kSurfaceVariables) stats.variables[v] = Moments{{0.0}, {1.0}};
  for (const auto& v : kUpperVariables) stats.variables[v] = Moments{{0.0}, {1.0}};
  auto s = assemble_sample(ds.states[0], ds.states[1], stats, &ds.statics);
  DetModelConfig c;
  EXPECT_EQ(dims(s.surface), (std::vector<std::int64_t>{c.surface_channels(), 25, 35}));
  EXPECT_EQ(dims(s.upper), (std::vector<std::int64_t>{10, 5, 25, 35}));
  // Variable-major channel order: T2M(t-1), T2M(t), U10(t-1), ...
  EXPECT_NEAR(s.surface[1][3][4].item<double>(), ds.states[1].surface[0].at(3, 4), 1e-3);
  EXPECT_NEAR(s.surface[2][3][4].item<double>(), ds.states[0].surface[1].at(3, 4), 1e-3);
  EXPECT_NEAR(s.upper[9][2][3][4].item<double>(), ds.states[1].upper[4].at(2, 3, 4), 1e-6);
  auto bare = assemble_sample(ds.states[0], ds.states[1], stats, nullptr);
  EXPECT_EQ(bare.surface.size(0), 8);
}

// Training -------------------------------------------------------------------------------

TEST(DetTrain, LossDecreasesOverFirstSteps) {
  auto c = small_desk();
  auto data = random_samples(c, 4);
  DetTrainConfig tc;
  tc.steps = 10;
  tc.optim.lr = 1e-4;
  tc.optim.cosine = false;
  DetTrainer t(c, tc);
  t.train(data);
  const auto& h = t.history();
  ASSERT_EQ(h.size(), 10U);
  for (std::size_t i = 1; i < h.size(); ++i) EXPECT_LT(h[i], h[i - 1]) << i;
}

TEST(DetTrain, ResumeGivesIdenticalNextLoss) {
  auto c = apply_experiment(small_desk(), "d4");
  auto data = random_samples(c, 6);
  DetTrainConfig tc;
  tc.steps = 6;
  tc.batch_size = 3;
  tc.seed = 5;
  DetTrainer a(c, tc);
  for (int i = 0; i < 3; ++i) a.step(data);
  auto path = std::filesystem::temp_directory_path() / "precipdiff_det_resume.ckpt";
  write_checkpoint(a.checkpoint(), path);
  auto b = DetTrainer::resume(read_checkpoint(path));
  std::filesystem::remove(path);
  EXPECT_EQ(b->steps_taken(), 3);
  EXPECT_EQ(b->history(), a.history());
  const double la = a.step(data);
  const double lb = b->step(data);
  EXPECT_EQ(la, lb);
}

TEST(DetTrain, NanAbortsWithNumericError) {
  auto c = small_desk();
  auto data = random_samples(c, 2);
  data[0].target[0][0][0] = std::nan("");
  DetTrainer t(c, DetTrainConfig{});
  EXPECT_THROW(t.step(data), NumericError);
}

TEST(DetTrain, LoadForInference) {
  auto c = small_desk();
  auto data = random_samples(c, 2);
  DetTrainConfig tc;
  tc.steps = 2;
  DetTrainer t(c, tc);
  t.train(data);
  auto m = load_det_model(t.checkpoint());
  auto p = det_predict(m, data[0]);
  auto q = det_predict(t.model(), data[0]);
  EXPECT_EQ(dims(p), (std::vector<std::int64_t>{25, 35}));
  EXPECT_LT((p - q).abs().max().item<double>(), 1e-6);
}

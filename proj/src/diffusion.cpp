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

#include "precipdiff/diffusion.hpp"

#include <cmath>
#include <numbers>

#include "precipdiff/errors.hpp"

namespace precipdiff::diffusion {

namespace F = torch::nn::functional;
using torch::indexing::None;
using torch::indexing::Slice;

namespace {

constexpr const char* kKind = "diffusion";
constexpr std::int64_t kTimestepFeatures = 256;

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

std::string to_string(ScheduleKind k) { return k == ScheduleKind::kLinear ? "linear" : "cosine"; }

ScheduleKind schedule_from(const std::string& s) {
  if (s == "linear") return ScheduleKind::kLinear;
  if (s == "cosine") return ScheduleKind::kCosine;
  throw ConfigError("unknown noise schedule: " + s);
}

void xavier(torch::nn::Linear& l) {
  torch::NoGradGuard guard;
  torch::nn::init::xavier_uniform_(l->weight);
  if (l->bias.defined()) l->bias.zero_();
}

void zero(torch::nn::Linear& l) {
  torch::NoGradGuard guard;
  l->weight.zero_();
  if (l->bias.defined()) l->bias.zero_();
}

torch::Tensor modulate(const torch::Tensor& x, const torch::Tensor& shift, const torch::Tensor& scale) {
  return x * (1 + scale.unsqueeze(1)) + shift.unsqueeze(1);
}

torch::Tensor per_row(const std::vector<double>& table, const torch::Tensor& t, const torch::Tensor& like) {
  auto values = torch::tensor(table, torch::kFloat64).index({t.to(torch::kLong)}).to(like.dtype());
  std::vector<std::int64_t> shape(static_cast<std::size_t>(like.dim()), 1);
  shape[0] = like.size(0);
  return values.view(shape);
}

}  // namespace

// Schedule ---------------------------------------------------------------------

double NoiseSchedule::ab(std::int64_t t) const {
  if (t < 0 || t > steps) throw ValidationError("timestep " + std::to_string(t) + " outside [0, " +
                                                std::to_string(steps) + "]");
  return alpha_bar[static_cast<std::size_t>(t)];
}

nlohmann::json NoiseSchedule::to_json() const {
  return {{"steps", steps}, {"kind", to_string(kind)}, {"beta_start", beta_start}, {"beta_end", beta_end}};
}

NoiseSchedule NoiseSchedule::from_json(const nlohmann::json& j) {
  try {
    return make_schedule(j.at("steps").get<std::int64_t>(), schedule_from(j.value("kind", std::string("linear"))),
                         j.value("beta_start", 1e-4), j.value("beta_end", 0.02));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("schedule: ") + e.what());
  }
}

NoiseSchedule make_schedule(std::int64_t steps, ScheduleKind kind, double beta_start, double beta_end) {
  if (steps < 1) throw ValidationError("schedule needs at least one step");
  if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_end < beta_start) {
    throw ValidationError("betas must satisfy 0 < start <= end < 1");
  }
  NoiseSchedule s;
  s.steps = steps;
  s.kind = kind;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  const auto n = static_cast<std::size_t>(steps);
  s.beta.assign(n + 1, 0.0);
  s.alpha.assign(n + 1, 1.0);
  s.alpha_bar.assign(n + 1, 1.0);
  if (kind == ScheduleKind::kLinear) {
    for (std::size_t t = 1; t <= n; ++t) {
      const double frac = n == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(n - 1);
      s.beta[t] = beta_start + (beta_end - beta_start) * frac;
    }
  } else {
    constexpr double offset = 0.008;
    auto f = [&](double t) {
      const double c = std::cos((t / static_cast<double>(n) + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
      return c * c;
    };
    for (std::size_t t = 1; t <= n; ++t) {
      s.beta[t] = std::min(1.0 - f(static_cast<double>(t)) / f(static_cast<double>(t - 1)), 0.999);
    }
  }
  for (std::size_t t = 1; t <= n; ++t) {
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
  }
  return s;
}

torch::Tensor forward_noise(const torch::Tensor& z0, const torch::Tensor& t, const torch::Tensor& eps,
                            const NoiseSchedule& s) {
  if (z0.sizes() != eps.sizes()) throw ValidationError("eps must match the latent shape");
  if (t.dim() != 1 || t.size(0) != z0.size(0)) throw ValidationError("one timestep per batch row required");
  if (t.min().item<std::int64_t>() < 0 || t.max().item<std::int64_t>() > s.steps) {
    throw ValidationError("timestep outside the schedule");
  }
  std::vector<double> a(s.alpha_bar.size()), b(s.alpha_bar.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = std::sqrt(s.alpha_bar[i]);
    b[i] = std::sqrt(1.0 - s.alpha_bar[i]);
  }
  return per_row(a, t, z0) * z0 + per_row(b, t, z0) * eps;
}

torch::Tensor forward_noise(const torch::Tensor& z0, std::int64_t t, const torch::Tensor& eps, const NoiseSchedule& s) {
  if (z0.sizes() != eps.sizes()) throw ValidationError("eps must match the latent shape");
  const double ab = s.ab(t);
  return std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * eps;
}

torch::Tensor ddim_step(const torch::Tensor& z_t, const torch::Tensor& eps_hat, std::int64_t t, std::int64_t t_prev,
                        const NoiseSchedule& s) {
  if (t_prev > t) throw ValidationError("DDIM step must not go forward in time");
  if (t_prev < 0) throw ValidationError("DDIM target timestep must be >= 0");
  if (t_prev == t) return z_t;
  const double ab = s.ab(t);
  const double ab_prev = s.ab(t_prev);
  auto x0 = (z_t - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
  return std::sqrt(ab_prev) * x0 + std::sqrt(1.0 - ab_prev) * eps_hat;
}

std::vector<std::int64_t> ddim_timesteps(std::int64_t total, std::int64_t steps) {
  if (steps < 1 || steps > total) throw ValidationError("DDIM steps must be in [1, T]");
  std::vector<std::int64_t> ts;
  for (std::int64_t i = 0; i < steps; ++i) ts.push_back(i * total / steps + 1);
  return ts;
}

torch::Tensor ddim_sample(const Denoiser& denoise, const torch::Tensor& noise, const NoiseSchedule& s,
                          std::int64_t steps) {
  const auto ts = ddim_timesteps(s.steps, steps);
  auto z = noise;
  for (auto i = static_cast<std::int64_t>(ts.size()) - 1; i >= 0; --i) {
    const auto t = ts[static_cast<std::size_t>(i)];
    const auto t_prev = i > 0 ? ts[static_cast<std::size_t>(i - 1)] : 0;
    z = ddim_step(z, denoise(z, t), t, t_prev, s);
  }
  return z;
}

// Denoiser -----------------------------------------------------------------------

std::int64_t DitConfig::token_height() const { return ceil_div(latent_height, patch); }
std::int64_t DitConfig::token_width() const { return ceil_div(latent_width, patch); }
std::int64_t DitConfig::cond_token_height() const { return ceil_div(cond_height, cond_patch); }
std::int64_t DitConfig::cond_token_width() const { return ceil_div(cond_width, cond_patch); }

void DitConfig::validate() const {
  if (latent_channels <= 0 || latent_height <= 0 || latent_width <= 0 || patch <= 0) {
    throw ValidationError("latent extent and patch must be positive");
  }
  if (cond_surface_vars < 0 || cond_upper_vars < 0 || cond_channels() <= 0 || levels <= 0) {
    throw ValidationError("condition needs at least one channel");
  }
  if (cond_height <= 0 || cond_width <= 0 || cond_patch <= 0 || cond_hidden <= 0) {
    throw ValidationError("condition extent and patch must be positive");
  }
  if (hidden <= 0 || hidden % 4 != 0) throw ValidationError("hidden width must be a positive multiple of 4");
  if (heads <= 0 || hidden % heads != 0) throw ValidationError("heads must divide the hidden width");
  if (depth < 0) throw ValidationError("depth must be non-negative");
  if (!(mlp_ratio > 0.0)) throw ValidationError("mlp_ratio must be positive");
}

nlohmann::json DitConfig::to_json() const {
  return {{"latent_channels", latent_channels},
          {"latent_height", latent_height},
          {"latent_width", latent_width},
          {"patch", patch},
          {"cond_surface_vars", cond_surface_vars},
          {"cond_upper_vars", cond_upper_vars},
          {"levels", levels},
          {"cond_height", cond_height},
          {"cond_width", cond_width},
          {"cond_patch", cond_patch},
          {"cond_hidden", cond_hidden},
          {"hidden", hidden},
          {"depth", depth},
          {"heads", heads},
          {"mlp_ratio", mlp_ratio}};
}

DitConfig DitConfig::from_json(const nlohmann::json& j) {
  DitConfig c;
  try {
    c.latent_channels = j.value("latent_channels", c.latent_channels);
    c.latent_height = j.value("latent_height", c.latent_height);
    c.latent_width = j.value("latent_width", c.latent_width);
    c.patch = j.value("patch", c.patch);
    c.cond_surface_vars = j.value("cond_surface_vars", c.cond_surface_vars);
    c.cond_upper_vars = j.value("cond_upper_vars", c.cond_upper_vars);
    c.levels = j.value("levels", c.levels);
    c.cond_height = j.value("cond_height", c.cond_height);
    c.cond_width = j.value("cond_width", c.cond_width);
    c.cond_patch = j.value("cond_patch", c.cond_patch);
    c.cond_hidden = j.value("cond_hidden", c.cond_hidden);
    c.hidden = j.value("hidden", c.hidden);
    c.depth = j.value("depth", c.depth);
    c.heads = j.value("heads", c.heads);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("dit config: ") + e.what());
  }
  return c;
}

torch::Tensor sincos_position_table(std::int64_t height, std::int64_t width, std::int64_t dim) {
  if (dim % 4 != 0) throw ValidationError("position table width must be a multiple of 4");
  const auto quarter = dim / 4;
  auto omega = 1.0 / torch::pow(10000.0, torch::arange(quarter, torch::kFloat64) / static_cast<double>(quarter));
  auto axis = [&](const torch::Tensor& pos) {
    auto a = pos.unsqueeze(1) * omega.unsqueeze(0);
    return torch::cat({torch::sin(a), torch::cos(a)}, 1);
  };
  auto grid = torch::meshgrid({torch::arange(height, torch::kFloat64), torch::arange(width, torch::kFloat64)}, "ij");
  auto table = torch::cat({axis(grid[0].flatten()), axis(grid[1].flatten())}, 1);
  return table.to(torch::kFloat32);
}

torch::Tensor timestep_features(const torch::Tensor& t, std::int64_t dim) {
  const auto half = dim / 2;
  auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, torch::kFloat32) / static_cast<double>(half));
  auto args = t.to(torch::kFloat32).unsqueeze(1) * freqs.unsqueeze(0);
  return torch::cat({torch::cos(args), torch::sin(args)}, 1);
}

DitBlockImpl::DitBlockImpl(std::int64_t dim, std::int64_t heads, double mlp_ratio) : heads_(heads) {
  auto ln = [&] { return torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim}).elementwise_affine(false).eps(1e-6)); };
  const auto hidden = static_cast<std::int64_t>(std::llround(static_cast<double>(dim) * mlp_ratio));
  norm1_ = register_module("norm1", ln());
  qkv_ = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
  proj_ = register_module("proj", torch::nn::Linear(dim, dim));
  norm2_ = register_module("norm2", ln());
  fc1_ = register_module("fc1", torch::nn::Linear(dim, hidden));
  fc2_ = register_module("fc2", torch::nn::Linear(hidden, dim));
  modulation_ = register_module("modulation", torch::nn::Linear(dim, 6 * dim));
  xavier(qkv_);
  xavier(proj_);
  xavier(fc1_);
  xavier(fc2_);
  zero(modulation_);
}

torch::Tensor DitBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& c) {
  auto m = modulation_(torch::silu(c)).chunk(6, 1);
  const auto b = x.size(0), n = x.size(1), d = x.size(2);
  auto h = modulate(norm1_(x), m[0], m[1]);
  auto qkv = qkv_(h).reshape({b, n, 3, heads_, d / heads_}).permute({2, 0, 3, 1, 4});
  auto attn = at::scaled_dot_product_attention(qkv[0], qkv[1], qkv[2]);
  auto y = x + m[2].unsqueeze(1) * proj_(attn.transpose(1, 2).reshape({b, n, d}));
  h = modulate(norm2_(y), m[3], m[4]);
  return y + m[5].unsqueeze(1) * fc2_(torch::gelu(fc1_(h), "tanh"));
}

DitImpl::DitImpl(const DitConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto d = cfg.hidden;
  const auto p = cfg.cond_patch;
  const auto hid = cfg.cond_hidden;
  latent_embed_ = register_module(
      "latent_embed", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg.latent_channels, d, cfg.patch).stride(cfg.patch)));
  std::int64_t mixed = 0;
  if (cfg.cond_surface_vars > 0) {
    cond_surface_ = register_module(
        "cond_surface", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg.cond_surface_vars, cfg.cond_surface_vars * hid, p)
                                              .stride(p)
                                              .groups(cfg.cond_surface_vars)));
    mixed += cfg.cond_surface_vars * hid;
  }
  if (cfg.cond_upper_vars > 0) {
    cond_upper_ = register_module(
        "cond_upper", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg.cond_upper_vars * cfg.levels,
                                                                 cfg.cond_upper_vars * hid, p)
                                            .stride(p)
                                            .groups(cfg.cond_upper_vars)));
    mixed += cfg.cond_upper_vars * hid;
  }
  cond_mix_ = register_module("cond_mix", torch::nn::Conv2d(torch::nn::Conv2dOptions(mixed, d, 1)));
  fuse_ = register_module("fuse", torch::nn::Linear(2 * d, d));
  t_fc1_ = register_module("t_fc1", torch::nn::Linear(kTimestepFeatures, d));
  t_fc2_ = register_module("t_fc2", torch::nn::Linear(d, d));
  xavier(fuse_);
  {
    torch::NoGradGuard guard;
    t_fc1_->weight.normal_(0.0, 0.02);
    t_fc1_->bias.zero_();
    t_fc2_->weight.normal_(0.0, 0.02);
    t_fc2_->bias.zero_();
  }
  for (std::int64_t i = 0; i < cfg.depth; ++i) {
    blocks_.push_back(register_module("block" + std::to_string(i), DitBlock(d, cfg.heads, cfg.mlp_ratio)));
  }
  final_norm_ = register_module(
      "final_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d}).elementwise_affine(false).eps(1e-6)));
  final_modulation_ = register_module("final_modulation", torch::nn::Linear(d, 2 * d));
  final_linear_ =
      register_module("final_linear", torch::nn::Linear(d, cfg.patch * cfg.patch * cfg.latent_channels));
  zero(final_modulation_);
  zero(final_linear_);
  pos_ = sincos_position_table(cfg.token_height(), cfg.token_width(), d);
}

void DitImpl::zero_output_head() { zero(final_linear_); }

torch::Tensor DitImpl::embed_condition(const torch::Tensor& cond) {
  const auto& c = cfg_;
  if (cond.dim() != 4 || cond.size(1) != c.cond_channels() || cond.size(2) != c.cond_height ||
      cond.size(3) != c.cond_width) {
    throw ValidationError("condition shape does not match the denoiser config");
  }
  const auto ph = c.cond_token_height() * c.cond_patch - c.cond_height;
  const auto pw = c.cond_token_width() * c.cond_patch - c.cond_width;
  auto x = F::pad(cond, F::PadFuncOptions({0, pw, 0, ph}));
  std::vector<torch::Tensor> parts;
  if (cond_surface_) parts.push_back(torch::gelu(cond_surface_(x.index({Slice(), Slice(0, c.cond_surface_vars)}))));
  if (cond_upper_) parts.push_back(torch::gelu(cond_upper_(x.index({Slice(), Slice(c.cond_surface_vars, None)}))));
  auto h = torch::gelu(cond_mix_(torch::cat(parts, 1)));
  if (h.size(2) != c.token_height() || h.size(3) != c.token_width()) {
    h = F::interpolate(h, F::InterpolateFuncOptions()
                              .size(std::vector<std::int64_t>{c.token_height(), c.token_width()})
                              .mode(torch::kBilinear)
                              .align_corners(false));
  }
  return h.flatten(2).transpose(1, 2);
}

torch::Tensor DitImpl::forward(const torch::Tensor& z_t, const torch::Tensor& t, const torch::Tensor& cond) {
  const auto& c = cfg_;
  if (z_t.dim() != 4 || z_t.size(1) != c.latent_channels || z_t.size(2) != c.latent_height ||
      z_t.size(3) != c.latent_width) {
    throw ValidationError("latent shape does not match the denoiser config");
  }
  if (t.dim() != 1 || t.size(0) != z_t.size(0) || cond.size(0) != z_t.size(0)) {
    throw ValidationError("batch sizes of latent, timestep and condition differ");
  }
  const auto b = z_t.size(0);
  const auto th = c.token_height(), tw = c.token_width(), p = c.patch;
  auto z = F::pad(z_t, F::PadFuncOptions({0, tw * p - c.latent_width, 0, th * p - c.latent_height}));
  auto tokens = latent_embed_(z).flatten(2).transpose(1, 2);
  auto x = fuse_(torch::cat({tokens, embed_condition(cond)}, 2)) + pos_.to(z.dtype()).unsqueeze(0);
  auto temb = t_fc2_(torch::silu(t_fc1_(timestep_features(t, kTimestepFeatures).to(z.dtype()))));
  for (auto& blk : blocks_) x = blk(x, temb);
  auto m = final_modulation_(torch::silu(temb)).chunk(2, 1);
  x = final_linear_(modulate(final_norm_(x), m[0], m[1]));
  x = x.view({b, th, tw, p, p, c.latent_channels}).permute({0, 5, 1, 3, 2, 4}).reshape(
      {b, c.latent_channels, th * p, tw * p});
  return x.index({Slice(), Slice(), Slice(0, c.latent_height), Slice(0, c.latent_width)});
}

torch::Tensor diffusion_loss(Dit& model, const torch::Tensor& z0, const torch::Tensor& cond, const NoiseSchedule& s,
                             at::Generator gen) {
  const auto b = z0.size(0);
  auto t = torch::randint(1, s.steps + 1, {b}, gen, torch::TensorOptions().dtype(torch::kLong));
  auto eps = torch::randn(z0.sizes(), gen, z0.options());
  auto z_t = forward_noise(z0, t, eps, s);
  return torch::mse_loss(model(z_t, t, cond), eps);
}

torch::Tensor sample_latents(Dit& model, const torch::Tensor& cond, const NoiseSchedule& s, std::int64_t steps,
                             const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ValidationError("at least one seed required");
  torch::NoGradGuard guard;
  model->eval();
  const auto& c = model->config();
  std::vector<torch::Tensor> noise;
  for (auto seed : seeds) {
    auto gen = nn::make_generator(seed);
    noise.push_back(torch::randn({c.latent_channels, c.latent_height, c.latent_width}, gen));
  }
  const auto n = static_cast<std::int64_t>(seeds.size());
  auto conds = cond.unsqueeze(0).expand({n, cond.size(0), cond.size(1), cond.size(2)});
  Denoiser f = [&](const torch::Tensor& z, std::int64_t t) {
    return model(z, torch::full({n}, t, torch::kLong), conds);
  };
  return ddim_sample(f, torch::stack(noise), s, steps);
}

// Training -----------------------------------------------------------------------

nlohmann::json DiffusionTrainConfig::to_json() const {
  return {{"steps", steps},         {"batch_size", batch_size},        {"seed", seed},
          {"timesteps", timesteps}, {"schedule", to_string(schedule)}, {"optim", nn::to_json(optim)}};
}

DiffusionTrainConfig DiffusionTrainConfig::from_json(const nlohmann::json& j) {
  DiffusionTrainConfig c;
  try {
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.timesteps = j.value("timesteps", c.timesteps);
    c.schedule = schedule_from(j.value("schedule", to_string(c.schedule)));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("diffusion train config: ") + e.what());
  }
  if (j.contains("optim")) c.optim = nn::optim_from_json(j.at("optim"));
  if (c.steps < 0) throw ConfigError("steps must be non-negative");
  return c;
}

DiffusionTrainer::DiffusionTrainer(const DitConfig& cfg, const DiffusionTrainConfig& train_cfg)
    : cfg_(cfg), train_cfg_(train_cfg), schedule_(make_schedule(train_cfg.timesteps, train_cfg.schedule)) {
  cfg_.validate();
  torch::manual_seed(train_cfg.seed);
  model_ = Dit(cfg_);
  optim_ = std::make_unique<nn::Adam>(model_->parameters(), train_cfg_.optim);
}

double DiffusionTrainer::step(const std::vector<DiffusionSample>& data) {
  model_->train();
  const auto step = optim_->steps_taken();
  const auto idx =
      nn::batch_indices(static_cast<std::int64_t>(data.size()), train_cfg_.batch_size, train_cfg_.seed, step);
  std::vector<torch::Tensor> z, c;
  for (auto i : idx) {
    z.push_back(data.at(static_cast<std::size_t>(i)).latent);
    c.push_back(data.at(static_cast<std::size_t>(i)).cond);
  }
  auto gen = nn::make_generator(nn::derive_seed(train_cfg_.seed ^ 0xD1FFULL, static_cast<std::uint64_t>(step)));
  optim_->zero_grad();
  auto loss = diffusion_loss(model_, torch::stack(z), torch::stack(c), schedule_, gen);
  const double value = loss.item<double>();
  nn::require_finite(value, "diffusion loss at step " + std::to_string(step));
  loss.backward();
  optim_->step();
  history_.push_back(value);
  return value;
}

void DiffusionTrainer::train(const std::vector<DiffusionSample>& data,
                             const std::function<void(std::int64_t, double)>& on_step) {
  while (optim_->steps_taken() < train_cfg_.steps) {
    const double loss = step(data);
    if (on_step) on_step(optim_->steps_taken(), loss);
  }
}

Checkpoint DiffusionTrainer::checkpoint() const {
  Checkpoint c;
  c.config = {{"kind", kKind},
              {"model", cfg_.to_json()},
              {"train", train_cfg_.to_json()},
              {"schedule", schedule_.to_json()},
              {"history", history_}};
  nn::export_module(*model_, c, "model.");
  optim_->export_state(c, "optim.");
  return c;
}

std::unique_ptr<DiffusionTrainer> DiffusionTrainer::resume(const Checkpoint& ckpt) {
  if (ckpt.config.value("kind", std::string()) != kKind) throw IoError("not a diffusion checkpoint");
  auto t = std::make_unique<DiffusionTrainer>(DitConfig::from_json(ckpt.config.at("model")),
                                              DiffusionTrainConfig::from_json(ckpt.config.at("train")));
  nn::import_module(*t->model_, ckpt, "model.");
  t->optim_->import_state(ckpt, "optim.");
  t->history_ = ckpt.config.value("history", std::vector<double>{});
  return t;
}

LoadedDiffusion load_diffusion(const Checkpoint& ckpt) {
  if (ckpt.config.value("kind", std::string()) != kKind) throw IoError("not a diffusion checkpoint");
  LoadedDiffusion out;
  out.model = Dit(DitConfig::from_json(ckpt.config.at("model")));
  nn::import_module(*out.model, ckpt, "model.");
  out.model->eval();
  out.schedule = NoiseSchedule::from_json(ckpt.config.at("schedule"));
  return out;
}

}  // namespace precipdiff::diffusion

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

#include "precipdiff/vae.hpp"

#include "precipdiff/errors.hpp"

namespace precipdiff::vae {

namespace F = torch::nn::functional;

namespace {

constexpr const char* kKind = "vae";

torch::nn::Conv2d conv3(std::int64_t in, std::int64_t out, std::int64_t stride = 1) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::nn::GroupNorm group_norm(std::int64_t groups, std::int64_t channels) {
  return torch::nn::GroupNorm(torch::nn::GroupNormOptions(groups, channels).eps(1e-6));
}

torch::Tensor resize(const torch::Tensor& x, std::int64_t h, std::int64_t w) {
  if (x.size(2) == h && x.size(3) == w) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<std::int64_t>{h, w})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

}  // namespace

void VaeConfig::validate() const {
  if (height <= 0 || width <= 0) throw ValidationError("VAE input extent must be positive");
  if (latent_channels <= 0 || latent_height <= 0 || latent_width <= 0) {
    throw ValidationError("VAE latent extent must be positive");
  }
  if (groups <= 0) throw ValidationError("GroupNorm groups must be positive");
  for (auto c : channels) {
    if (c <= 0 || c % groups != 0) throw ValidationError("VAE widths must be positive multiples of groups");
  }
  if (bottleneck_channels <= 0 || bottleneck_channels % groups != 0) {
    throw ValidationError("VAE widths must be positive multiples of groups");
  }
  if (kl_weight < 0.0) throw ValidationError("kl_weight must be non-negative");
}

nlohmann::json VaeConfig::to_json() const {
  return {{"height", height},
          {"width", width},
          {"latent_channels", latent_channels},
          {"latent_height", latent_height},
          {"latent_width", latent_width},
          {"channels", channels},
          {"bottleneck_channels", bottleneck_channels},
          {"groups", groups},
          {"kl_weight", kl_weight}};
}

VaeConfig VaeConfig::from_json(const nlohmann::json& j) {
  VaeConfig c;
  try {
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.latent_channels = j.value("latent_channels", c.latent_channels);
    c.latent_height = j.value("latent_height", c.latent_height);
    c.latent_width = j.value("latent_width", c.latent_width);
    c.channels = j.value("channels", c.channels);
    c.bottleneck_channels = j.value("bottleneck_channels", c.bottleneck_channels);
    c.groups = j.value("groups", c.groups);
    c.kl_weight = j.value("kl_weight", c.kl_weight);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("vae config: ") + e.what());
  }
  return c;
}

ResBlockImpl::ResBlockImpl(std::int64_t in, std::int64_t out, std::int64_t groups) {
  norm1_ = register_module("norm1", group_norm(groups, in));
  conv1_ = register_module("conv1", conv3(in, out));
  norm2_ = register_module("norm2", group_norm(groups, out));
  conv2_ = register_module("conv2", conv3(out, out));
  if (in != out) skip_ = register_module("skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1)));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
  auto h = conv1_(torch::silu(norm1_(x)));
  h = conv2_(torch::silu(norm2_(h)));
  return (skip_ ? skip_(x) : x) + h;
}

EncoderImpl::EncoderImpl(const VaeConfig& cfg) : cfg_(cfg) {
  const auto g = cfg.groups;
  conv_in_ = register_module("conv_in", conv3(1, cfg.channels[0]));
  stages_ = register_module("stages", torch::nn::ModuleList());
  std::int64_t in = cfg.channels[0];
  for (auto c : cfg.channels) {
    torch::nn::Sequential s(ResBlock(in, c, g), ResBlock(c, c, g), conv3(c, c, 2));
    stages_->push_back(s);
    in = c;
  }
  mid_ = register_module("mid", torch::nn::Sequential(ResBlock(in, cfg.bottleneck_channels, g),
                                                      ResBlock(cfg.bottleneck_channels, cfg.bottleneck_channels, g)));
  norm_out_ = register_module("norm_out", group_norm(g, cfg.bottleneck_channels));
  conv_out_ = register_module("conv_out", conv3(cfg.bottleneck_channels, 2 * cfg.latent_channels));
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& x) {
  auto h = conv_in_(x);
  for (auto& s : *stages_) h = s->as<torch::nn::Sequential>()->forward(h);
  h = conv_out_(torch::silu(norm_out_(mid_->forward(h))));
  return resize(h, cfg_.latent_height, cfg_.latent_width);
}

DecoderImpl::DecoderImpl(const VaeConfig& cfg) : cfg_(cfg) {
  const auto g = cfg.groups;
  const auto b = cfg.bottleneck_channels;
  conv_in_ = register_module("conv_in", conv3(cfg.latent_channels, b));
  mid_ = register_module("mid", torch::nn::Sequential(ResBlock(b, b, g), ResBlock(b, b, g)));
  stages_ = register_module("stages", torch::nn::ModuleList());
  std::int64_t in = b;
  for (auto it = cfg.channels.rbegin(); it != cfg.channels.rend(); ++it) {
    torch::nn::Sequential s(conv3(in, *it), ResBlock(*it, *it, g), ResBlock(*it, *it, g));
    stages_->push_back(s);
    in = *it;
  }
  norm_out_ = register_module("norm_out", group_norm(g, in));
  conv_out_ = register_module("conv_out", conv3(in, 1));
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& z) {
  auto h = mid_->forward(conv_in_(z));
  for (auto& s : *stages_) {
    h = F::interpolate(h, F::InterpolateFuncOptions()
                              .scale_factor(std::vector<double>{2.0, 2.0})
                              .mode(torch::kNearest));
    h = s->as<torch::nn::Sequential>()->forward(h);
  }
  h = resize(h, cfg_.height, cfg_.width);
  return conv_out_(torch::silu(norm_out_(h)));
}

VaeImpl::VaeImpl(const VaeConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  encoder_ = register_module("encoder", Encoder(cfg));
  decoder_ = register_module("decoder", Decoder(cfg));
}

std::pair<torch::Tensor, torch::Tensor> VaeImpl::moments(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 1 || x.size(2) != cfg_.height || x.size(3) != cfg_.width) {
    throw ValidationError("VAE input must be [B, 1, " + std::to_string(cfg_.height) + ", " +
                          std::to_string(cfg_.width) + "]");
  }
  auto h = encoder_(x);
  auto parts = h.chunk(2, 1);
  return {parts[0], parts[1].clamp(-30.0, 20.0)};
}

LatentCode VaeImpl::encode(const torch::Tensor& x, const torch::Tensor& eps) {
  auto [mu, logvar] = moments(x);
  if (eps.sizes() != mu.sizes()) throw ValidationError("eps shape does not match the latent");
  LatentCode c{mu, logvar, eps, mu + torch::exp(0.5 * logvar) * eps};
  return c;
}

LatentCode VaeImpl::encode(const torch::Tensor& x, at::Generator gen) {
  auto [mu, logvar] = moments(x);
  auto eps = torch::randn(mu.sizes(), gen, mu.options());
  return LatentCode{mu, logvar, eps, mu + torch::exp(0.5 * logvar) * eps};
}

torch::Tensor VaeImpl::decode(const torch::Tensor& z) {
  if (z.dim() != 4 || z.size(1) != cfg_.latent_channels || z.size(2) != cfg_.latent_height ||
      z.size(3) != cfg_.latent_width) {
    throw ValidationError("latent shape does not match the VAE config");
  }
  return decoder_(z);
}

torch::Tensor kl_divergence(const torch::Tensor& mu, const torch::Tensor& logvar) {
  return (0.5 * (mu * mu + torch::exp(logvar) - 1.0 - logvar)).mean();
}

torch::Tensor vae_loss(const torch::Tensor& x, const torch::Tensor& recon, const LatentCode& code, double kl_weight) {
  return torch::l1_loss(recon, x) + kl_weight * kl_divergence(code.mu, code.logvar);
}

torch::Tensor LatentStats::normalize(const torch::Tensor& z) const {
  return (z - mean.view({-1, 1, 1})) / std.view({-1, 1, 1});
}

torch::Tensor LatentStats::denormalize(const torch::Tensor& z) const {
  return z * std.view({-1, 1, 1}) + mean.view({-1, 1, 1});
}

nlohmann::json VaeTrainConfig::to_json() const {
  return {{"steps", steps}, {"batch_size", batch_size}, {"seed", seed}, {"optim", nn::to_json(optim)}};
}

VaeTrainConfig VaeTrainConfig::from_json(const nlohmann::json& j) {
  VaeTrainConfig c;
  try {
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("vae train config: ") + e.what());
  }
  if (j.contains("optim")) c.optim = nn::optim_from_json(j.at("optim"));
  if (c.steps < 0) throw ConfigError("steps must be non-negative");
  return c;
}

VaeTrainer::VaeTrainer(const VaeConfig& cfg, const VaeTrainConfig& train_cfg) : cfg_(cfg), train_cfg_(train_cfg) {
  cfg_.validate();
  torch::manual_seed(train_cfg.seed);
  model_ = Vae(cfg_);
  optim_ = std::make_unique<nn::Adam>(model_->parameters(), train_cfg_.optim);
}

double VaeTrainer::step(const std::vector<torch::Tensor>& data) {
  model_->train();
  const auto step = optim_->steps_taken();
  const auto idx = nn::batch_indices(static_cast<std::int64_t>(data.size()), train_cfg_.batch_size, train_cfg_.seed, step);
  std::vector<torch::Tensor> rows;
  for (auto i : idx) rows.push_back(data.at(static_cast<std::size_t>(i)));
  auto x = torch::stack(rows);
  auto gen = nn::make_generator(nn::derive_seed(train_cfg_.seed ^ 0x5641ULL, static_cast<std::uint64_t>(step)));
  optim_->zero_grad();
  auto code = model_->encode(x, gen);
  auto loss = vae_loss(x, model_->decode(code.sample), code, cfg_.kl_weight);
  const double value = loss.item<double>();
  nn::require_finite(value, "VAE loss at step " + std::to_string(step));
  loss.backward();
  optim_->step();
  history_.push_back(value);
  return value;
}

void VaeTrainer::train(const std::vector<torch::Tensor>& data, const std::function<void(std::int64_t, double)>& on_step) {
  while (optim_->steps_taken() < train_cfg_.steps) {
    const double loss = step(data);
    if (on_step) on_step(optim_->steps_taken(), loss);
  }
}

torch::Tensor encode_means(Vae& model, const std::vector<torch::Tensor>& data) {
  torch::NoGradGuard guard;
  const bool was_training = model->is_training();
  model->eval();
  std::vector<torch::Tensor> mus;
  for (const auto& x : data) {
    auto h = x.unsqueeze(0);
    mus.push_back(model->encode(h, torch::zeros({1, model->config().latent_channels, model->config().latent_height,
                                                 model->config().latent_width}))
                      .mu);
  }
  model->train(was_training);
  return torch::cat(mus, 0);
}

void VaeTrainer::fit_latent_stats(const std::vector<torch::Tensor>& data) {
  auto mu = encode_means(model_, data);
  stats_.mean = mu.mean({0, 2, 3});
  stats_.std = mu.std({0, 2, 3}, /*unbiased=*/false).clamp_min(1e-6);
}

Checkpoint VaeTrainer::checkpoint() const {
  Checkpoint c;
  c.config = {{"kind", kKind}, {"model", cfg_.to_json()}, {"train", train_cfg_.to_json()}, {"history", history_}};
  nn::export_module(*model_, c, "model.");
  optim_->export_state(c, "optim.");
  if (stats_.defined()) {
    c.arrays.push_back(nn::to_named_array("latent.mean", stats_.mean));
    c.arrays.push_back(nn::to_named_array("latent.std", stats_.std));
  }
  return c;
}

std::unique_ptr<VaeTrainer> VaeTrainer::resume(const Checkpoint& ckpt) {
  if (ckpt.config.value("kind", std::string()) != kKind) throw IoError("not a VAE checkpoint");
  auto t = std::make_unique<VaeTrainer>(VaeConfig::from_json(ckpt.config.at("model")),
                                        VaeTrainConfig::from_json(ckpt.config.at("train")));
  nn::import_module(*t->model_, ckpt, "model.");
  t->optim_->import_state(ckpt, "optim.");
  t->history_ = ckpt.config.value("history", std::vector<double>{});
  if (ckpt.contains("latent.mean")) {
    t->stats_.mean = nn::from_named_array(ckpt.at("latent.mean"));
    t->stats_.std = nn::from_named_array(ckpt.at("latent.std"));
  }
  return t;
}

LoadedVae load_vae(const Checkpoint& ckpt) {
  if (ckpt.config.value("kind", std::string()) != kKind) throw IoError("not a VAE checkpoint");
  LoadedVae out;
  out.model = Vae(VaeConfig::from_json(ckpt.config.at("model")));
  nn::import_module(*out.model, ckpt, "model.");
  out.model->eval();
  if (ckpt.contains("latent.mean")) {
    out.stats.mean = nn::from_named_array(ckpt.at("latent.mean"));
    out.stats.std = nn::from_named_array(ckpt.at("latent.std"));
  }
  return out;
}

}  // namespace precipdiff::vae

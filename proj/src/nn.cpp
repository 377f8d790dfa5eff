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

#include "precipdiff/nn.hpp"

#include <cmath>
#include <numbers>

#include <ATen/CPUGeneratorImpl.h>

#include "precipdiff/errors.hpp"

namespace precipdiff::nn {

torch::Tensor to_tensor(const GridField& f, torch::Dtype dtype) {
  auto view = torch::from_blob(const_cast<double*>(f.values().data()), f.shape(), torch::kFloat64);
  return view.to(dtype, /*non_blocking=*/false, /*copy=*/true);
}

GridField from_tensor(const torch::Tensor& t, const GridField& like) {
  auto c = t.detach().to(torch::kFloat64).contiguous();
  if (static_cast<std::size_t>(c.numel()) != like.size()) {
    throw ValidationError("from_tensor: tensor has " + std::to_string(c.numel()) + " elements, field has " +
                          std::to_string(like.size()));
  }
  GridField out = like;
  const double* p = c.data_ptr<double>();
  std::copy(p, p + c.numel(), out.values().begin());
  return out;
}

NamedArray to_named_array(const std::string& name, const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat32).contiguous();
  NamedArray a;
  a.name = name;
  a.shape = c.sizes().vec();
  a.data.assign(c.data_ptr<float>(), c.data_ptr<float>() + c.numel());
  return a;
}

torch::Tensor from_named_array(const NamedArray& a) {
  auto data = a.data;
  return torch::from_blob(data.data(), a.shape, torch::kFloat32).clone();
}

void export_module(const torch::nn::Module& m, Checkpoint& ckpt, const std::string& prefix) {
  for (const auto& p : m.named_parameters(true)) ckpt.arrays.push_back(to_named_array(prefix + p.key(), p.value()));
  for (const auto& b : m.named_buffers(true)) ckpt.arrays.push_back(to_named_array(prefix + b.key(), b.value()));
}

void import_module(torch::nn::Module& m, const Checkpoint& ckpt, const std::string& prefix) {
  torch::NoGradGuard guard;
  auto load = [&](const std::string& key, torch::Tensor& dst) {
    const NamedArray& a = ckpt.at(prefix + key);
    if (a.shape != dst.sizes().vec()) throw IoError("checkpoint array '" + prefix + key + "' has the wrong shape");
    dst.copy_(from_named_array(a));
  };
  for (auto& p : m.named_parameters(true)) load(p.key(), p.value());
  for (auto& b : m.named_buffers(true)) load(b.key(), b.value());
}

at::Generator make_generator(std::uint64_t seed) { return at::detail::createCPUGenerator(seed); }

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 finalizer over the combined words.
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

nlohmann::json to_json(const OptimConfig& c) {
  return {{"lr", c.lr},           {"beta1", c.beta1},         {"beta2", c.beta2},
          {"eps", c.eps},         {"weight_decay", c.weight_decay}, {"clip_norm", c.clip_norm},
          {"total_steps", c.total_steps}, {"cosine", c.cosine}};
}

OptimConfig optim_from_json(const nlohmann::json& j) {
  OptimConfig c;
  try {
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.cosine = j.value("cosine", c.cosine);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("optimizer config: ") + e.what());
  }
  if (!(c.lr > 0.0)) throw ConfigError("learning rate must be positive");
  return c;
}

std::vector<std::int64_t> batch_indices(std::int64_t n, std::int64_t batch, std::uint64_t seed, std::int64_t step) {
  if (n <= 0) throw ValidationError("empty training set");
  std::vector<std::int64_t> idx;
  if (batch <= 0 || batch >= n) {
    for (std::int64_t i = 0; i < n; ++i) idx.push_back(i);
    return idx;
  }
  auto gen = make_generator(derive_seed(seed, static_cast<std::uint64_t>(step)));
  auto perm = torch::randperm(n, gen, torch::TensorOptions().dtype(torch::kLong));
  for (std::int64_t i = 0; i < batch; ++i) idx.push_back(perm[i].item<std::int64_t>());
  return idx;
}

Adam::Adam(std::vector<torch::Tensor> params, OptimConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.push_back(torch::zeros_like(p));
    v_.push_back(torch::zeros_like(p));
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) {
    if (p.grad().defined()) p.mutable_grad().zero_();
  }
}

double Adam::lr_at(std::int64_t step) const {
  if (!cfg_.cosine || cfg_.total_steps <= 0) return cfg_.lr;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(cfg_.total_steps));
  return cfg_.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

double grad_norm(const std::vector<torch::Tensor>& params) {
  double total = 0.0;
  for (const auto& p : params) {
    if (p.grad().defined()) total += p.grad().to(torch::kFloat64).pow(2).sum().item<double>();
  }
  return std::sqrt(total);
}

double Adam::step() {
  torch::NoGradGuard guard;
  const double norm = grad_norm(params_);
  require_finite(norm, "gradient norm");
  const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / (norm + 1e-6) : 1.0;
  const double lr = lr_at(step_);
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.grad().defined()) continue;
    auto g = p.grad() * clip;
    m_[k].mul_(cfg_.beta1).add_(g, 1.0 - cfg_.beta1);
    v_[k].mul_(cfg_.beta2).addcmul_(g, g, 1.0 - cfg_.beta2);
    if (cfg_.weight_decay > 0.0) p.mul_(1.0 - lr * cfg_.weight_decay);
    auto denom = (v_[k] / bc2).sqrt_().add_(cfg_.eps);
    p.addcdiv_(m_[k], denom, -lr / bc1);
  }
  return norm;
}

void Adam::export_state(Checkpoint& ckpt, const std::string& prefix) const {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    ckpt.arrays.push_back(to_named_array(prefix + "m." + std::to_string(k), m_[k]));
    ckpt.arrays.push_back(to_named_array(prefix + "v." + std::to_string(k), v_[k]));
  }
  ckpt.config[prefix + "step"] = step_;
}

void Adam::import_state(const Checkpoint& ckpt, const std::string& prefix) {
  torch::NoGradGuard guard;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    m_[k].copy_(from_named_array(ckpt.at(prefix + "m." + std::to_string(k))));
    v_[k].copy_(from_named_array(ckpt.at(prefix + "v." + std::to_string(k))));
  }
  step_ = ckpt.config.value(prefix + "step", std::int64_t{0});
}

void require_finite(double value, const std::string& what) {
  if (!std::isfinite(value)) throw NumericError(what + " is not finite (" + std::to_string(value) + ")");
}

}  // namespace precipdiff::nn

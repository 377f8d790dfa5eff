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

#include "precipdiff/det_train.hpp"

#include "precipdiff/errors.hpp"
#include "precipdiff/ssim.hpp"

namespace precipdiff::det {

namespace {

constexpr const char* kKind = "det";

torch::Tensor standardized(const GridField& f, const NormalizationStats& stats) {
  return nn::to_tensor(standardize(f, stats));
}

}  // namespace

DetSample assemble_sample(const AtmosphericState& prev, const AtmosphericState& cur,
                          const NormalizationStats& stats, const StaticFields* statics) {
  prev.validate();
  cur.validate();
  if (!(prev.grid() == cur.grid()) || prev.levels() != cur.levels()) {
    throw ValidationError("consecutive states must share grid and levels");
  }
  std::vector<torch::Tensor> surf;
  for (std::size_t v = 0; v < cur.surface.size(); ++v) {
    surf.push_back(standardized(prev.surface[v], stats));
    surf.push_back(standardized(cur.surface[v], stats));
  }
  if (statics != nullptr) surf.push_back(nn::to_tensor(build_features(cur.grid(), cur.timestamp, *statics)));
  std::vector<torch::Tensor> up;
  for (std::size_t v = 0; v < cur.upper.size(); ++v) {
    up.push_back(standardized(prev.upper[v], stats));
    up.push_back(standardized(cur.upper[v], stats));
  }
  DetSample s;
  for (auto& t : surf) {
    if (t.dim() == 2) t = t.unsqueeze(0);
  }
  s.surface = torch::cat(surf, 0);
  s.upper = torch::stack(up, 0);
  s.timestamp = cur.timestamp;
  return s;
}

DetSample collate(const std::vector<DetSample>& data, const std::vector<std::int64_t>& idx) {
  std::vector<torch::Tensor> s, u, t;
  for (auto i : idx) {
    const auto& d = data.at(static_cast<std::size_t>(i));
    s.push_back(d.surface);
    u.push_back(d.upper);
    if (d.target.defined()) t.push_back(d.target);
  }
  DetSample b;
  b.surface = torch::stack(s);
  b.upper = torch::stack(u);
  if (!t.empty()) {
    if (t.size() != idx.size()) throw ValidationError("some samples lack a target");
    b.target = torch::stack(t);
  }
  return b;
}

torch::Tensor det_loss(const DetModelConfig& cfg, const torch::Tensor& pred, const torch::Tensor& target) {
  if (pred.sizes() != target.sizes()) throw ValidationError("prediction and target shapes differ");
  if (cfg.loss == LossKind::kMse) return torch::mse_loss(pred, target);
  return nn::loss_mse_ssim(pred, target, cfg.lambda1, cfg.lambda2);
}

nlohmann::json DetTrainConfig::to_json() const {
  return {{"steps", steps}, {"batch_size", batch_size}, {"seed", seed}, {"optim", nn::to_json(optim)}};
}

DetTrainConfig DetTrainConfig::from_json(const nlohmann::json& j) {
  DetTrainConfig c;
  try {
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("det train config: ") + e.what());
  }
  if (j.contains("optim")) c.optim = nn::optim_from_json(j.at("optim"));
  if (c.steps < 0) throw ConfigError("steps must be non-negative");
  return c;
}

DetTrainer::DetTrainer(const DetModelConfig& model_cfg, const DetTrainConfig& train_cfg)
    : model_cfg_(model_cfg), train_cfg_(train_cfg) {
  model_cfg_.validate();
  torch::manual_seed(train_cfg.seed);
  model_ = DetModel(model_cfg_);
  optim_ = std::make_unique<nn::Adam>(model_->parameters(), train_cfg_.optim);
}

double DetTrainer::step(const std::vector<DetSample>& data) {
  model_->train();
  const auto idx = nn::batch_indices(static_cast<std::int64_t>(data.size()), train_cfg_.batch_size, train_cfg_.seed,
                                     optim_->steps_taken());
  auto batch = collate(data, idx);
  if (!batch.target.defined()) throw ValidationError("training samples need targets");
  optim_->zero_grad();
  auto loss = det_loss(model_cfg_, model_(batch.surface, batch.upper), batch.target);
  const double value = loss.item<double>();
  nn::require_finite(value, "deterministic loss at step " + std::to_string(optim_->steps_taken()));
  loss.backward();
  optim_->step();
  history_.push_back(value);
  return value;
}

void DetTrainer::train(const std::vector<DetSample>& data, const std::function<void(std::int64_t, double)>& on_step) {
  while (optim_->steps_taken() < train_cfg_.steps) {
    const double loss = step(data);
    if (on_step) on_step(optim_->steps_taken(), loss);
  }
}

Checkpoint DetTrainer::checkpoint() const {
  Checkpoint c;
  c.config = {{"kind", kKind}, {"model", model_cfg_.to_json()}, {"train", train_cfg_.to_json()}, {"history", history_}};
  nn::export_module(*model_, c, "model.");
  optim_->export_state(c, "optim.");
  return c;
}

std::unique_ptr<DetTrainer> DetTrainer::resume(const Checkpoint& ckpt) {
  if (ckpt.config.value("kind", std::string()) != kKind) throw IoError("not a deterministic-model checkpoint");
  auto t = std::make_unique<DetTrainer>(DetModelConfig::from_json(ckpt.config.at("model")),
                                        DetTrainConfig::from_json(ckpt.config.at("train")));
  nn::import_module(*t->model_, ckpt, "model.");
  t->optim_->import_state(ckpt, "optim.");
  t->history_ = ckpt.config.value("history", std::vector<double>{});
  return t;
}

DetModel load_det_model(const Checkpoint& ckpt) {
  if (ckpt.config.value("kind", std::string()) != kKind) throw IoError("not a deterministic-model checkpoint");
  DetModel m(DetModelConfig::from_json(ckpt.config.at("model")));
  nn::import_module(*m, ckpt, "model.");
  m->eval();
  return m;
}

torch::Tensor det_predict(DetModel& model, const DetSample& sample) {
  torch::NoGradGuard guard;
  model->eval();
  auto out = model(sample.surface.unsqueeze(0), sample.upper.unsqueeze(0));
  return out.squeeze(0).squeeze(0);
}

}  // namespace precipdiff::det

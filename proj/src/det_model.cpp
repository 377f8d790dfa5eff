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

#include "precipdiff/det_model.hpp"

#include <cmath>
#include <stdexcept>

#include "precipdiff/errors.hpp"
#include "precipdiff/features.hpp"

namespace precipdiff::det {

namespace F = torch::nn::functional;
using torch::indexing::None;
using torch::indexing::Slice;

namespace {

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

std::string to_string(EmbeddingKind k) { return k == EmbeddingKind::kStandard ? "standard" : "nonlinear"; }
std::string to_string(UpsamplerKind k) { return k == UpsamplerKind::kBilinear ? "upsampler1" : "upsampler2"; }
std::string to_string(LossKind k) { return k == LossKind::kMse ? "mse" : "mse_ssim"; }

EmbeddingKind embedding_from(const std::string& s) {
  if (s == "standard") return EmbeddingKind::kStandard;
  if (s == "nonlinear") return EmbeddingKind::kNonLinear;
  throw ConfigError("unknown embedding: " + s);
}
UpsamplerKind upsampler_from(const std::string& s) {
  if (s == "upsampler1") return UpsamplerKind::kBilinear;
  if (s == "upsampler2") return UpsamplerKind::kReconstruction;
  throw ConfigError("unknown upsampler: " + s);
}
LossKind loss_from(const std::string& s) {
  if (s == "mse") return LossKind::kMse;
  if (s == "mse_ssim") return LossKind::kMseSsim;
  throw ConfigError("unknown loss: " + s);
}

void init_linear(torch::nn::Linear& l) {
  torch::NoGradGuard guard;
  l->weight.normal_(0.0, 0.02).clamp_(-0.04, 0.04);
  if (l->bias.defined()) l->bias.zero_();
}

/// [B, D, H, W, C] -> [B * nW, wd * wh * ww, C]
torch::Tensor partition(const torch::Tensor& x, Extent3 w) {
  const auto b = x.size(0), d = x.size(1), h = x.size(2), wi = x.size(3), c = x.size(4);
  return x.view({b, d / w.d, w.d, h / w.h, w.h, wi / w.w, w.w, c})
      .permute({0, 1, 3, 5, 2, 4, 6, 7})
      .reshape({-1, w.d * w.h * w.w, c});
}

/// Inverse of partition.
torch::Tensor merge_windows(const torch::Tensor& windows, Extent3 w, std::int64_t b, Extent3 e) {
  const auto c = windows.size(-1);
  return windows.view({b, e.d / w.d, e.h / w.h, e.w / w.w, w.d, w.h, w.w, c})
      .permute({0, 1, 4, 2, 5, 3, 6, 7})
      .reshape({b, e.d, e.h, e.w, c});
}

Extent3 padded(Extent3 e, Extent3 w) {
  return {ceil_div(e.d, w.d) * w.d, ceil_div(e.h, w.h) * w.h, ceil_div(e.w, w.w) * w.w};
}

bool any_shift(Extent3 s) { return s.d > 0 || s.h > 0 || s.w > 0; }

/// Region-id mask for cyclically shifted windows; -100 between tokens that
/// were not neighbours before the roll.
torch::Tensor shift_mask(Extent3 e, Extent3 w, Extent3 s) {
  auto img = torch::zeros({1, e.d, e.h, e.w, 1});
  auto bounds = [](std::int64_t n, std::int64_t win, std::int64_t sh) {
    return std::array<std::pair<std::int64_t, std::int64_t>, 3>{
        {{0, n - win}, {n - win, n - sh}, {n - sh, n}}};
  };
  float id = 0.0F;
  for (auto [d0, d1] : bounds(e.d, w.d, s.d)) {
    for (auto [h0, h1] : bounds(e.h, w.h, s.h)) {
      for (auto [w0, w1] : bounds(e.w, w.w, s.w)) {
        img.index_put_({Slice(), Slice(d0, d1), Slice(h0, h1), Slice(w0, w1), Slice()}, id);
        id += 1.0F;
      }
    }
  }
  auto mw = partition(img, w).squeeze(-1);
  auto diff = mw.unsqueeze(1) - mw.unsqueeze(2);
  return torch::zeros_like(diff).masked_fill(diff != 0, -100.0);
}

}  // namespace

// Config --------------------------------------------------------------------

std::int64_t DetModelConfig::surface_channels() const {
  return surface_vars * timesteps + (st_features ? kFeatureChannels : 0);
}

std::int64_t DetModelConfig::padded_levels() const { return ceil_div(levels, upper_patch[0]) * upper_patch[0]; }

Extent3 DetModelConfig::tokens() const {
  return {1 + ceil_div(levels, upper_patch[0]), ceil_div(height, surface_patch), ceil_div(width, surface_patch)};
}

Extent3 DetModelConfig::merged_tokens() const {
  auto t = tokens();
  return {t.d, ceil_div(t.h, 2), ceil_div(t.w, 2)};
}

void DetModelConfig::validate() const {
  if (height <= 0 || width <= 0 || levels <= 0) throw ValidationError("grid extents must be positive");
  if (surface_vars <= 0 || upper_vars <= 0 || timesteps <= 0) throw ValidationError("variable counts must be positive");
  if (embed_dim <= 0 || embed_hidden <= 0) throw ValidationError("embedding widths must be positive");
  for (auto d : depths) {
    if (d <= 0) throw ValidationError("layer depths must be positive");
  }
  const std::array<std::int64_t, 3> dims{embed_dim, 2 * embed_dim, embed_dim};
  for (int k = 0; k < 3; ++k) {
    if (heads[k] <= 0 || dims[k] % heads[k] != 0) throw ValidationError("head count must divide layer width");
  }
  if (surface_patch <= 0 || upper_patch[0] <= 0 || upper_patch[1] <= 0 || upper_patch[2] <= 0) {
    throw ValidationError("patch sizes must be positive");
  }
  if (upper_patch[1] != surface_patch || upper_patch[2] != surface_patch) {
    throw ValidationError("surface and upper-air patches must share the horizontal size");
  }
  const auto t = tokens();
  if (window[0] <= 0 || window[1] <= 0 || window[2] <= 0) throw ValidationError("window must be positive");
  if (window[0] > t.d || window[1] > t.h || window[2] > t.w) {
    throw ValidationError("window larger than token extent");
  }
  if (!(lambda1 > 0.0) || !(lambda2 > 0.0)) throw ValidationError("loss weights must be positive");
  if (!(mlp_ratio > 0.0)) throw ValidationError("mlp_ratio must be positive");
}

nlohmann::json DetModelConfig::to_json() const {
  return {{"height", height},
          {"width", width},
          {"levels", levels},
          {"surface_vars", surface_vars},
          {"upper_vars", upper_vars},
          {"timesteps", timesteps},
          {"st_features", st_features},
          {"embed_dim", embed_dim},
          {"embed_hidden", embed_hidden},
          {"depths", depths},
          {"heads", heads},
          {"window", window},
          {"surface_patch", surface_patch},
          {"upper_patch", upper_patch},
          {"mlp_ratio", mlp_ratio},
          {"embedding", to_string(embedding)},
          {"upsampler", to_string(upsampler)},
          {"loss", to_string(loss)},
          {"lambda1", lambda1},
          {"lambda2", lambda2}};
}

DetModelConfig DetModelConfig::from_json(const nlohmann::json& j) {
  DetModelConfig c;
  try {
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.levels = j.value("levels", c.levels);
    c.surface_vars = j.value("surface_vars", c.surface_vars);
    c.upper_vars = j.value("upper_vars", c.upper_vars);
    c.timesteps = j.value("timesteps", c.timesteps);
    c.st_features = j.value("st_features", c.st_features);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.embed_hidden = j.value("embed_hidden", c.embed_hidden);
    c.depths = j.value("depths", c.depths);
    c.heads = j.value("heads", c.heads);
    c.window = j.value("window", c.window);
    c.surface_patch = j.value("surface_patch", c.surface_patch);
    c.upper_patch = j.value("upper_patch", c.upper_patch);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.embedding = embedding_from(j.value("embedding", to_string(c.embedding)));
    c.upsampler = upsampler_from(j.value("upsampler", to_string(c.upsampler)));
    c.loss = loss_from(j.value("loss", to_string(c.loss)));
    c.lambda1 = j.value("lambda1", c.lambda1);
    c.lambda2 = j.value("lambda2", c.lambda2);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("det model config: ") + e.what());
  }
  return c;
}

std::string canonical_experiment(const std::string& name) {
  if (name == "baseline") return name;
  const std::string tail = name.rfind("exp-", 0) == 0 ? name.substr(4) : name;
  if (tail == "d1" || tail == "d2" || tail == "d3" || tail == "d4") return "exp-" + tail;
  throw ConfigError("unknown experiment: " + name);
}

DetModelConfig apply_experiment(DetModelConfig c, const std::string& experiment) {
  const auto exp = canonical_experiment(experiment);
  const int level = exp == "baseline" ? 0 : exp.back() - '0';
  c.loss = level >= 1 ? LossKind::kMseSsim : LossKind::kMse;
  c.st_features = level >= 2;
  c.embedding = level >= 3 ? EmbeddingKind::kNonLinear : EmbeddingKind::kStandard;
  c.upsampler = level >= 4 ? UpsamplerKind::kReconstruction : UpsamplerKind::kBilinear;
  return c;
}

// Embedding -----------------------------------------------------------------

PatchEmbedImpl::PatchEmbedImpl(const DetModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto c = cfg.embed_dim;
  const auto p = cfg.surface_patch;
  const std::vector<std::int64_t> up(cfg.upper_patch.begin(), cfg.upper_patch.end());
  if (cfg.embedding == EmbeddingKind::kStandard) {
    surface_conv_ = register_module(
        "surface_conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg.surface_channels(), c, p).stride(p)));
    upper_conv_ = register_module(
        "upper_conv", torch::nn::Conv3d(torch::nn::Conv3dOptions(cfg.upper_channels(), c, up).stride(up)));
    return;
  }
  const auto hid = cfg.embed_hidden;
  const auto sv = cfg.surface_vars;
  const auto uv = cfg.upper_vars;
  surface_conv_ = register_module(
      "surface_conv",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(sv * cfg.timesteps, sv * hid, p).stride(p).groups(sv)));
  std::int64_t mixed = sv * hid;
  if (cfg.st_features) {
    feature_conv_ = register_module(
        "feature_conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(kFeatureChannels, kFeatureChannels * hid, p)
                                              .stride(p)
                                              .groups(kFeatureChannels)));
    mixed += kFeatureChannels * hid;
  }
  surface_mlp_ = register_module("surface_mlp", torch::nn::Conv2d(torch::nn::Conv2dOptions(mixed, c, 1)));
  upper_conv_ = register_module(
      "upper_conv",
      torch::nn::Conv3d(torch::nn::Conv3dOptions(cfg.upper_channels(), uv * hid, up).stride(up).groups(uv)));
  upper_mlp_ = register_module("upper_mlp", torch::nn::Conv3d(torch::nn::Conv3dOptions(uv * hid, c, 1)));
}

Embedded PatchEmbedImpl::forward(const torch::Tensor& surface, const torch::Tensor& upper) {
  const auto& c = cfg_;
  if (surface.dim() != 4 || surface.size(1) != c.surface_channels() || surface.size(2) != c.height ||
      surface.size(3) != c.width) {
    throw ValidationError("surface input shape does not match config");
  }
  if (upper.dim() != 5 || upper.size(1) != c.upper_channels() || upper.size(2) != c.levels ||
      upper.size(3) != c.height || upper.size(4) != c.width || upper.size(0) != surface.size(0)) {
    throw ValidationError("upper-air input shape does not match config");
  }
  const auto t = c.tokens();
  const auto ph = t.h * c.surface_patch - c.height;
  const auto pw = t.w * c.surface_patch - c.width;
  const auto pd = c.padded_levels() - c.levels;
  auto s = F::pad(surface, F::PadFuncOptions({0, pw, 0, ph}));
  auto u = F::pad(upper, F::PadFuncOptions({0, pw, 0, ph, 0, pd}));

  Embedded out;
  if (c.embedding == EmbeddingKind::kStandard) {
    out.surface = surface_conv_(s);
    out.upper = upper_conv_(u);
  } else {
    const auto nvar = c.surface_vars * c.timesteps;
    auto h = torch::gelu(surface_conv_(s.index({Slice(), Slice(0, nvar)})));
    if (c.st_features) {
      h = torch::cat({h, torch::gelu(feature_conv_(s.index({Slice(), Slice(nvar, None)})))}, 1);
    }
    out.surface = torch::gelu(surface_mlp_(h));
    out.upper = torch::gelu(upper_mlp_(torch::gelu(upper_conv_(u))));
  }
  out.surface = out.surface.unsqueeze(2);
  out.tokens = torch::cat({out.surface, out.upper}, 2);
  return out;
}

// Attention -----------------------------------------------------------------

WindowAttention3dImpl::WindowAttention3dImpl(std::int64_t dim, Extent3 window, std::int64_t heads)
    : heads_(heads), scale_(1.0 / std::sqrt(static_cast<double>(dim / heads))), window_(window) {
  qkv_ = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
  proj_ = register_module("proj", torch::nn::Linear(dim, dim));
  init_linear(qkv_);
  init_linear(proj_);
  const auto entries = (2 * window.d - 1) * (2 * window.h - 1) * (2 * window.w - 1);
  bias_table_ = register_parameter("relative_position_bias_table",
                                   torch::randn({entries, heads}).mul_(0.02).clamp_(-0.04, 0.04));

  auto grids = torch::meshgrid({torch::arange(window.d), torch::arange(window.h), torch::arange(window.w)}, "ij");
  auto coords = torch::stack({grids[0].flatten(), grids[1].flatten(), grids[2].flatten()});  // [3, N]
  auto rel = coords.unsqueeze(2) - coords.unsqueeze(1);
  bias_index_ = (rel[0] + (window.d - 1)) * ((2 * window.h - 1) * (2 * window.w - 1)) +
                (rel[1] + (window.h - 1)) * (2 * window.w - 1) + (rel[2] + (window.w - 1));
}

torch::Tensor WindowAttention3dImpl::scores(const torch::Tensor& q, const torch::Tensor& k,
                                            const torch::Tensor& mask) {
  const auto bw = q.size(0);
  const auto n = q.size(2);
  auto attn = torch::matmul(q * scale_, k.transpose(-2, -1));
  auto bias = bias_table_.index({bias_index_.flatten()}).view({n, n, heads_}).permute({2, 0, 1});
  attn = attn + bias.unsqueeze(0);
  if (mask.defined()) {
    const auto nw = mask.size(0);
    attn = attn.view({bw / nw, nw, heads_, n, n}) + mask.unsqueeze(1).unsqueeze(0);
    attn = attn.view({bw, heads_, n, n});
  }
  return torch::softmax(attn, -1);
}

torch::Tensor WindowAttention3dImpl::attention(const torch::Tensor& x, const torch::Tensor& mask) {
  const auto bw = x.size(0), n = x.size(1), c = x.size(2);
  auto qkv = qkv_(x).reshape({bw, n, 3, heads_, c / heads_}).permute({2, 0, 3, 1, 4});
  return scores(qkv[0], qkv[1], mask);
}

torch::Tensor WindowAttention3dImpl::forward(const torch::Tensor& x, const torch::Tensor& mask) {
  const auto bw = x.size(0), n = x.size(1), c = x.size(2);
  auto qkv = qkv_(x).reshape({bw, n, 3, heads_, c / heads_}).permute({2, 0, 3, 1, 4});
  auto attn = scores(qkv[0], qkv[1], mask);
  auto out = torch::matmul(attn, qkv[2]).transpose(1, 2).reshape({bw, n, c});
  return proj_(out);
}

// Blocks and layers ---------------------------------------------------------

WindowPlan plan_windows(Extent3 window, Extent3 extent) {
  WindowPlan p;
  auto axis = [](std::int64_t win, std::int64_t ext, std::int64_t& w, std::int64_t& s) {
    if (ext <= win) {
      w = ext;
      s = 0;
    } else {
      w = win;
      s = win / 2;
    }
  };
  axis(window.d, extent.d, p.window.d, p.shift.d);
  axis(window.h, extent.h, p.window.h, p.shift.h);
  axis(window.w, extent.w, p.window.w, p.shift.w);
  return p;
}

SwinBlock3dImpl::SwinBlock3dImpl(std::int64_t dim, std::int64_t heads, Extent3 window, Extent3 shift,
                                 double mlp_ratio)
    : window_(window), shift_(shift) {
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  attn_ = register_module("attn", WindowAttention3d(dim, window, heads));
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  const auto hidden = static_cast<std::int64_t>(std::llround(static_cast<double>(dim) * mlp_ratio));
  fc1_ = register_module("fc1", torch::nn::Linear(dim, hidden));
  fc2_ = register_module("fc2", torch::nn::Linear(hidden, dim));
  init_linear(fc1_);
  init_linear(fc2_);
}

torch::Tensor SwinBlock3dImpl::forward(const torch::Tensor& x, const torch::Tensor& mask) {
  const auto b = x.size(0);
  const Extent3 e{x.size(1), x.size(2), x.size(3)};
  const Extent3 p = padded(e, window_);
  auto h = norm1_(x);
  h = F::pad(h, F::PadFuncOptions({0, 0, 0, p.w - e.w, 0, p.h - e.h, 0, p.d - e.d}));
  const bool shifted = any_shift(shift_);
  if (shifted) h = torch::roll(h, {-shift_.d, -shift_.h, -shift_.w}, {1, 2, 3});
  auto windows = attn_(partition(h, window_), shifted ? mask : torch::Tensor());
  h = merge_windows(windows, window_, b, p);
  if (shifted) h = torch::roll(h, {shift_.d, shift_.h, shift_.w}, {1, 2, 3});
  h = h.index({Slice(), Slice(0, e.d), Slice(0, e.h), Slice(0, e.w)});
  auto y = x + h;
  return y + fc2_(torch::gelu(fc1_(norm2_(y))));
}

SwinLayer3dImpl::SwinLayer3dImpl(std::int64_t dim, std::int64_t depth, std::int64_t heads, Extent3 window,
                                 Extent3 extent, double mlp_ratio)
    : plan_(plan_windows(window, extent)) {
  for (std::int64_t i = 0; i < depth; ++i) {
    const Extent3 shift = (i % 2 == 1) ? plan_.shift : Extent3{};
    blocks_.push_back(register_module("block" + std::to_string(i),
                                      SwinBlock3d(dim, heads, plan_.window, shift, mlp_ratio)));
  }
  norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
}

torch::Tensor SwinLayer3dImpl::forward(const torch::Tensor& x) {
  const Extent3 e{x.size(1), x.size(2), x.size(3)};
  torch::Tensor mask;
  if (any_shift(plan_.shift)) mask = shift_mask(padded(e, plan_.window), plan_.window, plan_.shift).to(x.dtype());
  auto h = x;
  for (auto& blk : blocks_) h = blk(h, mask);
  return norm_(h);
}

PatchMerging3dImpl::PatchMerging3dImpl(std::int64_t dim) {
  norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({4 * dim})));
  reduction_ = register_module("reduction", torch::nn::Linear(torch::nn::LinearOptions(4 * dim, 2 * dim).bias(false)));
  init_linear(reduction_);
}

torch::Tensor PatchMerging3dImpl::forward(const torch::Tensor& x) {
  const auto h = x.size(2), w = x.size(3);
  auto p = F::pad(x, F::PadFuncOptions({0, 0, 0, w % 2, 0, h % 2}));
  auto x0 = p.index({Slice(), Slice(), Slice(0, None, 2), Slice(0, None, 2)});
  auto x1 = p.index({Slice(), Slice(), Slice(1, None, 2), Slice(0, None, 2)});
  auto x2 = p.index({Slice(), Slice(), Slice(0, None, 2), Slice(1, None, 2)});
  auto x3 = p.index({Slice(), Slice(), Slice(1, None, 2), Slice(1, None, 2)});
  return reduction_(norm_(torch::cat({x0, x1, x2, x3}, -1)));
}

Swin3dImpl::Swin3dImpl(const DetModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto c = cfg.embed_dim;
  const Extent3 win{cfg.window[0], cfg.window[1], cfg.window[2]};
  layer1_ = register_module("layer1", SwinLayer3d(c, cfg.depths[0], cfg.heads[0], win, cfg.tokens(), cfg.mlp_ratio));
  merge_ = register_module("merge", PatchMerging3d(c));
  layer2_ = register_module("layer2",
                            SwinLayer3d(2 * c, cfg.depths[1], cfg.heads[1], win, cfg.merged_tokens(), cfg.mlp_ratio));
  up_proj_ = register_module("up_proj", torch::nn::Conv3d(torch::nn::Conv3dOptions(2 * c, c, 1)));
  layer3_ = register_module("layer3", SwinLayer3d(c, cfg.depths[2], cfg.heads[2], win, cfg.tokens(), cfg.mlp_ratio));
}

SwinTrace Swin3dImpl::trace(const torch::Tensor& tokens) {
  const auto t = cfg_.tokens();
  if (tokens.dim() != 5 || tokens.size(1) != cfg_.embed_dim || tokens.size(2) != t.d || tokens.size(3) != t.h ||
      tokens.size(4) != t.w) {
    throw ValidationError("token grid does not match config");
  }
  auto x = tokens.permute({0, 2, 3, 4, 1});
  auto x1 = layer1_(x);
  auto merged = merge_(x1);
  auto y2 = layer2_(merged).permute({0, 4, 1, 2, 3});
  auto up = F::interpolate(y2, F::InterpolateFuncOptions()
                                   .size(std::vector<std::int64_t>{t.d, 2 * y2.size(3), 2 * y2.size(4)})
                                   .mode(torch::kTrilinear)
                                   .align_corners(false));
  auto x2 = up_proj_(up).index({Slice(), Slice(), Slice(), Slice(0, t.h), Slice(0, t.w)}).permute({0, 2, 3, 4, 1});
  auto x3 = layer3_(x1 + x2);
  auto out = x3 + x1 + x2;

  SwinTrace tr;
  tr.layer1 = x1.permute({0, 4, 1, 2, 3});
  tr.merged = merged.permute({0, 4, 1, 2, 3});
  tr.layer2 = x2.permute({0, 4, 1, 2, 3});
  tr.output = out.permute({0, 4, 1, 2, 3}).contiguous();
  return tr;
}

torch::Tensor Swin3dImpl::forward(const torch::Tensor& tokens) { return trace(tokens).output; }

// Upsamplers ----------------------------------------------------------------

namespace {

torch::Tensor resize2d(const torch::Tensor& x, std::int64_t h, std::int64_t w) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<std::int64_t>{h, w})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

torch::Tensor crop2d(const torch::Tensor& x, std::int64_t h, std::int64_t w) {
  return x.index({Slice(), Slice(), Slice(0, h), Slice(0, w)});
}

torch::Tensor collapse_depth(torch::nn::Conv3d& conv, const torch::Tensor& tokens) { return conv(tokens).squeeze(2); }

}  // namespace

BilinearUpsamplerImpl::BilinearUpsamplerImpl(const DetModelConfig& cfg) : cfg_(cfg) {
  const auto c = cfg.embed_dim;
  const auto d = cfg.tokens().d;
  depth_conv_ = register_module("depth_conv", torch::nn::Conv3d(torch::nn::Conv3dOptions(c, c, {d, 1, 1})));
  conv_ = register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(c, 1, 3).padding(1)));
}

UpsampleOut BilinearUpsamplerImpl::forward(const torch::Tensor& tokens) {
  const auto hh = ceil_div(cfg_.height, 2), hw = ceil_div(cfg_.width, 2);
  auto x = collapse_depth(depth_conv_, tokens);
  x = crop2d(resize2d(x, 2 * x.size(2), 2 * x.size(3)), hh, hw);
  UpsampleOut out;
  out.intermediate = x.unsqueeze(2);
  auto y = conv_(x);
  out.output = crop2d(resize2d(y, 2 * hh, 2 * hw), cfg_.height, cfg_.width);
  return out;
}

ReconstructionUpsamplerImpl::ReconstructionUpsamplerImpl(const DetModelConfig& cfg) : cfg_(cfg) {
  const auto c = cfg.embed_dim;
  const auto d = cfg.tokens().d;
  auto conv3 = [](std::int64_t in, std::int64_t out) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1));
  };
  depth_conv_ = register_module("depth_conv", torch::nn::Conv3d(torch::nn::Conv3dOptions(c, c, {d, 1, 1})));
  conv_before_ = register_module("conv_before", conv3(c, c));
  up1_ = register_module("up1", conv3(c, 4 * c));
  up2_ = register_module("up2", conv3(c, 4 * c));
  conv_hr_ = register_module("conv_hr", conv3(c, c));
  conv_last_ = register_module("conv_last", conv3(c, 1));
}

UpsampleOut ReconstructionUpsamplerImpl::forward(const torch::Tensor& tokens) {
  constexpr double kSlope = 0.01;
  const auto hh = ceil_div(cfg_.height, 2), hw = ceil_div(cfg_.width, 2);
  auto x = torch::gelu(collapse_depth(depth_conv_, tokens));
  x = torch::leaky_relu(conv_before_(x), kSlope);
  x = crop2d(torch::pixel_shuffle(up1_(x), 2), hh, hw);
  UpsampleOut out;
  out.intermediate = x.unsqueeze(2);
  x = crop2d(torch::pixel_shuffle(up2_(x), 2), cfg_.height, cfg_.width);
  x = torch::leaky_relu(conv_hr_(x), kSlope);
  out.output = conv_last_(x);
  return out;
}

// Model ---------------------------------------------------------------------

DetModelImpl::DetModelImpl(const DetModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  embed_ = register_module("embed", PatchEmbed(cfg));
  swin_ = register_module("swin", Swin3d(cfg));
  if (cfg.upsampler == UpsamplerKind::kBilinear) {
    up1_ = register_module("upsampler", BilinearUpsampler(cfg));
  } else {
    up2_ = register_module("upsampler", ReconstructionUpsampler(cfg));
  }
}

UpsampleOut DetModelImpl::upsample(const torch::Tensor& tokens) {
  return up1_ ? up1_(tokens) : up2_(tokens);
}

DetTrace DetModelImpl::trace(const torch::Tensor& surface, const torch::Tensor& upper) {
  DetTrace tr;
  tr.embedded = embed_(surface, upper);
  tr.swin = swin_->trace(tr.embedded.tokens);
  tr.upsampled = upsample(tr.swin.output);
  return tr;
}

torch::Tensor DetModelImpl::forward(const torch::Tensor& surface, const torch::Tensor& upper) {
  auto e = embed_(surface, upper);
  return upsample(swin_(e.tokens)).output;
}

void DetModelImpl::zero_output_head() {
  torch::NoGradGuard guard;
  auto& head = up1_ ? up1_->head() : up2_->head();
  head->weight.zero_();
  head->bias.zero_();
}

}  // namespace precipdiff::det

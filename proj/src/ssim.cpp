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

#include "precipdiff/ssim.hpp"

#include "precipdiff/errors.hpp"
#include "precipdiff/nn.hpp"

namespace precipdiff::nn {

namespace {

namespace F = torch::nn::functional;

torch::Tensor as_nchw(const torch::Tensor& x) {
  switch (x.dim()) {
    case 2: return x.unsqueeze(0).unsqueeze(0);
    case 3: return x.unsqueeze(1);
    case 4:
      if (x.size(1) != 1) return x.reshape({x.size(0) * x.size(1), 1, x.size(2), x.size(3)});
      return x;
    default: throw ValidationError("ssim: expected a 2-D, 3-D or 4-D tensor");
  }
}

torch::Tensor gaussian_1d(const SsimOptions& opt, torch::TensorOptions to) {
  auto x = torch::arange(opt.window, to) - static_cast<double>(opt.window / 2);
  auto g = torch::exp(-(x * x) / (2.0 * opt.sigma * opt.sigma));
  return g / g.sum();
}

// Separable Gaussian filtering with zero padding.
torch::Tensor blur(const torch::Tensor& x, const torch::Tensor& g) {
  const auto w = g.size(0);
  auto row = g.view({1, 1, 1, w});
  auto col = g.view({1, 1, w, 1});
  auto y = F::conv2d(x, row, F::Conv2dFuncOptions().padding({0, w / 2}));
  return F::conv2d(y, col, F::Conv2dFuncOptions().padding({w / 2, 0}));
}

}  // namespace

torch::Tensor ssim(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& opt) {
  if (a.sizes() != b.sizes()) throw ValidationError("ssim: shape mismatch");
  if (opt.window % 2 != 1 || opt.window < 1) throw ValidationError("ssim: window must be odd");
  auto x = as_nchw(a);
  auto y = as_nchw(b);
  const auto g = gaussian_1d(opt, x.options().requires_grad(false));
  const auto norm = blur(torch::ones({1, 1, x.size(2), x.size(3)}, x.options().requires_grad(false)), g);
  auto mean = [&](const torch::Tensor& t) { return blur(t, g) / norm; };
  const double c1 = std::pow(opt.k1 * opt.dynamic_range, 2.0);
  const double c2 = std::pow(opt.k2 * opt.dynamic_range, 2.0);
  auto mx = mean(x);
  auto my = mean(y);
  auto sxx = mean(x * x) - mx * mx;
  auto syy = mean(y * y) - my * my;
  auto sxy = mean(x * y) - mx * my;
  auto num = (2.0 * mx * my + c1) * (2.0 * sxy + c2);
  auto den = (mx * mx + my * my + c1) * (sxx + syy + c2);
  return (num / den).mean();
}

double ssim(const GridField& a, const GridField& b, const SsimOptions& opt) {
  if (a.shape() != b.shape()) throw ValidationError("ssim: shape mismatch");
  auto ta = to_tensor(a, torch::kFloat64);
  auto tb = to_tensor(b, torch::kFloat64);
  const auto& g = a.grid();
  return ssim(ta.reshape({-1, g.nlat, g.nlon}), tb.reshape({-1, g.nlat, g.nlon}), opt).item<double>();
}

torch::Tensor loss_mse_ssim(const torch::Tensor& pred, const torch::Tensor& target, double lambda1, double lambda2,
                            const SsimOptions& opt) {
  if (pred.sizes() != target.sizes()) throw ValidationError("loss: shape mismatch");
  auto mse = (pred - target).pow(2).mean();
  return lambda1 * mse + lambda2 * (1.0 - ssim(pred, target, opt));
}

}  // namespace precipdiff::nn

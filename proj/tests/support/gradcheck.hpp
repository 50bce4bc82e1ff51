#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <torch/torch.h>

namespace xmodseg::test_support {

using ScalarFn = std::function<torch::Tensor(const std::vector<torch::Tensor>&)>;

/// Largest elementwise |analytic - numeric| / max(|analytic|, |numeric|) over
/// every input element, with central differences of step `h`. Inputs must be
/// double tensors. Elements where both gradients vanish count as exact.
inline double max_gradient_relative_error(const ScalarFn& f, const std::vector<torch::Tensor>& inputs,
                                          double h = 1e-4) {
  std::vector<torch::Tensor> leaves;
  for (const auto& x : inputs) leaves.push_back(x.detach().clone().set_requires_grad(true));
  const auto out = f(leaves);
  const auto analytic = torch::autograd::grad({out}, leaves, {}, false, false, true);

  torch::NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto base = inputs[k].detach().clone().contiguous();
    auto flat = base.view({-1});
    const auto a = analytic[k].defined() ? analytic[k].contiguous().view({-1}) : torch::zeros_like(flat);
    for (std::int64_t i = 0; i < flat.numel(); ++i) {
      const double x0 = flat[i].item<double>();
      auto eval = [&](double x) {
        flat[i] = x;
        auto args = inputs;
        args[k] = base;
        return f(args).item<double>();
      };
      const double numeric = (eval(x0 + h) - eval(x0 - h)) / (2.0 * h);
      flat[i] = x0;
      const double an = a[i].item<double>();
      const double scale = std::max(std::abs(an), std::abs(numeric));
      if (scale < 1e-12) continue;
      worst = std::max(worst, std::abs(an - numeric) / scale);
    }
  }
  return worst;
}

/// Standard normal draws whose distance to every kink in `kinks` exceeds `gap`,
/// so central differences never straddle a non-differentiable point.
inline torch::Tensor randn_away_from(std::vector<std::int64_t> shape, const std::vector<double>& kinks,
                                     double gap = 1e-2) {
  auto t = torch::randn(shape, torch::kFloat64);
  auto flat = t.view({-1});
  for (std::int64_t i = 0; i < flat.numel(); ++i) {
    for (double k : kinks) {
      const double v = flat[i].item<double>();
      if (std::abs(v - k) < gap) flat[i] = v + (v >= k ? 2 * gap : -2 * gap);
    }
  }
  return t;
}

}  // namespace xmodseg::test_support

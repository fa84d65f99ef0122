// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#include "icllab/optim.hpp"

#include <cmath>

#include "icllab/errors.hpp"

namespace icllab {

Adam::Adam(const ParamSet& shape_like, Hyper h) : h_(h) {
  for (const auto& nt : shape_like) {
    m_.push_back(ndiff::Tensor::zeros(nt.value.shape()));
    v_.push_back(ndiff::Tensor::zeros(nt.value.shape()));
  }
}

void Adam::step(ParamSet& params, const std::vector<ndiff::Tensor>& grads, double lr) {
  if (grads.size() != params.size() || m_.size() != params.size()) throw ShapeError("Adam: parameter count changed");
  ++t_;
  const double c1 = 1.0 - std::pow(h_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(h_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    ndiff::Tensor& p = params[k].value;
    const ndiff::Tensor& g = grads[k];
    if (g.shape() != p.shape()) throw ShapeError("Adam: gradient shape for " + params[k].name);
    double* m = m_[k].ptr();
    double* v = v_[k].ptr();
    for (std::size_t i = 0; i < p.numel(); ++i) {
      m[i] = h_.beta1 * m[i] + (1.0 - h_.beta1) * g[i];
      v[i] = h_.beta2 * v[i] + (1.0 - h_.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + h_.eps);
    }
  }
}

double warmup_lr(double peak, std::size_t warmup, std::size_t step) {
  if (warmup == 0 || step >= warmup) return peak;
  return peak * static_cast<double>(step) / static_cast<double>(warmup);
}

}  // namespace icllab

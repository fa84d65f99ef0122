// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "icllab/params.hpp"

namespace icllab {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  friend bool operator==(const AdamHyper&, const AdamHyper&) = default;
};

/// Adam with bias correction. The learning rate is supplied per step so that
/// schedules live with the caller.
class Adam {
 public:
  using Hyper = AdamHyper;

  Adam() = default;
  explicit Adam(const ParamSet& shape_like, Hyper h = {});

  void step(ParamSet& params, const std::vector<ndiff::Tensor>& grads, double lr);

  std::size_t steps_taken() const noexcept { return t_; }
  const Hyper& hyper() const noexcept { return h_; }

  friend bool operator==(const Adam&, const Adam&) = default;

 private:
  Hyper h_;
  std::size_t t_ = 0;
  std::vector<ndiff::Tensor> m_;
  std::vector<ndiff::Tensor> v_;
};

/// Linear warmup from 0 to `peak` over `warmup` steps, constant afterwards.
/// Steps are 1-based.
double warmup_lr(double peak, std::size_t warmup, std::size_t step);

}  // namespace icllab

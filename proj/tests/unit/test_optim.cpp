// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "icllab/optim.hpp"

using namespace icllab;
using ndiff::Tensor;

TEST_CASE("warmup schedule is linear then flat") {
  CHECK(warmup_lr(1e-3, 100, 0) == 0.0);
  CHECK(warmup_lr(1e-3, 100, 25) == doctest::Approx(2.5e-4).epsilon(1e-15));
  CHECK(warmup_lr(1e-3, 100, 100) == 1e-3);
  CHECK(warmup_lr(1e-3, 100, 5000) == 1e-3);
  CHECK(warmup_lr(1e-3, 0, 1) == 1e-3);
}

TEST_CASE("Adam matches a scalar reference implementation") {
  ParamSet p;
  p.add("a", Tensor::vector({1.0, -2.0}));
  p.add("b", Tensor::scalar(0.5));
  Adam opt(p);
  // Reference state for f = sum of x^2 over all entries, gradient 2x.
  double x[3] = {1.0, -2.0, 0.5}, m[3] = {}, v[3] = {};
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.05;
  for (int t = 1; t <= 25; ++t) {
    std::vector<Tensor> g{Tensor::vector({2 * p.at("a")[0], 2 * p.at("a")[1]}), Tensor::scalar(2 * p.at("b")[0])};
    opt.step(p, g, lr);
    for (int i = 0; i < 3; ++i) {
      const double gi = 2 * x[i];
      m[i] = b1 * m[i] + (1 - b1) * gi;
      v[i] = b2 * v[i] + (1 - b2) * gi * gi;
      const double mh = m[i] / (1 - std::pow(b1, t)), vh = v[i] / (1 - std::pow(b2, t));
      x[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
  CHECK(opt.steps_taken() == 25);
  CHECK(p.at("a")[0] == doctest::Approx(x[0]).epsilon(1e-13));
  CHECK(p.at("a")[1] == doctest::Approx(x[1]).epsilon(1e-13));
  CHECK(p.at("b")[0] == doctest::Approx(x[2]).epsilon(1e-13));
}

TEST_CASE("first Adam step moves every coordinate by lr against the gradient sign") {
  ParamSet p;
  p.add("w", Tensor::vector({0.0, 0.0, 0.0}));
  Adam opt(p);
  opt.step(p, {Tensor::vector({3.0, -1e-3, 40.0})}, 0.1);
  CHECK(p.at("w")[0] == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(p.at("w")[1] == doctest::Approx(0.1).epsilon(1e-4));
  CHECK(p.at("w")[2] == doctest::Approx(-0.1).epsilon(1e-6));
}

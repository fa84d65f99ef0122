// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#include "icllab/taskgen.hpp"

#include <cmath>
#include <stdexcept>

#include "icllab/errors.hpp"
#include "icllab/rng.hpp"

namespace icllab {

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

namespace {

Vec normal_vec(Rng& rng, std::size_t d) {
  Vec v(d);
  for (auto& x : v) x = rng.normal();
  return v;
}

}  // namespace

RegressionTask sample_task(std::uint64_t seed, std::size_t d, std::size_t m) {
  if (d == 0 || m == 0) throw std::invalid_argument("sample_task: d and M must be positive");
  Rng rng(seed);
  RegressionTask t;
  t.w = normal_vec(rng, d);
  t.prompt.xs.reserve(m);
  t.prompt.ys.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    t.prompt.xs.push_back(normal_vec(rng, d));
    t.prompt.ys.push_back(dot(t.w, t.prompt.xs.back()));
  }
  t.prompt.x_query = normal_vec(rng, d);
  t.y_query = dot(t.w, t.prompt.x_query);
  return t;
}

RegressionTask sample_task_at(std::uint64_t master_seed, std::uint64_t index, std::size_t d, std::size_t m) {
  return sample_task(Rng::derive_key(master_seed, {Rng::tag("task"), index}), d, m);
}

std::size_t EmbeddingMatrix::examples() const {
  return layout == Layout::concat ? cols() - 1 : (cols() - 1) / 2;
}

EmbeddingMatrix embed(const Prompt& p, Layout layout) {
  const std::size_t d = p.d(), m = p.m();
  if (p.xs.size() != m) throw ShapeError("embed: prompt has mismatched xs/ys");
  for (const auto& x : p.xs)
    if (x.size() != d) throw ShapeError("embed: feature length differs from query length");
  const std::size_t cols = layout == Layout::concat ? m + 1 : 2 * m + 1;
  ndiff::Tensor e = ndiff::Tensor::zeros({d + 1, cols});
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t xc = layout == Layout::concat ? i : 2 * i;
    const std::size_t yc = layout == Layout::concat ? i : 2 * i + 1;
    for (std::size_t r = 0; r < d; ++r) e(r, xc) = p.xs[i][r];
    e(d, yc) = p.ys[i];
  }
  for (std::size_t r = 0; r < d; ++r) e(r, cols - 1) = p.x_query[r];
  return {layout, std::move(e)};
}

Prompt decode(const EmbeddingMatrix& e) {
  const std::size_t d = e.rows() - 1, m = e.examples();
  Prompt p;
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t xc = e.layout == Layout::concat ? i : 2 * i;
    const std::size_t yc = e.layout == Layout::concat ? i : 2 * i + 1;
    Vec x(d);
    for (std::size_t r = 0; r < d; ++r) x[r] = e.data(r, xc);
    p.xs.push_back(std::move(x));
    p.ys.push_back(e.data(d, yc));
  }
  p.x_query.resize(d);
  for (std::size_t r = 0; r < d; ++r) p.x_query[r] = e.data(r, e.cols() - 1);
  return p;
}

namespace {

Vec orthogonal_direction(const Vec& w, Rng& rng) {
  const double ww = dot(w, w);
  const double target = std::sqrt(ww);
  for (;;) {
    Vec g = normal_vec(rng, w.size());
    // Two Gram-Schmidt passes keep w_perp.w at rounding level.
    for (int pass = 0; pass < 2; ++pass) {
      const double c = dot(g, w) / ww;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= c * w[i];
    }
    const double n = norm(g);
    if (n < 1e-12 * target) continue;
    for (auto& v : g) v *= target / n;
    return g;
  }
}

}  // namespace

HijackTarget make_target(const RegressionTask& task, const TargetMode& mode, std::uint64_t seed) {
  Rng rng(seed);
  const auto& xq = task.prompt.x_query;
  HijackTarget t;
  t.seed = seed;
  if (const auto* a = std::get_if<AlphaInterp>(&mode)) {
    if (!(a->alpha >= 0.0 && a->alpha <= 1.0)) throw std::invalid_argument("make_target: alpha must lie in [0, 1]");
    if (task.d() < 2) throw DegenerateDimension("make_target: no direction orthogonal to w when d = 1");
    AlphaInterp out{a->alpha, {}};
    if (norm(task.w) == 0.0) {
      out.w_perp.assign(task.d(), 0.0);
    } else {
      out.w_perp = orthogonal_direction(task.w, rng);
    }
    t.y_bad = (1.0 - out.alpha) * dot(task.w, xq) + out.alpha * dot(out.w_perp, xq);
    t.mode = std::move(out);
  } else {
    RandomW out{normal_vec(rng, task.d())};
    t.y_bad = dot(out.w_prime, xq);
    t.mode = std::move(out);
  }
  return t;
}

}  // namespace icllab

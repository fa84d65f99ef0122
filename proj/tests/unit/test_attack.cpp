// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "icllab/attack.hpp"
#include "icllab/errors.hpp"
#include "icllab/gpt.hpp"
#include "icllab/lsa.hpp"
#include "icllab/ndiff/ops.hpp"
#include "test_util.hpp"

using namespace icllab;
using namespace icllab::attack;

namespace {

// Direction a with  y_hat = c0 + y_i * (x_i . a)  for a structured LSA model,
// read off the model by probing basis vectors at row i.
Vec probe_direction(const Predictor& model, Prompt p, std::size_t i) {
  const double y = p.ys[i];
  std::fill(p.xs[i].begin(), p.xs[i].end(), 0.0);
  const double base = model.predict(p);
  Vec a(p.d());
  for (std::size_t j = 0; j < p.d(); ++j) {
    p.xs[i][j] = 1.0;
    a[j] = (model.predict(p) - base) / y;
    p.xs[i][j] = 0.0;
  }
  return a;
}

lsa::LsaPredictor unit_lsa(std::size_t d) { return lsa::LsaPredictor(lsa::LsaParams::structured_init(d, 1.0)); }

HijackTarget alpha_target(const RegressionTask& t, double alpha, std::uint64_t seed) {
  return make_target(t, AlphaInterp{alpha, {}}, seed);
}

}  // namespace

TEST_CASE("attack type names") {
  CHECK(parse_attack_type("x") == AttackType::x);
  CHECK(parse_attack_type("z-attack") == AttackType::z);
  CHECK(to_string(AttackType::y) == "y");
  CHECK_THROWS_AS(parse_attack_type("w"), std::invalid_argument);
  const AttackSpec s;
  CHECK(s.iters == 100);
  CHECK(s.lr_x == 1.0);
  CHECK(s.lr_y == 100.0);
  const AttackSpec o = AttackSpec::ols_defaults(AttackType::y, 2);
  CHECK(o.iters == 1000);
  CHECK(o.lr_x == 0.01);
  CHECK(o.lr_y == 0.01);
}

TEST_CASE("index selection") {
  const auto a = select_indices(RandomSubset{7}, 40, 5, 3);
  CHECK(a.size() == 5);
  CHECK(std::is_sorted(a.begin(), a.end()));
  CHECK(std::adjacent_find(a.begin(), a.end()) == a.end());
  CHECK(a.back() < 40);
  CHECK(select_indices(RandomSubset{7}, 40, 5, 3) == a);
  CHECK(select_indices(RandomSubset{7}, 40, 5, 4) != a);
  CHECK(select_indices(RandomSubset{7}, 4, 4, 0) == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(select_indices(Fixed{{3, 1}}, 5, 2, 0) == std::vector<std::size_t>{1, 3});
  CHECK_THROWS_AS(select_indices(RandomSubset{}, 3, 4, 0), BudgetError);
  CHECK_THROWS_AS(select_indices(Fixed{{1, 1}}, 5, 2, 0), std::invalid_argument);
  CHECK_THROWS_AS(select_indices(Fixed{{5}}, 5, 1, 0), std::invalid_argument);
}

TEST_CASE("k = 0 is a no-op and k > M is a budget error") {
  const auto model = unit_lsa(4);
  const RegressionTask t = sample_task(1, 4, 6);
  const HijackTarget target = alpha_target(t, 1.0, 2);
  AttackSpec s;
  s.k = 0;
  const AttackResult r = hijack(model, t, target, s);
  CHECK(r.perturbed == t.prompt);
  CHECK(r.best_prediction == model.predict(t.prompt));
  REQUIRE(r.tae_trace.size() == 1);
  CHECK(r.tae_final == std::pow(r.clean_prediction - target.y_bad, 2));
  s.k = 7;
  CHECK_THROWS_AS(hijack(model, t, target, s), BudgetError);
}

TEST_CASE("scope discipline and the best-iterate contract") {
  const auto model = unit_lsa(3);
  for (AttackType type : {AttackType::x, AttackType::y, AttackType::z}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const RegressionTask t = sample_task(seed, 3, 8);
      AttackSpec s;
      s.type = type;
      s.k = 2;
      s.iters = 30;
      s.lr_x = 0.1;
      s.lr_y = 0.1;
      s.index_policy = RandomSubset{seed};
      const AttackResult r = hijack(model, t, alpha_target(t, 1.0, seed), s);
      CAPTURE(to_string(type));
      CHECK_FALSE(r.diverged);
      REQUIRE(r.tae_trace.size() == s.iters + 1);
      CHECK(r.tae_final == *std::min_element(r.tae_trace.begin(), r.tae_trace.end()));
      CHECK(r.tae_final == r.tae_trace[r.best_iter]);
      CHECK(r.tae_final <= r.tae_trace[0]);
      CHECK(model.predict(r.perturbed) == doctest::Approx(r.best_prediction).epsilon(1e-12));
      CHECK(r.perturbed.x_query == t.prompt.x_query);
      for (std::size_t i = 0; i < t.m(); ++i) {
        const bool attacked = std::find(r.indices.begin(), r.indices.end(), i) != r.indices.end();
        if (!attacked || type == AttackType::y) CHECK(r.perturbed.xs[i] == t.prompt.xs[i]);
        if (!attacked || type == AttackType::x) CHECK(r.perturbed.ys[i] == t.prompt.ys[i]);
      }
    }
  }
}

TEST_CASE("x-attack on structured LSA reaches the closed-form solution") {
  const std::size_t d = 5, m = 10;
  const lsa::LsaParams params = lsa::LsaParams::structured_init(d, 1.0);
  const lsa::LsaPredictor model(params);
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const RegressionTask t = sample_task(seed, d, m);
    const std::size_t i = seed % m;
    const Vec a = probe_direction(model, t.prompt, i);
    const double y = t.prompt.ys[i];
    const double curv = 2.0 * y * y * dot(a, a);
    if (curv < 1e-6) continue;
    const HijackTarget target = alpha_target(t, 1.0, seed + 100);
    AttackSpec s;
    s.k = 1;
    s.index_policy = Fixed{{i}};
    s.lr_x = 0.5 / curv;  // contraction factor 1/2 per step along a
    const AttackResult r = hijack(model, t, target, s);
    const auto cf = lsa::closed_form_x_attack(t.prompt, params, target.y_bad, i, y);
    CHECK(r.tae_final <= 1e-4);
    for (std::size_t j = 0; j < d; ++j) CHECK(std::abs(r.perturbed.xs[i][j] - cf.x_adv[j]) <= 1e-4);
    ++checked;
  }
  CHECK(checked >= 25);
}

TEST_CASE("y-attack on structured LSA: a Newton-sized step solves it") {
  const std::size_t d = 5, m = 10;
  const lsa::LsaParams params = lsa::LsaParams::structured_init(d, 1.0);
  const lsa::LsaPredictor model(params);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const RegressionTask t = sample_task(seed, d, m);
    const std::size_t i = 0;
    const double c = dot(t.prompt.xs[i], probe_direction(model, t.prompt, i));
    if (std::abs(c) < 1e-3) continue;
    const HijackTarget target = alpha_target(t, 0.5, seed);
    AttackSpec s;
    s.type = AttackType::y;
    s.k = 1;
    s.index_policy = Fixed{{i}};
    s.lr_y = 1.0 / (2.0 * c * c);
    const AttackResult r = hijack(model, t, target, s);
    CHECK(r.tae_final <= 1e-6);
    CHECK(r.tae_trace[1] <= 1e-6);
    const auto cf = lsa::closed_form_y_attack(t.prompt, params, target.y_bad, i);
    CHECK(r.perturbed.ys[i] == doctest::Approx(cf.y_adv).epsilon(1e-6));
  }
}

TEST_CASE("z-attack moves both halves and lowers the targeted error") {
  const auto model = unit_lsa(4);
  const RegressionTask t = sample_task(9, 4, 8);
  AttackSpec s;
  s.type = AttackType::z;
  s.k = 1;
  s.lr_x = 0.05;
  s.lr_y = 0.05;
  s.iters = 200;
  s.index_policy = Fixed{{2}};
  const AttackResult r = hijack(model, t, alpha_target(t, 1.0, 4), s);
  CHECK(r.tae_final < 1e-3 * r.tae_trace[0]);
  CHECK(r.perturbed.ys[2] != t.prompt.ys[2]);
}

TEST_CASE("batched attack equals per-prompt attacks") {
  const auto model = unit_lsa(3);
  std::vector<RegressionTask> tasks;
  std::vector<double> y_bad;
  for (std::uint64_t s = 0; s < 6; ++s) {
    tasks.push_back(sample_task_at(3, s, 3, 7));
    y_bad.push_back(alpha_target(tasks.back(), 1.0, s).y_bad);
  }
  AttackSpec s;
  s.k = 2;
  s.iters = 20;
  s.index_policy = RandomSubset{5};
  const auto batch = hijack_batch(model, tasks, y_bad, s, 10);
  for (std::size_t b = 0; b < tasks.size(); ++b) {
    const auto single = hijack_batch(model, std::span(tasks).subspan(b, 1), std::span(y_bad).subspan(b, 1), s, 10 + b);
    CHECK(single[0].indices == batch[b].indices);
    CHECK(single[0].tae_final == doctest::Approx(batch[b].tae_final).epsilon(1e-10).scale(1e-14));
  }
}

TEST_CASE("diverging attacks freeze and keep the best finite iterate") {
  const auto model = unit_lsa(3);
  const RegressionTask t = sample_task(2, 3, 6);
  AttackSpec s;
  s.type = AttackType::y;
  s.k = 1;
  s.iters = 5000;
  s.lr_y = 1e6;
  s.index_policy = Fixed{{0}};
  const AttackResult r = hijack(model, t, alpha_target(t, 1.0, 1), s);
  CHECK(r.diverged);
  CHECK(std::isfinite(r.tae_final));
  CHECK(r.tae_trace.size() < s.iters + 1);
  CHECK(r.tae_final <= r.tae_trace[0]);
}

TEST_CASE("attacks run through the GPT model") {
  gpt::GptConfig c;
  c.n_layers = 1;
  c.n_heads = 2;
  c.n_embd = 8;
  c.d = 3;
  c.max_positions = 16;
  const gpt::GptPredictor model(c, gpt::init_params(c));
  const RegressionTask t = sample_task(4, 3, 5);
  AttackSpec s;
  s.type = AttackType::z;
  s.k = 5;
  s.iters = 10;
  const AttackResult r = hijack(model, t, alpha_target(t, 1.0, 0), s);
  CHECK(r.tae_trace.size() == 11);
  CHECK(r.tae_final < r.tae_trace[0]);
}

// ---------------------------------------------------------------------------

TEST_CASE("ols_fit: identity design, exact interpolation, hand 2x2") {
  const Vec y{1.5, -2.0, 0.25};
  CHECK(ols_fit(ndiff::Tensor::identity(3), y).w_hat == Vec{1.5, -2.0, 0.25});

  Rng rng(3);
  const std::size_t d = 6;
  const ndiff::Tensor x = testing::normal_tensor(rng, {2 * d, d});
  Vec w(d);
  for (auto& v : w) v = rng.normal();
  Vec yy(2 * d);
  for (std::size_t i = 0; i < 2 * d; ++i) yy[i] = dot(w, std::span<const double>(x.ptr() + i * d, d));
  const Vec fit = ols_fit(x, yy).w_hat;
  for (std::size_t j = 0; j < d; ++j) CHECK(std::abs(fit[j] - w[j]) <= 1e-10);

  // X = [[1,0],[1,1],[1,2]], Y = [1,2,2]: X^T X = [[3,3],[3,5]], X^T Y = [5,6],
  // w = [7/6, 1/2], prediction at (1, 3) is 8/3.
  const auto hand = ols_fit(ndiff::Tensor::matrix({{1, 0}, {1, 1}, {1, 2}}), Vec{1, 2, 2});
  CHECK(hand.w_hat[0] == doctest::Approx(7.0 / 6.0).epsilon(1e-14));
  CHECK(hand.w_hat[1] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(hand.predict({1, 3}) == doctest::Approx(8.0 / 3.0).epsilon(1e-14));

  const ndiff::Tensor xr = testing::normal_tensor(rng, {15, 5});
  Vec yr(15);
  for (auto& v : yr) v = rng.normal();
  const Vec a = ols_fit(xr, yr).w_hat, b = ols_explicit_inverse(xr, yr);
  for (std::size_t j = 0; j < 5; ++j) CHECK(a[j] == doctest::Approx(b[j]).epsilon(1e-9));
}

TEST_CASE("ols_fit rejects under-determined and ill-conditioned designs") {
  CHECK_THROWS_AS(ols_fit(ndiff::Tensor::zeros({2, 3}), Vec{1, 2}), IllConditioned);
  CHECK_THROWS_AS(ols_fit(ndiff::Tensor::matrix({{1, 1}, {1, 1}, {2, 2}}), Vec{1, 2, 3}), IllConditioned);
  CHECK_THROWS_AS(ols_fit(ndiff::Tensor::matrix({{1, 0}, {0, 1e-6}}), Vec{1, 2}), IllConditioned);
}

TEST_CASE("OlsPredictor matches the fitted model and differentiates") {
  Rng rng(8);
  const ndiff::Tensor x = testing::normal_tensor(rng, {7, 3});
  const ndiff::Tensor y = testing::normal_tensor(rng, {7, 1});
  const ndiff::Tensor q = testing::normal_tensor(rng, {1, 3});
  const OlsPredictor ols;
  ndiff::Graph g;
  const double via_graph = ols.predict_query(g, g.constant(x), g.constant(y), q, 1, 7).value().item();
  const Vec yv(y.data().begin(), y.data().end());
  CHECK(via_graph == doctest::Approx(ols_fit(x, yv).predict({q[0], q[1], q[2]})).epsilon(1e-12));
  auto fn = [&](ndiff::Graph& gg, const std::vector<ndiff::Var>& v) {
    return ndiff::sum(ols.predict_query(gg, v[0], v[1], q, 1, 7));
  };
  CHECK(testing::check_gradients(fn, {x, y}, 1e-6, 1e-5).failures == 0);
}

TEST_CASE("OLS attacks: k = 0 no-op and all-rows x-attack") {
  int hit = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const RegressionTask t = sample_task(seed, 5, 10);
    const PromptBatch pb = PromptBatch::from(std::span<const Prompt>(&t.prompt, 1));
    const HijackTarget target = alpha_target(t, 1.0, seed);
    AttackSpec s = AttackSpec::ols_defaults(AttackType::x, 0);
    const AttackResult none = ols_attack(pb.xs, t.prompt.ys, t.prompt.x_query, target, s);
    CHECK(none.best_prediction == doctest::Approx(ols_fit(t.prompt).predict(t.prompt.x_query)).epsilon(1e-12));
    CHECK(none.perturbed == t.prompt);

    s = AttackSpec::ols_defaults(AttackType::x, 10);
    s.init = InitPolicy::keep_original;
    const AttackResult all = ols_attack(pb.xs, t.prompt.ys, t.prompt.x_query, target, s);
    CHECK(all.tae_final <= all.tae_trace[0]);
    hit += all.tae_final <= 1e-3;
  }
  CHECK(hit == 20);
}

// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#include <chrono>
#include <cmath>

#include "doctest.h"
#include "icllab/errors.hpp"
#include "icllab/lsa.hpp"
#include "icllab/ndiff/ops.hpp"
#include "test_util.hpp"

using namespace icllab;
using namespace icllab::lsa;
using ndiff::Tensor;

namespace {

// W = I, M = 2: clean pair ((1,0),1) stays, the adversarial pair sits at index 1.
Prompt hand_prompt(Vec x_adv, double y_adv) { return Prompt{{{1, 0}, std::move(x_adv)}, {1, y_adv}, {0, 1}}; }

LsaParams identity_model() { return LsaParams::block_structured(Tensor::identity(2), 1.0); }

// Direct summation of E + W_PV E (E^T W_KQ E) / N without any matrix helper.
Tensor forward_by_loops(const Tensor& e, const LsaParams& p) {
  const std::size_t r = e.rows(), c = e.cols();
  const double n = static_cast<double>(c - 1);
  Tensor out = e;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      double acc = 0.0;
      for (std::size_t a = 0; a < r; ++a)
        for (std::size_t k = 0; k < c; ++k)
          for (std::size_t b = 0; b < r; ++b)
            for (std::size_t q = 0; q < r; ++q) acc += p.w_pv(i, a) * e(a, k) * e(b, k) * p.w_kq(b, q) * e(q, j);
      out(i, j) += acc / n;
    }
  return out;
}

LsaParams random_params(Rng& rng, std::size_t d) {
  return {testing::normal_tensor(rng, {d + 1, d + 1}), testing::normal_tensor(rng, {d + 1, d + 1})};
}

LsaParams random_structured(Rng& rng, std::size_t d) {
  return LsaParams::block_structured(testing::normal_tensor(rng, {d, d}), 0.5 + rng.uniform());
}

}  // namespace

TEST_CASE("lsa_forward basics") {
  Rng rng(1);
  EmbeddingMatrix e = embed(sample_task(3, 4, 6), Layout::concat);
  LsaParams p = random_params(rng, 4);
  p.w_pv = Tensor::zeros({5, 5});
  CHECK(lsa_forward(e, p) == e.data);

  LsaParams q = random_params(rng, 4);
  CHECK(lsa_forward(e, q).shape() == e.data.shape());
  CHECK_THROWS_AS(lsa_forward(embed(sample_task(3, 4, 6), Layout::interleave), q), LayoutError);
}

TEST_CASE("lsa_forward d=1 N=1 all-ones matches hand expansion") {
  // E = [[a, b], [c, 0]], all-ones weights: W E has both rows equal to column sums s_j,
  // E^T 1 1^T E = s s^T, so out = E + (s . s) * [s; s]^T-shaped broadcast.
  EmbeddingMatrix e{Layout::concat, Tensor::matrix({{2, 3}, {5, 0}})};
  LsaParams ones{Tensor::filled({2, 2}, 1.0), Tensor::filled({2, 2}, 1.0)};
  const double s0 = 7, s1 = 3;  // column sums
  const double ss = s0 * s0 + s1 * s1;
  Tensor out = lsa_forward(e, ones);
  CHECK(out(0, 0) == doctest::Approx(2 + ss * s0));
  CHECK(out(0, 1) == doctest::Approx(3 + ss * s1));
  CHECK(out(1, 0) == doctest::Approx(5 + ss * s0));
  CHECK(out(1, 1) == doctest::Approx(0 + ss * s1));
  CHECK(out == forward_by_loops(e.data, ones));
}

TEST_CASE("lsa_predict: zero params, hand example, path consistency") {
  CHECK(lsa_predict(embed(sample_task(1, 3, 4), Layout::concat), LsaParams::zeros(3)) == 0.0);
  for (double y_adv : {-2.0, 0.0, 3.0, 10.0}) {
    EmbeddingMatrix e = embed(hand_prompt({1, 1}, y_adv), Layout::concat);
    CHECK(lsa_predict(e, identity_model()) == doctest::Approx(y_adv / 2.0).epsilon(1e-14));
  }
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const std::size_t d = 1 + i % 5;
    EmbeddingMatrix e = embed(sample_task(i, d, 2 + i % 7), Layout::concat);
    LsaParams p = random_params(rng, d);
    const Tensor out = lsa_forward(e, p);
    const double full = out(d, e.cols() - 1);
    CHECK(lsa_predict(e, p) == full);
    CHECK(std::abs(lsa_predict_expanded(e, p) - full) <= 1e-12 * std::max(1.0, std::abs(full)));
    CHECK(std::abs(forward_by_loops(e.data, p)(d, e.cols() - 1) - full) <= 1e-12 * std::max(1.0, std::abs(full)));
  }
}

TEST_CASE("LsaPredictor agrees with lsa_predict and its gradients check out") {
  Rng rng(4);
  LsaParams p = random_params(rng, 3);
  LsaPredictor model(p);
  std::vector<Prompt> prompts;
  for (int i = 0; i < 5; ++i) prompts.push_back(sample_task(i, 3, 4).prompt);
  auto preds = model.predict(prompts);
  for (int i = 0; i < 5; ++i)
    CHECK(preds[i] == doctest::Approx(lsa_predict(embed(prompts[i], Layout::concat), p)).epsilon(1e-12));

  PromptBatch pb = PromptBatch::from(prompts);
  auto fn = [&](ndiff::Graph& g, const std::vector<ndiff::Var>& v) {
    return ndiff::sum(ndiff::square(model.predict_query(g, v[0], v[1], pb.x_query, pb.batch, pb.m)));
  };
  CHECK(testing::check_gradients(fn, {pb.xs, pb.ys}).failures == 0);
}

TEST_CASE("batched training loss equals the forward pass") {
  Rng rng(6);
  LsaParams p = random_params(rng, 3);
  std::vector<RegressionTask> tasks;
  for (int i = 0; i < 7; ++i) tasks.push_back(sample_task(100 + i, 3, 5));
  ndiff::Graph g;
  const double loss = lsa_batch_loss(g, g.constant(p.w_pv), g.constant(p.w_kq), tasks).value().item();
  double ref = 0.0;
  for (const auto& t : tasks) {
    const double e = lsa_predict(embed(t, Layout::concat), p) - t.y_query;
    ref += 0.5 * e * e;
  }
  CHECK(loss == doctest::Approx(ref / 7.0).epsilon(1e-12));
}

TEST_CASE("train_lsa: zero init is a fixed point") {
  TrainLsaConfig cfg;
  cfg.steps = 50;
  cfg.batch = 16;
  cfg.init_scale = 0.0;
  cfg.log_every = 10;
  cfg.keep_snapshots = true;
  auto res = train_lsa(cfg);
  for (const auto& snap : res.snapshots) {
    CHECK(snap.w_pv == Tensor::zeros({6, 6}));
    CHECK(snap.w_kq == Tensor::zeros({6, 6}));
  }
}

TEST_CASE("train_lsa is deterministic and diverges loudly") {
  TrainLsaConfig cfg;
  cfg.steps = 200;
  cfg.batch = 32;
  cfg.log_every = 50;
  auto a = train_lsa(cfg);
  auto b = train_lsa(cfg);
  CHECK(a.params.w_pv == b.params.w_pv);
  CHECK(a.params.w_kq == b.params.w_kq);
  CHECK(a.trace.size() == 4);

  TrainLsaConfig bad = cfg;
  bad.init_scale = 3.0;
  bad.lr = 10.0;
  CHECK_THROWS_AS(train_lsa(bad), DivergenceError);
}

TEST_CASE("extract_attack_matrix") {
  Rng rng(8);
  LsaParams s = random_structured(rng, 4);
  AttackMatrix am = extract_attack_matrix(s);
  CHECK(am.off_block_norm_ratio == 0.0);
  CHECK(am.structured);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(am.w(i, j) == s.w_kq(i, j) * s.w22_pv());

  for (int i = 0; i < 20; ++i) CHECK_FALSE(extract_attack_matrix(random_params(rng, 4), 1e-3).structured);
}

TEST_CASE("closed-form attacks: hand examples") {
  const Prompt clean = hand_prompt({1, 1}, 0.0);
  LsaParams id = identity_model();

  auto ya = closed_form_y_attack(clean, id, 2.0, 1);
  CHECK(ya.y_adv == doctest::Approx(4.0));
  CHECK(lsa_predict(embed(apply_attack(clean, ya), Layout::concat), id) == doctest::Approx(2.0));

  auto xa = closed_form_x_attack(clean, id, 2.0, 1, 1.0);
  CHECK(xa.x_adv[0] == doctest::Approx(0.0));
  CHECK(xa.x_adv[1] == doctest::Approx(4.0));

  auto za = closed_form_z_attack(clean, id, 2.0, 1);
  CHECK(za.y_adv == doctest::Approx(2.0));
  CHECK(za.x_adv[0] == doctest::Approx(0.0));
  CHECK(za.x_adv[1] == doctest::Approx(2.0));
  CHECK(lsa_predict(embed(apply_attack(clean, za), Layout::concat), id) == doctest::Approx(2.0));

  // y_bad equal to the contribution of the untouched example -> v = 0.
  auto zero = closed_form_z_attack(clean, id, 0.0, 1);
  CHECK(zero.y_adv == 1.0);
  CHECK(zero.x_adv == Vec{0.0, 0.0});
  auto xzero = closed_form_x_attack(clean, id, 0.0, 1, 2.0);
  CHECK(xzero.x_adv == Vec{0.0, 0.0});
}

TEST_CASE("closed-form attacks: cancellation, errors") {
  Rng rng(10);
  LsaParams p = random_structured(rng, 4);
  Prompt pr = sample_task(12, 4, 6).prompt;
  const double clean = lsa_predict(embed(pr, Layout::concat), p);
  auto ya = closed_form_y_attack(pr, p, clean, 2, KeepOriginal{});
  CHECK(ya.y_adv == doctest::Approx(pr.ys[2]).epsilon(1e-10));

  CHECK_THROWS_AS(closed_form_x_attack(pr, p, 1.0, 0, 0.0), ZeroLabel);
  CHECK_THROWS_AS(closed_form_y_attack(pr, random_params(rng, 4), 1.0, 0), StructureError);
  CHECK_THROWS_AS(closed_form_z_attack(pr, LsaParams::zeros(4), 1.0, 0), DegenerateDirection);
  Prompt orth = hand_prompt({1, 0}, 0.0);  // x_adv^T W x_q = 0
  CHECK_THROWS_AS(closed_form_y_attack(orth, identity_model(), 1.0, 1), DegenerateDirection);
}

TEST_CASE("property: closed-form attacks are exact and position invariant") {
  Rng rng(11);
  int n = 0;
  for (int i = 0; i < 500; ++i) {
    const std::size_t d = 2 + i % 5, m = 2 + i % 9;
    LsaParams p = random_structured(rng, d);
    RegressionTask t = sample_task(1000 + i, d, m);
    const double y_bad = 5.0 * rng.normal();
    const double tol = 1e-8 * std::max(1.0, std::abs(y_bad));
    const std::size_t idx = i % m;
    auto pred = [&](const ClosedFormAttack& a) { return lsa_predict(embed(apply_attack(t.prompt, a), Layout::concat), p); };
    auto ya = closed_form_y_attack(t.prompt, p, y_bad, idx, FreshGaussian{std::uint64_t(i)});
    auto xa = closed_form_x_attack(t.prompt, p, y_bad, idx, 1.0 + rng.uniform());
    auto za = closed_form_z_attack(t.prompt, p, y_bad, idx);
    CHECK(std::abs(pred(ya) - y_bad) <= tol);
    CHECK(std::abs(pred(xa) - y_bad) <= tol);
    CHECK(std::abs(pred(za) - y_bad) <= tol);
    CHECK(std::abs(norm(za.x_adv) - std::abs(za.y_adv)) <= 1e-12 * std::max(1.0, std::abs(za.y_adv)));
    ++n;
  }
  CHECK(n == 500);

  // Same (x_adv, y_adv) at index 0 vs index M-1 gives the same prediction.
  LsaParams p = random_structured(rng, 3);
  RegressionTask t = sample_task(4, 3, 6);
  std::swap(t.prompt.xs[0], t.prompt.xs[5]);
  std::swap(t.prompt.ys[0], t.prompt.ys[5]);
  RegressionTask u = sample_task(4, 3, 6);
  ClosedFormAttack a{0, {0.3, -1.0, 2.0}, 1.7};
  ClosedFormAttack b{5, a.x_adv, a.y_adv};
  const double pa = lsa_predict(embed(apply_attack(t.prompt, a), Layout::concat), p);
  const double pb = lsa_predict(embed(apply_attack(u.prompt, b), Layout::concat), p);
  CHECK(pa == doctest::Approx(pb).epsilon(1e-12));
}

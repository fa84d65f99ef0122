// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"
#include "icllab/advtrain.hpp"
#include "icllab/errors.hpp"

using namespace icllab;
using namespace icllab::advtrain;

namespace {

AdvTrainConfig tiny_cfg() {
  AdvTrainConfig c;
  c.model.n_layers = 1;
  c.model.n_heads = 2;
  c.model.n_embd = 8;
  c.model.d = 3;
  c.model.max_positions = 16;
  c.model.curriculum = true;
  c.hp.lr = 1e-3;
  c.hp.warmup = 2;
  c.hp.batch = 4;
  c.hp.n = 5;
  c.t1 = 4;
  c.t2 = 3;
  c.seed = 12;
  return c;
}

}  // namespace

TEST_CASE("config defaults and validation") {
  const AdvTrainConfig d = AdvTrainConfig::desk();
  CHECK(d.inner_steps == 5);
  CHECK(d.k_train == 1);
  CHECK(d.t1 == 20000);
  CHECK(d.t2 == 5000);
  CHECK(d.mix_fraction == 1.0);
  const AdvTrainConfig ft = AdvTrainConfig::paper_scale(Mode::finetune);
  CHECK(ft.t1 == 500000);
  CHECK(ft.t2 == 100000);
  const AdvTrainConfig pt = AdvTrainConfig::paper_scale(Mode::pretrain);
  CHECK(pt.t1 == 0);
  CHECK(pt.t2 == 500000);
  CHECK(parse_mode("A-PT") == Mode::pretrain);
  CHECK(to_string(Mode::finetune) == "A-FT");
  CHECK_THROWS_AS(parse_mode("A-XX"), std::invalid_argument);

  AdvTrainConfig bad = tiny_cfg();
  bad.k_train = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tiny_cfg();
  bad.mode = Mode::pretrain;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tiny_cfg();
  bad.k_train = 6;
  CHECK_THROWS_AS(bad.validate(), BudgetError);
}

TEST_CASE("adversarial prompts touch only k examples") {
  const AdvTrainConfig c = tiny_cfg();
  const gpt::GptPredictor model(c.model, gpt::init_params(c.model));
  const RegressionTask t = sample_task(3, 3, 5);
  CHECK(build_adv_prompt(model, t, attack::AttackType::x, 1, 0, 9) == t);
  for (attack::AttackType type : {attack::AttackType::x, attack::AttackType::y, attack::AttackType::z}) {
    const RegressionTask adv = build_adv_prompt(model, t, type, 3, 5, 9);
    CHECK(adv.w == t.w);
    CHECK(adv.y_query == t.y_query);
    CHECK(adv.prompt.x_query == t.prompt.x_query);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < t.m(); ++i)
      changed += adv.prompt.xs[i] != t.prompt.xs[i] || adv.prompt.ys[i] != t.prompt.ys[i];
    CHECK(changed >= 1);
    CHECK(changed <= 3);
    if (type == attack::AttackType::x) CHECK(adv.prompt.ys == t.prompt.ys);
    if (type == attack::AttackType::y) CHECK(adv.prompt.xs == t.prompt.xs);
  }
  CHECK(build_adv_prompt(model, t, attack::AttackType::z, 2, 5, 9) ==
        build_adv_prompt(model, t, attack::AttackType::z, 2, 5, 9));
}

TEST_CASE("A-FT with T2 = 0 is bit-identical to standard training") {
  AdvTrainConfig c = tiny_cfg();
  c.t2 = 0;
  gpt::GptConfig m = c.model;
  m.seed = c.seed;
  gpt::TrainHp hp = c.hp;
  hp.steps = c.t1;
  const auto standard = gpt::train_gpt(m, hp);
  const auto adv = adversarial_train(c);
  CHECK(adv.params == standard.params);
  REQUIRE(adv.trace.size() == standard.trace.size());
  for (std::size_t i = 0; i < adv.trace.size(); ++i) CHECK(adv.trace[i].loss == standard.trace[i].loss);
}

TEST_CASE("mix fraction 0 reduces to clean training without curriculum") {
  AdvTrainConfig c = tiny_cfg();
  c.model.curriculum = false;
  c.mix_fraction = 0.0;
  gpt::GptConfig m = c.model;
  m.seed = c.seed;
  gpt::TrainHp hp = c.hp;
  hp.steps = c.t1 + c.t2;
  CHECK(adversarial_train(c).params == gpt::train_gpt(m, hp).params);
  c.mix_fraction = 1.0;
  CHECK_FALSE(adversarial_train(c).params == gpt::train_gpt(m, hp).params);
}

TEST_CASE("inner attacks run against the live parameters") {
  AdvTrainConfig c = tiny_cfg();
  c.record_fingerprints = true;
  gpt::GptConfig m = c.model;
  m.seed = c.seed;
  gpt::TrainHp hp = c.hp;
  hp.steps = c.t1;
  gpt::Trainer tr(m, hp);
  for (std::size_t s = 0; s < c.t1; ++s) tr.step(tr.sample_batch(true));
  std::uint64_t prev = 0;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::uint64_t live = tr.params().fingerprint();
    const AdvStepRecord r = adversarial_step(tr, c);
    CHECK(r.adversarial);
    CHECK(r.step == c.t1 + s + 1);
    CHECK(r.params_before == live);
    CHECK(r.attacked_model == live);
    CHECK(r.attacked_model != prev);
    prev = r.attacked_model;
  }
}

TEST_CASE("adversarial training is deterministic for every mode and attack") {
  for (Mode mode : {Mode::pretrain, Mode::finetune}) {
    for (attack::AttackType type : {attack::AttackType::x, attack::AttackType::y, attack::AttackType::z}) {
      AdvTrainConfig c = tiny_cfg();
      c.mode = mode;
      if (mode == Mode::pretrain) c.t1 = 0;
      c.attack_type = type;
      c.k_train = 3;
      const auto a = adversarial_train(c);
      const auto b = adversarial_train(c);
      CHECK(a.params == b.params);
      CHECK(a.trace.size() == c.t1 + c.t2);
      CHECK(a.trace.back().adversarial);
      CHECK(a.params.all_finite());
    }
  }
}

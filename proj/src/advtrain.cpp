// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#include "icllab/advtrain.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "icllab/errors.hpp"
#include "icllab/rng.hpp"

namespace icllab::advtrain {

std::string to_string(Mode m) { return m == Mode::pretrain ? "A-PT" : "A-FT"; }

Mode parse_mode(std::string_view s) {
  if (s == "A-PT" || s == "a-pt" || s == "pretrain") return Mode::pretrain;
  if (s == "A-FT" || s == "a-ft" || s == "finetune") return Mode::finetune;
  throw std::invalid_argument("unknown adversarial training mode '" + std::string(s) + "' (expected A-PT or A-FT)");
}

AdvTrainConfig AdvTrainConfig::desk() { return {}; }

AdvTrainConfig AdvTrainConfig::paper_scale(Mode mode) {
  AdvTrainConfig c;
  c.mode = mode;
  c.model = gpt::GptConfig::paper_scale();
  c.hp = gpt::TrainHp::paper_scale();
  if (mode == Mode::pretrain) {
    c.t1 = 0;
    c.t2 = 500000;
  } else {
    c.t1 = 500000;
    c.t2 = 100000;
  }
  return c;
}

void AdvTrainConfig::validate() const {
  if (k_train == 0) throw std::invalid_argument("AdvTrainConfig: k_train must be at least 1");
  if (k_train > hp.n) throw BudgetError("AdvTrainConfig: k_train exceeds N");
  if (mode == Mode::pretrain && t1 != 0) throw std::invalid_argument("AdvTrainConfig: A-PT has no standard phase (T1 = 0)");
  if (!(mix_fraction >= 0.0 && mix_fraction <= 1.0)) throw std::invalid_argument("AdvTrainConfig: mix_fraction in [0, 1]");
  if (!(lr_x > 0.0) || !(lr_y > 0.0)) throw std::invalid_argument("AdvTrainConfig: inner step sizes must be positive");
  model.validate();
}

std::vector<RegressionTask> build_adv_batch(const gpt::GptPredictor& model, std::span<const RegressionTask> tasks,
                                            attack::AttackType type, std::size_t k_train, std::size_t inner_steps,
                                            std::uint64_t seed, double lr_x, double lr_y) {
  std::vector<RegressionTask> out(tasks.begin(), tasks.end());
  if (inner_steps == 0 || tasks.empty()) return out;
  std::vector<double> y_bad(tasks.size());
  for (std::size_t b = 0; b < tasks.size(); ++b)
    y_bad[b] = make_target(tasks[b], RandomW{}, Rng::derive_key(seed, {Rng::tag("adv-target"), b})).y_bad;
  attack::AttackSpec spec;
  spec.type = type;
  spec.k = k_train;
  spec.iters = inner_steps;
  spec.lr_x = lr_x;
  spec.lr_y = lr_y;
  spec.index_policy = attack::RandomSubset{Rng::derive_key(seed, {Rng::tag("adv-index")})};
  const auto res = attack::hijack_batch(model, tasks, y_bad, spec);
  for (std::size_t b = 0; b < tasks.size(); ++b) out[b].prompt = res[b].perturbed;
  return out;
}

RegressionTask build_adv_prompt(const gpt::GptPredictor& model, const RegressionTask& task, attack::AttackType type,
                                std::size_t k_train, std::size_t inner_steps, std::uint64_t seed) {
  return build_adv_batch(model, std::span<const RegressionTask>(&task, 1), type, k_train, inner_steps, seed)[0];
}

AdvStepRecord adversarial_step(gpt::Trainer& trainer, const AdvTrainConfig& cfg) {
  const std::size_t step = trainer.steps_done() + 1;
  std::vector<RegressionTask> batch = trainer.sample_batch(false);
  // Perturb the first round(mix * B) slots; the attack sees the live parameters.
  const auto n_adv = static_cast<std::size_t>(std::llround(cfg.mix_fraction * static_cast<double>(batch.size())));
  AdvStepRecord rec;
  rec.adversarial = true;
  const gpt::GptPredictor snapshot(trainer.config(), trainer.params());
  if (cfg.record_fingerprints) {
    rec.params_before = trainer.params().fingerprint();
    rec.attacked_model = snapshot.params().fingerprint();
  }
  if (n_adv > 0) {
    const auto adv = build_adv_batch(snapshot, std::span<const RegressionTask>(batch).first(n_adv), cfg.attack_type,
                                     cfg.k_train, cfg.inner_steps,
                                     Rng::derive_key(cfg.seed, {Rng::tag("adv-step"), step}), cfg.lr_x, cfg.lr_y);
    std::copy(adv.begin(), adv.end(), batch.begin());
  }
  rec.loss = trainer.step(batch);
  rec.step = trainer.steps_done();
  rec.lr = trainer.trace().back().lr;
  return rec;
}

namespace {

void run_adversarial(gpt::Trainer& tr, const AdvTrainConfig& cfg, AdvTrainResult& out) {
  for (std::size_t s = 0; s < cfg.t2; ++s) out.trace.push_back(adversarial_step(tr, cfg));
}

}  // namespace

AdvTrainResult adversarial_train(const AdvTrainConfig& cfg) {
  cfg.validate();
  gpt::GptConfig model = cfg.model;
  model.seed = cfg.seed;
  gpt::TrainHp hp = cfg.hp;
  hp.steps = cfg.mode == Mode::pretrain ? cfg.t2 : cfg.t1;
  if (hp.steps == 0) hp.steps = 1;  // curriculum horizon only
  gpt::Trainer tr(model, hp);
  AdvTrainResult out;
  for (std::size_t s = 0; s < cfg.t1; ++s) {
    tr.step(tr.sample_batch(true));
    const auto& r = tr.trace().back();
    out.trace.push_back({r.step, r.loss, r.lr, false, 0, 0});
  }
  run_adversarial(tr, cfg, out);
  out.params = tr.params();
  return out;
}

AdvTrainResult adversarial_finetune(gpt::Trainer& base, const AdvTrainConfig& cfg) {
  cfg.validate();
  if (!(base.config().d == cfg.model.d)) throw ShapeError("adversarial_finetune: base model dimension differs");
  AdvTrainResult out;
  run_adversarial(base, cfg, out);
  out.params = base.params();
  return out;
}

}  // namespace icllab::advtrain

// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "icllab/attack.hpp"
#include "icllab/gpt.hpp"

namespace icllab::advtrain {

enum class Mode { pretrain, finetune };

/// "A-PT" / "A-FT".
std::string to_string(Mode m);
Mode parse_mode(std::string_view s);

struct AdvTrainConfig {
  Mode mode = Mode::finetune;
  attack::AttackType attack_type = attack::AttackType::x;
  std::size_t k_train = 1;
  std::size_t inner_steps = 5;
  /// Standard steps before the adversarial phase; must be 0 for A-PT.
  std::size_t t1 = 20000;
  /// Adversarial steps.
  std::size_t t2 = 5000;
  gpt::GptConfig model = gpt::GptConfig::desk();
  /// lr, warmup, batch and N of the base run. steps is ignored: T1 sets the
  /// curriculum horizon of the standard phase.
  gpt::TrainHp hp = gpt::TrainHp::desk();
  std::uint64_t seed = 0;
  /// Share of each adversarial batch that is perturbed; the rest stays clean.
  double mix_fraction = 1.0;
  /// Inner-attack step sizes.
  double lr_x = 1.0;
  double lr_y = 100.0;
  /// Record the parameter fingerprint each inner attack ran against.
  bool record_fingerprints = false;

  static AdvTrainConfig desk();
  static AdvTrainConfig paper_scale(Mode mode);
  void validate() const;
};

struct AdvStepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  bool adversarial = false;
  /// Fingerprint of the parameters before this step (when recorded).
  std::uint64_t params_before = 0;
  /// Fingerprint of the model the inner attack used (when recorded).
  std::uint64_t attacked_model = 0;
};

struct AdvTrainResult {
  ParamSet params;
  std::vector<AdvStepRecord> trace;
};

/// Hijacks `k_train` random examples of each task towards a RandomW target,
/// with `inner_steps` attack iterations against `model`. Slot b uses
/// target/index streams keyed by (seed, b). inner_steps = 0 returns the
/// tasks unchanged.
std::vector<RegressionTask> build_adv_batch(const gpt::GptPredictor& model, std::span<const RegressionTask> tasks,
                                            attack::AttackType type, std::size_t k_train, std::size_t inner_steps,
                                            std::uint64_t seed, double lr_x = 1.0, double lr_y = 100.0);

RegressionTask build_adv_prompt(const gpt::GptPredictor& model, const RegressionTask& task, attack::AttackType type,
                                std::size_t k_train, std::size_t inner_steps, std::uint64_t seed);

/// One adversarial step on `trainer`: perturbs the next clean batch against
/// the current parameters, then takes a standard next-token step on it.
AdvStepRecord adversarial_step(gpt::Trainer& trainer, const AdvTrainConfig& cfg);

/// A-PT: t2 adversarial steps from fresh parameters. A-FT: t1 standard steps
/// (curriculum as configured) then t2 adversarial steps without curriculum.
AdvTrainResult adversarial_train(const AdvTrainConfig& cfg);

/// A-FT from an existing trainer (for example a finished base run); the
/// optimiser state carries over.
AdvTrainResult adversarial_finetune(gpt::Trainer& base, const AdvTrainConfig& cfg);

}  // namespace icllab::advtrain

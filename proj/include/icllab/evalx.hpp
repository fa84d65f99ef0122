// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "icllab/attack.hpp"
#include "icllab/lsa.hpp"
#include "icllab/predictor.hpp"

namespace icllab::evalx {

/// Mean over prompts of (pred - y_clean)^2. Throws EmptyError / ShapeError.
double gte(std::span<const double> preds, std::span<const double> y_clean);
/// Mean over prompts of (pred - y_bad)^2.
double tae(std::span<const double> preds, std::span<const double> y_bad);

struct Aggregate {
  std::size_t n = 0;
  double mean = 0.0;
  double median = 0.0;
  /// Sample standard deviation / sqrt(n); 0 for n = 1.
  double se = 0.0;
};
Aggregate aggregate(std::span<const double> values);

struct EvalRecord {
  std::string model_id;
  std::uint64_t seed = 0;
  double alpha = 0.0;
  std::string attack_type;
  std::size_t k = 0;
  std::size_t prompt_idx = 0;
  double gte = 0.0;
  double tae = 0.0;
  double clean_pred = 0.0;
  double attacked_pred = 0.0;
  double y_bad = 0.0;
  double y_clean = 0.0;

  friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

struct CellSummary {
  std::string model_id;
  std::string attack_type;
  double alpha = 0.0;
  std::size_t k = 0;
  Aggregate gte;
  Aggregate tae;
};

struct EvalReport {
  std::vector<EvalRecord> records;
  /// Prompts dropped because a closed-form attack was undefined for them.
  std::size_t skipped = 0;

  /// Aggregates per (model, attack, alpha, k), in order of first appearance,
  /// computed from `records` (prompts pooled across seeds).
  std::vector<CellSummary> cells() const;
  void append(const EvalReport& other);
};

/// Evaluation prompt `idx` of master seed `seed`. The same (seed, idx) gives
/// the same task for every model and grid cell.
RegressionTask eval_task(std::uint64_t seed, std::size_t idx, std::size_t d, std::size_t m);
HijackTarget eval_target(const RegressionTask& task, double alpha, std::uint64_t seed, std::size_t idx);
/// Index policy shared by every attack on the prompts of `seed`; prompt idx
/// uses stream idx, so budgets are nested (the k=1 row is among the k=3 rows).
attack::IndexPolicy eval_indices(std::uint64_t seed);

struct SweepGrid {
  std::vector<double> alphas{1.0};
  std::vector<std::size_t> ks{1};
  std::vector<attack::AttackType> types{attack::AttackType::x};
};

struct SweepOptions {
  std::size_t d = 5;
  std::size_t m = 10;
  std::size_t n_prompts = 200;
  std::vector<std::uint64_t> seeds{0};
  /// iters, step sizes and init; type, k and index policy come from the grid.
  attack::AttackSpec attack;
  /// Prompts per batched attack graph; fixed so results do not depend on threads.
  std::size_t chunk = 32;
  std::size_t threads = 1;
};

/// Every (type, alpha, k) cell on fresh AlphaInterp targets. k = 0 cells
/// record the clean prompt.
EvalReport attack_sweep(const Predictor& model, const SweepGrid& grid, const SweepOptions& opt);

/// Closed-form single-token attacks on `lsa` (index 0; the x-attack keeps
/// y_1), replayed on each target. Records use attack types "x", "y", "z".
/// Throws StructureError when the LSA parameters are not block structured.
EvalReport theory_attack_transfer(const lsa::LsaParams& lsa, std::span<const Predictor* const> targets,
                                  std::span<const double> alphas, std::size_t n_prompts, std::uint64_t seed,
                                  std::size_t m);

struct TransferRecord {
  std::string source_id;
  std::string target_id;
  std::uint64_t seed = 0;
  double alpha = 0.0;
  std::string attack_type;
  std::size_t k = 0;
  std::size_t prompt_idx = 0;
  double source_pred = 0.0;
  double target_pred = 0.0;
  double source_tae = 0.0;
  double target_tae = 0.0;
  double target_gte = 0.0;
  /// (source_pred - target_pred)^2 on the perturbed prompt.
  double pred_mse = 0.0;
  double y_bad = 0.0;
  double y_clean = 0.0;
};

struct TransferReport {
  std::vector<TransferRecord> records;

  struct Cell {
    std::string source_id;
    std::string target_id;
    double alpha = 0.0;
    Aggregate source_tae;
    Aggregate target_tae;
    Aggregate pred_mse;
  };
  std::vector<Cell> cells() const;
};

struct TransferOptions {
  std::size_t d = 5;
  std::size_t m = 10;
  std::size_t n_prompts = 200;
  std::uint64_t seed = 0;
  double alpha = 1.0;
  attack::AttackSpec attack;
  std::size_t chunk = 32;
  std::size_t threads = 1;
};

/// Attacks built on `source`, replayed on every target. Source-side values
/// come from the same replay path as targets, so a self pair reproduces the
/// source TAE exactly.
TransferReport transfer_eval(const Predictor& source, std::span<const Predictor* const> targets,
                             const TransferOptions& opt);

/// All ordered (source, target) pairs of `models`, self pairs included.
TransferReport transfer_matrix(std::span<const Predictor* const> models, const TransferOptions& opt);

enum class Direction { ols_to_model, model_to_ols };

/// Per model and alpha: attacks sourced on one side, MSE between the two
/// sides' predictions on the perturbed prompts. `ols_spec` drives attacks
/// whose source is OLS, `model_spec` those sourced on a model.
TransferReport ols_tf_mse(std::span<const Predictor* const> models, std::span<const double> alphas,
                          Direction direction, const attack::AttackSpec& ols_spec,
                          const attack::AttackSpec& model_spec, const TransferOptions& opt);

}  // namespace icllab::evalx

// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "icllab/ndiff/graph.hpp"
#include "icllab/params.hpp"
#include "icllab/predictor.hpp"
#include "icllab/taskgen.hpp"

namespace icllab::lsa {

/// Single-layer linear self-attention weights, both (d+1) x (d+1).
///
/// Block names follow the partition of each matrix into a leading d x d block,
/// a trailing column, a trailing row and the corner scalar:
///   W_PV = [[W11_PV, w12_PV], [w21_PV^T, w22_PV]]
///   W_KQ = [[W11_KQ, w12_KQ], [w21_KQ^T, w22_KQ]]
struct LsaParams {
  ndiff::Tensor w_pv;
  ndiff::Tensor w_kq;

  std::size_t d() const { return w_pv.rows() - 1; }

  static LsaParams zeros(std::size_t d);
  /// Only W11_KQ and w22_PV non-zero.
  static LsaParams block_structured(const ndiff::Tensor& w11_kq, double w22_pv);
  /// W11_KQ = scale * I, w22_PV = scale, everything else 0.
  static LsaParams structured_init(std::size_t d, double scale);

  ndiff::Tensor w11_kq() const;
  Vec w21_kq() const;
  Vec w21_pv() const;
  Vec w12_pv() const;
  double w22_pv() const;

  ParamSet to_params() const;
  static LsaParams from_params(const ParamSet& ps);
};

/// E + W_PV E (E^T W_KQ E) / N with N = cols - 1. Concat layout only.
ndiff::Tensor lsa_forward(const EmbeddingMatrix& e, const LsaParams& p);
/// Graph form of the same map on a raw (d+1) x (N+1) matrix.
ndiff::Var lsa_forward(ndiff::Var e, ndiff::Var w_pv, ndiff::Var w_kq);

/// Entry (d+1, N+1) of the forward pass.
double lsa_predict(const EmbeddingMatrix& e, const LsaParams& p);
/// Same prediction through the bilinear expansion
/// (w21_PV^T, w22_PV) (E E^T / N) (W11_KQ ; w21_KQ^T) x_query.
double lsa_predict_expanded(const EmbeddingMatrix& e, const LsaParams& p);

struct TrainLsaConfig {
  std::size_t d = 5;
  std::size_t n = 10;
  std::size_t batch = 256;
  std::size_t steps = 200000;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  double init_scale = 0.01;
  /// Pair every task with its label-negated twin (w -> -w, same features).
  bool antithetic = true;
  /// Trace granularity; every `log_every` steps one checkpoint is recorded.
  std::size_t log_every = 1000;
  /// Keep a parameter snapshot at every checkpoint.
  bool keep_snapshots = false;

  static TrainLsaConfig paper_scale();
  static TrainLsaConfig desk();
};

struct LsaCheckpoint {
  std::size_t step = 0;
  /// Mean last-token squared error ((y_hat - y)^2, no 1/2) of the training
  /// batches since the previous checkpoint.
  double loss = 0.0;
};

struct LsaTrainResult {
  LsaParams params;
  std::vector<LsaCheckpoint> trace;
  std::vector<LsaParams> snapshots;
};

/// Plain SGD on fresh task batches minimising (1/2B) sum (y_hat - y_query)^2.
/// Throws DivergenceError once a batch loss exceeds 1e6.
LsaTrainResult train_lsa(const TrainLsaConfig& cfg);

/// Per-task half squared error of a batch, through ndiff (exposed for tests).
ndiff::Var lsa_batch_loss(ndiff::Graph& g, ndiff::Var w_pv, ndiff::Var w_kq, std::span<const RegressionTask> tasks);

struct AttackMatrix {
  ndiff::Tensor w;  // w22_PV * W11_KQ
  double off_block_norm_ratio = 0.0;
  bool structured = false;
};

inline constexpr double kStructureTol = 1e-3;

/// (|w21_PV| + |w12_PV| + |w21_KQ|) / (|W_PV|_F + |W_KQ|_F); structured iff <= tol.
AttackMatrix extract_attack_matrix(const LsaParams& p, double tol = kStructureTol);

/// Replacement of example `index` by (x_adv, y_adv).
struct ClosedFormAttack {
  std::size_t index = 0;
  Vec x_adv;
  double y_adv = 0.0;
};

Prompt apply_attack(const Prompt& prompt, const ClosedFormAttack& attack);

struct KeepOriginal {};
struct FreshGaussian {
  std::uint64_t seed = 0;
};
using XAdvSource = std::variant<KeepOriginal, FreshGaussian>;

/// Label-only hijack: y_adv = M (y_bad - r) / (x_adv^T W x_q) with
/// r = (1/M) sum_{i != index} y_i x_i^T W x_q.
ClosedFormAttack closed_form_y_attack(const Prompt& prompt, const LsaParams& p, double y_bad, std::size_t index,
                                      const XAdvSource& source = KeepOriginal{}, double tol = kStructureTol);

/// Feature-only hijack for a fixed non-zero label y_adv.
ClosedFormAttack closed_form_x_attack(const Prompt& prompt, const LsaParams& p, double y_bad, std::size_t index,
                                      double y_adv, double tol = kStructureTol);

/// Joint hijack: solves for the product v = y_adv x_adv and splits it with
/// y_adv = sqrt(|v|), x_adv = v / y_adv.
ClosedFormAttack closed_form_z_attack(const Prompt& prompt, const LsaParams& p, double y_bad, std::size_t index,
                                      double tol = kStructureTol);

class LsaPredictor : public Predictor {
 public:
  explicit LsaPredictor(LsaParams params, std::string id = "lsa") : params_(std::move(params)), id_(std::move(id)) {}

  std::string id() const override { return id_; }
  ndiff::Var predict_query(ndiff::Graph& g, ndiff::Var xs, ndiff::Var ys, const ndiff::Tensor& x_query,
                           std::size_t batch, std::size_t m) const override;
  const LsaParams& params() const { return params_; }

 private:
  LsaParams params_;
  std::string id_;
};

}  // namespace icllab::lsa

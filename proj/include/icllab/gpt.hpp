// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "icllab/ndiff/graph.hpp"
#include "icllab/optim.hpp"
#include "icllab/params.hpp"
#include "icllab/predictor.hpp"
#include "icllab/taskgen.hpp"

namespace icllab::gpt {

struct GptConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t n_embd = 64;
  std::size_t d = 5;
  std::size_t max_positions = 128;
  bool curriculum = false;
  std::uint64_t seed = 0;

  /// 8 layers, width 256, 8 heads, d = 20, N = 40.
  static GptConfig paper_scale();
  static GptConfig desk();

  void validate() const;
  friend bool operator==(const GptConfig&, const GptConfig&) = default;
};

/// Smallest positional table covering 2N+1 tokens, rounded up to 128.
std::size_t positions_for(std::size_t n_examples);

struct TrainHp {
  double lr = 5e-4;
  std::size_t warmup = 20000;
  std::size_t steps = 500000;
  std::size_t batch = 64;
  /// In-context examples per training prompt.
  std::size_t n = 40;

  static TrainHp paper_scale();
  static TrainHp desk();
  friend bool operator==(const TrainHp&, const TrainHp&) = default;
};

/// Fresh parameters: GPT-2 style normal(0, 0.02) weights, residual
/// projections scaled by 1/sqrt(2L), zero biases, unit layer-norm gains.
ParamSet init_params(const GptConfig& cfg);

/// Sum of declared tensor shapes for `cfg`.
std::size_t count_params(const GptConfig& cfg);

struct TensorCount {
  std::string name;
  ndiff::Shape shape;
  std::size_t count = 0;
};
std::vector<TensorCount> param_breakdown(const GptConfig& cfg);

/// Model output at every token row. `tokens` is (batch*seq) x (d+1), prompt
/// major. Returns (batch*seq) x 1.
ndiff::Var forward_tokens(const GptConfig& cfg, std::span<const ndiff::Var> params, ndiff::Var tokens,
                          std::size_t batch, std::size_t seq);

/// Output at every column of an Interleave embedding.
std::vector<double> forward_all(const EmbeddingMatrix& e, const ParamSet& params, const GptConfig& cfg);

/// Predictions read at the x-token columns: y_1..y_N, then the query.
std::vector<double> gpt_forward(const EmbeddingMatrix& e, const ParamSet& params, const GptConfig& cfg);

/// Interleave tokens for a prompt batch built inside the graph, so that
/// gradients reach xs and ys. Returns (batch*(2m+1)) x (d+1).
ndiff::Var interleave_tokens(ndiff::Graph& g, ndiff::Var xs, ndiff::Var ys, const ndiff::Tensor& x_query,
                             std::size_t batch, std::size_t m);

/// Predictions at x-token rows of every prompt, (batch*(m+1)) x 1.
ndiff::Var x_token_predictions(ndiff::Graph& g, const GptConfig& cfg, std::span<const ndiff::Var> params,
                               ndiff::Var xs, ndiff::Var ys, const ndiff::Tensor& x_query, std::size_t batch,
                               std::size_t m);

/// Mean over batch and positions of (y_hat_i - y_i)^2 where the targets are
/// the prompt labels followed by y_query. `preds` is (batch*(m+1)) x 1.
ndiff::Var next_token_mse(ndiff::Graph& g, ndiff::Var preds, std::span<const RegressionTask> tasks);

double next_token_loss(std::span<const RegressionTask> tasks, const ParamSet& params, const GptConfig& cfg);

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

/// Owns parameters plus optimiser state so that training can be resumed
/// (adversarial fine-tuning continues a standard run).
class Trainer {
 public:
  Trainer(GptConfig cfg, TrainHp hp);
  Trainer(GptConfig cfg, TrainHp hp, ParamSet params);

  /// One Adam step on `tasks`; the step counter advances by one.
  /// Throws DivergenceError (with the loss trace) on a non-finite loss or one above 1e6.
  double step(std::span<const RegressionTask> tasks);

  /// Training batch for the next step, with the curriculum applied when
  /// enabled and `curriculum` is true.
  std::vector<RegressionTask> sample_batch(bool curriculum) const;

  std::size_t steps_done() const noexcept { return step_; }
  const ParamSet& params() const noexcept { return params_; }
  const GptConfig& config() const noexcept { return cfg_; }
  const TrainHp& hp() const noexcept { return hp_; }
  const std::vector<StepRecord>& trace() const noexcept { return trace_; }

 private:
  GptConfig cfg_;
  TrainHp hp_;
  ParamSet params_;
  Adam adam_;
  std::size_t step_ = 0;
  std::vector<StepRecord> trace_;
};

/// Active (d, N) under the curriculum at 1-based `step`.
std::pair<std::size_t, std::size_t> curriculum_dims(std::size_t d, std::size_t n, std::size_t step,
                                                    std::size_t total_steps);

/// Task `slot` of the batch at `step` with only the first d_active features live.
RegressionTask training_task(std::uint64_t seed, std::size_t step, std::size_t slot, std::size_t d,
                             std::size_t d_active, std::size_t n_active);

struct TrainResult {
  ParamSet params;
  std::vector<StepRecord> trace;
};

TrainResult train_gpt(const GptConfig& cfg, const TrainHp& hp);

class GptPredictor : public Predictor {
 public:
  GptPredictor(GptConfig cfg, ParamSet params, std::string id = "gpt");

  std::string id() const override { return id_; }
  ndiff::Var predict_query(ndiff::Graph& g, ndiff::Var xs, ndiff::Var ys, const ndiff::Tensor& x_query,
                           std::size_t batch, std::size_t m) const override;

  const ParamSet& params() const noexcept { return params_; }
  const GptConfig& config() const noexcept { return cfg_; }

 private:
  GptConfig cfg_;
  ParamSet params_;
  std::string id_;
};

}  // namespace icllab::gpt

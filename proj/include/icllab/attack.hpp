// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "icllab/ndiff/tensor.hpp"
#include "icllab/predictor.hpp"
#include "icllab/taskgen.hpp"

namespace icllab::attack {

enum class AttackType { x, y, z };

std::string to_string(AttackType t);
/// Parses "x", "y" or "z" (also "x-attack" etc.); throws std::invalid_argument.
AttackType parse_attack_type(std::string_view s);

struct RandomSubset {
  std::uint64_t seed = 0;
};
struct Fixed {
  std::vector<std::size_t> indices;
};
using IndexPolicy = std::variant<RandomSubset, Fixed>;

/// zero: attacked x rows start at 0 (x- and z-attacks); y-attacks also zero the label.
enum class InitPolicy { zero, keep_original };

struct AttackSpec {
  AttackType type = AttackType::x;
  std::size_t k = 1;
  std::size_t iters = 100;
  double lr_x = 1.0;
  double lr_y = 100.0;
  IndexPolicy index_policy = RandomSubset{};
  InitPolicy init = InitPolicy::zero;

  /// 1000 iterations, step 0.01 on both coordinates.
  static AttackSpec ols_defaults(AttackType type, std::size_t k);
};

/// k distinct example indices in [0, m), sorted. RandomSubset draws from the
/// stream (seed, stream); Fixed must list exactly k distinct valid indices.
std::vector<std::size_t> select_indices(const IndexPolicy& policy, std::size_t m, std::size_t k,
                                        std::uint64_t stream);

struct AttackResult {
  Prompt perturbed;  // prompt at the best iterate
  double clean_prediction = 0.0;
  double best_prediction = 0.0;
  double last_prediction = 0.0;
  double y_bad = 0.0;
  double y_clean = 0.0;
  /// (prediction - y_bad)^2 at iterates 0..iters; iterate 0 is the initialised prompt.
  std::vector<double> tae_trace;
  std::size_t best_iter = 0;
  double gte_final = 0.0;
  double tae_final = 0.0;
  std::vector<std::size_t> indices;
  /// Set when a step produced a non-finite or ill-conditioned iterate; the
  /// result then holds the best finite iterate seen before that.
  bool diverged = false;
};

/// Gradient hijack of one prompt. y_clean is task.y_query.
AttackResult hijack(const Predictor& model, const RegressionTask& task, const HijackTarget& target,
                    const AttackSpec& spec);

/// Same attack on many prompts sharing (d, M), run as one batched graph per
/// iterate. Prompt b draws its indices from stream `first_stream + b`.
std::vector<AttackResult> hijack_batch(const Predictor& model, std::span<const RegressionTask> tasks,
                                       std::span<const double> y_bad, const AttackSpec& spec,
                                       std::uint64_t first_stream = 0);

// ---------------------------------------------------------------------------
// Ordinary least squares.

constexpr double kMaxCondition = 1e10;

struct OlsModel {
  ndiff::Tensor x;  // M x d
  Vec y;
  Vec w_hat;

  double predict(const Vec& x_query) const { return dot(w_hat, x_query); }
};

/// w_hat = argmin |X w - Y| through column-pivoted QR. Throws IllConditioned
/// when M < d or cond(X^T X) exceeds kMaxCondition.
OlsModel ols_fit(const ndiff::Tensor& x, const Vec& y);
OlsModel ols_fit(const Prompt& prompt);

/// (X^T X)^{-1} X^T Y with an explicit inverse; reference only.
Vec ols_explicit_inverse(const ndiff::Tensor& x, const Vec& y);

/// Differentiable OLS prediction x_q^T (X^T X)^{-1} X^T Y through a Cholesky
/// solve. Throws IllConditioned when cond(X^T X) exceeds kMaxCondition.
class OlsPredictor : public Predictor {
 public:
  explicit OlsPredictor(std::string id = "ols") : id_(std::move(id)) {}
  std::string id() const override { return id_; }
  ndiff::Var predict_query(ndiff::Graph& g, ndiff::Var xs, ndiff::Var ys, const ndiff::Tensor& x_query,
                           std::size_t batch, std::size_t m) const override;

 private:
  std::string id_;
};

/// Gradient hijack of the OLS solver. y_clean is the clean OLS prediction.
AttackResult ols_attack(const ndiff::Tensor& x, const Vec& y, const Vec& x_query, const HijackTarget& target,
                        const AttackSpec& spec);

}  // namespace icllab::attack

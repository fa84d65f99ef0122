// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "icllab/ndiff/tensor.hpp"

namespace icllab {

using Vec = std::vector<double>;

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

/// The part of a task the model sees: M labelled examples and one query.
struct Prompt {
  std::vector<Vec> xs;
  Vec ys;
  Vec x_query;

  std::size_t d() const { return x_query.size(); }
  std::size_t m() const { return ys.size(); }

  friend bool operator==(const Prompt&, const Prompt&) = default;
};

/// One noiseless linear-regression task: labels are exact inner products with w.
struct RegressionTask {
  Vec w;
  Prompt prompt;
  double y_query = 0.0;

  std::size_t d() const { return w.size(); }
  std::size_t m() const { return prompt.m(); }

  friend bool operator==(const RegressionTask&, const RegressionTask&) = default;
};

inline constexpr std::size_t kDefaultDim = 20;
inline constexpr std::size_t kDefaultExamples = 40;

/// w, x_i and x_query i.i.d. standard normal, fully determined by `seed`.
RegressionTask sample_task(std::uint64_t seed, std::size_t d = kDefaultDim, std::size_t m = kDefaultExamples);

/// Task number `index` of the stream keyed by `master_seed`.
RegressionTask sample_task_at(std::uint64_t master_seed, std::uint64_t index, std::size_t d, std::size_t m);

enum class Layout { concat, interleave };

/// (d+1)-row token matrix. Concat: one column per (x_i; y_i) then (x_q; 0).
/// Interleave: (x_i; 0), (0; y_i) pairs then (x_q; 0).
struct EmbeddingMatrix {
  Layout layout = Layout::concat;
  ndiff::Tensor data;

  std::size_t rows() const { return data.rows(); }
  std::size_t cols() const { return data.cols(); }
  /// Number of in-context examples encoded.
  std::size_t examples() const;
};

EmbeddingMatrix embed(const Prompt& prompt, Layout layout);
inline EmbeddingMatrix embed(const RegressionTask& task, Layout layout) { return embed(task.prompt, layout); }
/// Inverse of embed.
Prompt decode(const EmbeddingMatrix& e);

struct AlphaInterp {
  double alpha = 1.0;
  Vec w_perp;  // filled by make_target
};

struct RandomW {
  Vec w_prime;  // filled by make_target
};

using TargetMode = std::variant<AlphaInterp, RandomW>;

struct HijackTarget {
  double y_bad = 0.0;
  TargetMode mode;
  std::uint64_t seed = 0;
};

/// AlphaInterp: y_bad = (1-a) w.x_q + a w_perp.x_q, where w_perp is a fresh
/// Gaussian direction orthogonalised against w and rescaled to |w|.
/// RandomW: y_bad = w'.x_q for an independent standard normal w'.
HijackTarget make_target(const RegressionTask& task, const TargetMode& mode, std::uint64_t seed);

}  // namespace icllab

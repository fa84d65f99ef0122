// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "icllab/ndiff/graph.hpp"
#include "icllab/taskgen.hpp"

namespace icllab {

/// Prompt tensors for a batch of `batch` prompts with `m` examples of
/// dimension d each, laid out prompt-major.
struct PromptBatch {
  ndiff::Tensor xs;       // (batch*m) x d
  ndiff::Tensor ys;       // (batch*m) x 1
  ndiff::Tensor x_query;  // batch x d
  std::size_t batch = 0;
  std::size_t m = 0;
  std::size_t d = 0;

  static PromptBatch from(std::span<const Prompt> prompts);
  Prompt prompt(std::size_t b) const;
};

/// A model that maps a prompt to a differentiable scalar query prediction.
/// Implementations must keep prompts independent: prediction b depends only
/// on rows of prompt b.
class Predictor {
 public:
  virtual ~Predictor() = default;

  virtual std::string id() const = 0;

  /// Query predictions, shape batch x 1.
  virtual ndiff::Var predict_query(ndiff::Graph& g, ndiff::Var xs, ndiff::Var ys, const ndiff::Tensor& x_query,
                                   std::size_t batch, std::size_t m) const = 0;

  std::vector<double> predict(std::span<const Prompt> prompts) const;
  double predict(const Prompt& prompt) const;
};

}  // namespace icllab

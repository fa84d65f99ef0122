// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

#include "icllab/ndiff/graph.hpp"

namespace icllab::ndiff {

// All operations append one node to the graph owning their operands and
// throw ShapeError on incompatible shapes. The only implicit broadcasting is
// a single-element operand against a tensor in add/sub/mul.

Var matmul(Var a, Var b);
/// x w + bias, the bias (n) added to every row; one node.
Var linear(Var x, Var w, Var bias);
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var square(Var a);
/// x * Phi(x) with the exact Gaussian CDF (erf form).
Var gelu(Var a);
Var mean(Var a);
Var sum(Var a);

enum class Elementwise { add, sub, mul, scale, gelu, square, mean };

/// Dispatch by kind; `factor` is only read by `scale`.
Var elementwise(Elementwise kind, std::span<const Var> operands, double factor = 1.0);
inline Var elementwise(Elementwise kind, std::initializer_list<Var> operands, double factor = 1.0) {
  return elementwise(kind, std::span<const Var>(operands.begin(), operands.size()), factor);
}

/// keep[r * cols + c] != 0 marks an entry that takes part in the softmax.
struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> keep;

  static Mask causal(std::size_t n);
  bool kept(std::size_t r, std::size_t c) const { return keep[r * cols + c] != 0; }
};

/// Row-wise softmax stabilised by the row max. Masked entries are exactly 0.
/// A row with no unmasked entry raises MaskError.
Var softmax_rows(Var t, const Mask* mask = nullptr);

/// a (m x n) plus bias (n) added to every row.
Var add_row(Var a, Var bias);
/// Row-wise layer normalisation with affine gamma, beta (n).
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

Var reshape(Var a, Shape shape);
/// Row gather; repeated indices accumulate in the backward pass.
Var select_rows(Var a, std::vector<std::size_t> index);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
/// m x n -> m x 1.
Var sum_rows(Var a);

/// Multi-head causal self-attention. `qkv` is (batch*seq) x 3C with the
/// query, key and value blocks side by side; output is (batch*seq) x C.
Var causal_attention(Var qkv, std::size_t batch, std::size_t seq, std::size_t heads);

/// Solves A X = B for symmetric positive definite A by Cholesky.
/// Throws IllConditioned when the factorisation fails.
Var solve_spd(Var a, Var b);

}  // namespace icllab::ndiff

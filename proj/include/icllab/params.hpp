// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icllab/ndiff/graph.hpp"

namespace icllab {

struct NamedTensor {
  std::string name;
  ndiff::Tensor value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Ordered, named parameter tensors. Order is the serialisation order.
class ParamSet {
 public:
  void add(std::string name, ndiff::Tensor value);

  const ndiff::Tensor& at(std::string_view name) const;
  ndiff::Tensor& at(std::string_view name);
  bool contains(std::string_view name) const;

  std::size_t size() const noexcept { return tensors_.size(); }
  const NamedTensor& operator[](std::size_t i) const { return tensors_[i]; }
  NamedTensor& operator[](std::size_t i) { return tensors_[i]; }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  /// Total number of scalar parameters.
  std::size_t count() const;
  /// FNV-1a over names, shapes and value bytes.
  std::uint64_t fingerprint() const;
  bool all_finite() const;

  /// Binds every tensor as a graph variable (or constant), in order.
  std::vector<ndiff::Var> bind(ndiff::Graph& g, bool trainable) const;

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  std::vector<NamedTensor> tensors_;
};

}  // namespace icllab

// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "icllab/ndiff/tensor.hpp"

namespace icllab::ndiff {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const noexcept { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Per-node gradient buffers used during a backward sweep.
class GradBuffers {
 public:
  GradBuffers(const Graph& graph, std::size_t count);

  /// Zero-initialised accumulator for node `id`, or nullptr if that node
  /// does not lead to any differentiable leaf.
  Tensor* sink(std::size_t id);
  Tensor& at(std::size_t id) { return grads_[id]; }

 private:
  const Graph& graph_;
  std::vector<Tensor> grads_;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so parents
/// always precede children and a single reverse sweep visits each node once.
class Graph {
 public:
  using Backward = std::function<void(const Tensor& out_grad, GradBuffers& grads)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  /// Appends an operation node. `backward` receives the gradient flowing into
  /// this node and accumulates into its parents' buffers.
  Var record(Tensor value, std::vector<std::size_t> parents, Backward backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_[id].parents; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  friend std::vector<Tensor> grad(Graph&, Var, std::span<const Var>);

  struct Node {
    Tensor value;
    std::vector<std::size_t> parents;
    Backward backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

/// Exact reverse-mode gradients of a scalar `output` with respect to `wrt`.
/// Nodes unreachable from `output` get zero gradients.
std::vector<Tensor> grad(Graph& graph, Var output, std::span<const Var> wrt);

inline std::vector<Tensor> grad(Graph& graph, Var output, std::initializer_list<Var> wrt) {
  return grad(graph, output, std::span<const Var>(wrt.begin(), wrt.size()));
}

}  // namespace icllab::ndiff

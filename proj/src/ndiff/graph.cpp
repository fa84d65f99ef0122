// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#include "icllab/ndiff/graph.hpp"

#include "icllab/errors.hpp"

namespace icllab::ndiff {

const Tensor& Var::value() const { return graph_->value(id_); }

GradBuffers::GradBuffers(const Graph& graph, std::size_t count) : graph_(graph), grads_(count) {}

Tensor* GradBuffers::sink(std::size_t id) {
  if (!graph_.requires_grad(id)) return nullptr;
  Tensor& g = grads_[id];
  if (g.empty() && graph_.value(id).numel() > 0) g = Tensor::zeros(graph_.value(id).shape());
  return &g;
}

Var Graph::constant(Tensor value) {
  if (!value.all_finite()) throw NonFiniteError("non-finite constant");
  nodes_.push_back(Node{std::move(value), {}, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Graph::variable(Tensor value) {
  if (!value.all_finite()) throw NonFiniteError("non-finite variable");
  nodes_.push_back(Node{std::move(value), {}, nullptr, true});
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, std::vector<std::size_t> parents, Backward backward) {
  if (!value.all_finite()) throw NonFiniteError("operation produced a non-finite value");
  bool needs = false;
  for (auto p : parents) needs = needs || nodes_[p].requires_grad;
  nodes_.push_back(Node{std::move(value), std::move(parents), needs ? std::move(backward) : nullptr, needs});
  return Var(this, nodes_.size() - 1);
}

std::vector<Tensor> grad(Graph& graph, Var output, std::span<const Var> wrt) {
  if (&output.graph() != &graph) throw GradError("output belongs to a different graph");
  if (output.value().numel() != 1) {
    throw GradError("grad needs a scalar output, got shape " + shape_str(output.value().shape()));
  }
  GradBuffers grads(graph, output.id() + 1);
  if (graph.requires_grad(output.id())) grads.at(output.id()) = Tensor::filled(output.value().shape(), 1.0);

  std::vector<bool> keep(output.id() + 1, false);
  for (const Var& v : wrt)
    if (v.id() <= output.id()) keep[v.id()] = true;

  for (std::size_t i = output.id() + 1; i-- > 0;) {
    auto& node = graph.nodes_[i];
    Tensor& g = grads.at(i);
    if (g.empty() || !node.backward) continue;
    node.backward(g, grads);
    if (!keep[i]) g = Tensor();
  }

  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const Var& v : wrt) {
    if (v.id() <= output.id() && !grads.at(v.id()).empty()) {
      out.push_back(grads.at(v.id()));
    } else {
      out.push_back(Tensor::zeros(v.value().shape()));
    }
  }
  return out;
}

}  // namespace icllab::ndiff

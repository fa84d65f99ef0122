// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#include "icllab/predictor.hpp"

#include "icllab/errors.hpp"

namespace icllab {

PromptBatch PromptBatch::from(std::span<const Prompt> prompts) {
  if (prompts.empty()) throw EmptyError("PromptBatch: no prompts");
  PromptBatch pb;
  pb.batch = prompts.size();
  pb.m = prompts[0].m();
  pb.d = prompts[0].d();
  pb.xs = ndiff::Tensor::zeros({pb.batch * pb.m, pb.d});
  pb.ys = ndiff::Tensor::zeros({pb.batch * pb.m, 1});
  pb.x_query = ndiff::Tensor::zeros({pb.batch, pb.d});
  for (std::size_t b = 0; b < pb.batch; ++b) {
    const Prompt& p = prompts[b];
    if (p.m() != pb.m || p.d() != pb.d || p.xs.size() != pb.m) throw ShapeError("PromptBatch: prompts differ in shape");
    for (std::size_t i = 0; i < pb.m; ++i) {
      if (p.xs[i].size() != pb.d) throw ShapeError("PromptBatch: feature length");
      for (std::size_t j = 0; j < pb.d; ++j) pb.xs(b * pb.m + i, j) = p.xs[i][j];
      pb.ys[b * pb.m + i] = p.ys[i];
    }
    for (std::size_t j = 0; j < pb.d; ++j) pb.x_query(b, j) = p.x_query[j];
  }
  return pb;
}

Prompt PromptBatch::prompt(std::size_t b) const {
  Prompt p;
  for (std::size_t i = 0; i < m; ++i) {
    Vec x(d);
    for (std::size_t j = 0; j < d; ++j) x[j] = xs(b * m + i, j);
    p.xs.push_back(std::move(x));
    p.ys.push_back(ys[b * m + i]);
  }
  p.x_query.resize(d);
  for (std::size_t j = 0; j < d; ++j) p.x_query[j] = x_query(b, j);
  return p;
}

std::vector<double> Predictor::predict(std::span<const Prompt> prompts) const {
  const PromptBatch pb = PromptBatch::from(prompts);
  ndiff::Graph g;
  auto xs = g.constant(pb.xs);
  auto ys = g.constant(pb.ys);
  auto out = predict_query(g, xs, ys, pb.x_query, pb.batch, pb.m);
  const auto& v = out.value();
  return {v.data().begin(), v.data().end()};
}

double Predictor::predict(const Prompt& prompt) const { return predict(std::span<const Prompt>(&prompt, 1))[0]; }

}  // namespace icllab

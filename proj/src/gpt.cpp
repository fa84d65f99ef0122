// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#include "icllab/gpt.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "icllab/errors.hpp"
#include "icllab/ndiff/ops.hpp"
#include "icllab/rng.hpp"

namespace icllab::gpt {

using ndiff::Tensor;
using ndiff::Var;

namespace {

// Tensor order inside a ParamSet: three input tensors, twelve per block, four
// output tensors.
constexpr std::size_t kHead = 3;
constexpr std::size_t kPerLayer = 12;

enum Block : std::size_t {
  ln1_w, ln1_b, attn_w, attn_b, attn_proj_w, attn_proj_b, ln2_w, ln2_b, fc_w, fc_b, mlp_proj_w, mlp_proj_b
};

std::vector<TensorCount> layout(const GptConfig& cfg) {
  const std::size_t c = cfg.n_embd, in = cfg.d + 1;
  std::vector<TensorCount> out;
  auto push = [&](std::string name, ndiff::Shape s) { out.push_back({std::move(name), s, ndiff::numel_of(s)}); };
  push("read_in.weight", {in, c});
  push("read_in.bias", {c});
  push("wpe", {cfg.max_positions, c});
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string h = "h" + std::to_string(l) + ".";
    push(h + "ln_1.weight", {c});
    push(h + "ln_1.bias", {c});
    push(h + "attn.c_attn.weight", {c, 3 * c});
    push(h + "attn.c_attn.bias", {3 * c});
    push(h + "attn.c_proj.weight", {c, c});
    push(h + "attn.c_proj.bias", {c});
    push(h + "ln_2.weight", {c});
    push(h + "ln_2.bias", {c});
    push(h + "mlp.c_fc.weight", {c, 4 * c});
    push(h + "mlp.c_fc.bias", {4 * c});
    push(h + "mlp.c_proj.weight", {4 * c, c});
    push(h + "mlp.c_proj.bias", {c});
  }
  push("ln_f.weight", {c});
  push("ln_f.bias", {c});
  push("read_out.weight", {c, 1});
  push("read_out.bias", {1});
  return out;
}

void check_layout(const GptConfig& cfg, const ParamSet& ps) {
  const auto expect = layout(cfg);
  if (ps.size() != expect.size()) throw FormatError("GPT parameters: wrong tensor count for config");
  for (std::size_t i = 0; i < expect.size(); ++i) {
    if (ps[i].name != expect[i].name || ps[i].value.shape() != expect[i].shape) {
      throw FormatError("GPT parameters: tensor " + std::to_string(i) + " is " + ps[i].name + " " +
                        ndiff::shape_str(ps[i].value.shape()) + ", expected " + expect[i].name + " " +
                        ndiff::shape_str(expect[i].shape));
    }
  }
}

Var affine(Var x, Var w, Var b) { return ndiff::linear(x, w, b); }

}  // namespace

GptConfig GptConfig::paper_scale() {
  GptConfig c;
  c.n_layers = 8;
  c.n_heads = 8;
  c.n_embd = 256;
  c.d = 20;
  c.max_positions = positions_for(40);
  return c;
}

GptConfig GptConfig::desk() {
  GptConfig c;
  c.max_positions = positions_for(10);
  c.curriculum = true;
  return c;
}

void GptConfig::validate() const {
  if (n_heads == 0 || n_embd == 0 || d == 0 || max_positions == 0) {
    throw std::invalid_argument("GptConfig: sizes must be positive");
  }
  if (n_embd % n_heads != 0) throw std::invalid_argument("GptConfig: n_embd must be divisible by n_heads");
}

std::size_t positions_for(std::size_t n_examples) {
  const std::size_t need = 2 * n_examples + 1;
  return (need + 127) / 128 * 128;
}

TrainHp TrainHp::paper_scale() { return TrainHp{}; }

TrainHp TrainHp::desk() {
  TrainHp h;
  h.lr = 2e-3;
  h.warmup = 1000;
  h.steps = 20000;
  h.batch = 32;
  h.n = 10;
  return h;
}

ParamSet init_params(const GptConfig& cfg) {
  cfg.validate();
  Rng rng = Rng::derive(cfg.seed, {Rng::tag("gpt-init")});
  const double sd = 0.02;
  const double proj_sd = sd / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(cfg.n_layers, 1)));
  ParamSet ps;
  for (const auto& tc : layout(cfg)) {
    Tensor t = Tensor::zeros(tc.shape);
    const auto& n = tc.name;
    const bool gain = n.ends_with("ln_1.weight") || n.ends_with("ln_2.weight") || n == "ln_f.weight";
    if (gain) {
      for (auto& v : t.data()) v = 1.0;
    } else if (n.ends_with(".weight") || n == "wpe") {
      const double s = n.ends_with("c_proj.weight") ? proj_sd : sd;
      for (auto& v : t.data()) v = s * rng.normal();
    }
    ps.add(n, std::move(t));
  }
  return ps;
}

std::size_t count_params(const GptConfig& cfg) {
  const std::size_t c = cfg.n_embd, in = cfg.d + 1;
  const std::size_t head = in * c + c + cfg.max_positions * c;
  const std::size_t block = 12 * c * c + 13 * c;
  const std::size_t tail = 2 * c + c + 1;
  return head + cfg.n_layers * block + tail;
}

std::vector<TensorCount> param_breakdown(const GptConfig& cfg) { return layout(cfg); }

Var forward_tokens(const GptConfig& cfg, std::span<const Var> p, Var tokens, std::size_t batch,
                   std::size_t seq) {
  if (seq > cfg.max_positions) {
    throw LengthError("sequence of " + std::to_string(seq) + " tokens exceeds max_positions " +
                      std::to_string(cfg.max_positions));
  }
  if (p.size() != kHead + kPerLayer * cfg.n_layers + 4) throw FormatError("GPT parameters: wrong tensor count");
  std::vector<std::size_t> pos(batch * seq);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < seq; ++t) pos[b * seq + t] = t;
  Var h = ndiff::add(affine(tokens, p[0], p[1]), ndiff::select_rows(p[2], std::move(pos)));
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const Var* w = p.data() + kHead + kPerLayer * l;
    Var a = ndiff::layer_norm(h, w[ln1_w], w[ln1_b]);
    a = ndiff::causal_attention(affine(a, w[attn_w], w[attn_b]), batch, seq, cfg.n_heads);
    h = ndiff::add(h, affine(a, w[attn_proj_w], w[attn_proj_b]));
    Var m = ndiff::layer_norm(h, w[ln2_w], w[ln2_b]);
    m = ndiff::gelu(affine(m, w[fc_w], w[fc_b]));
    h = ndiff::add(h, affine(m, w[mlp_proj_w], w[mlp_proj_b]));
  }
  const Var* tail = p.data() + kHead + kPerLayer * cfg.n_layers;
  h = ndiff::layer_norm(h, tail[0], tail[1]);
  return affine(h, tail[2], tail[3]);
}

std::vector<double> forward_all(const EmbeddingMatrix& e, const ParamSet& params, const GptConfig& cfg) {
  if (e.layout != Layout::interleave) throw LayoutError("the GPT model takes the Interleave layout");
  if (e.rows() != cfg.d + 1) throw ShapeError("embedding height does not match GPT input dimension");
  check_layout(cfg, params);
  ndiff::Graph g;
  auto vars = params.bind(g, false);
  Var out = forward_tokens(cfg, vars, g.constant(e.data.transposed()), 1, e.cols());
  return {out.value().data().begin(), out.value().data().end()};
}

std::vector<double> gpt_forward(const EmbeddingMatrix& e, const ParamSet& params, const GptConfig& cfg) {
  const auto all = forward_all(e, params, cfg);
  std::vector<double> out;
  for (std::size_t c = 0; c < all.size(); c += 2) out.push_back(all[c]);
  return out;
}

Var interleave_tokens(ndiff::Graph& g, Var xs, Var ys, const Tensor& x_query, std::size_t batch, std::size_t m) {
  const std::size_t d = xs.value().cols();
  if (xs.value().rows() != batch * m || ys.value().rows() != batch * m || x_query.rows() != batch ||
      x_query.cols() != d) {
    throw ShapeError("interleave_tokens: prompt tensor shapes");
  }
  Tensor q = Tensor::zeros({batch, d + 1});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < d; ++j) q(b, j) = x_query(b, j);
  std::vector<Var> xrow{xs, g.constant(Tensor::zeros({batch * m, 1}))};
  std::vector<Var> yrow{g.constant(Tensor::zeros({batch * m, d})), ys};
  std::vector<Var> parts{ndiff::concat_cols(xrow), ndiff::concat_cols(yrow), g.constant(std::move(q))};
  Var stacked = ndiff::concat_rows(parts);
  const std::size_t seq = 2 * m + 1, bm = batch * m;
  std::vector<std::size_t> order(batch * seq);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < seq; ++t) {
      std::size_t src;
      if (t == 2 * m) src = 2 * bm + b;
      else if (t % 2 == 0) src = b * m + t / 2;
      else src = bm + b * m + t / 2;
      order[b * seq + t] = src;
    }
  }
  return ndiff::select_rows(stacked, std::move(order));
}

Var x_token_predictions(ndiff::Graph& g, const GptConfig& cfg, std::span<const Var> params, Var xs, Var ys,
                        const Tensor& x_query, std::size_t batch, std::size_t m) {
  if (xs.value().cols() != cfg.d) throw ShapeError("prompt dimension differs from GPT input dimension");
  const std::size_t seq = 2 * m + 1;
  Var out = forward_tokens(cfg, params, interleave_tokens(g, xs, ys, x_query, batch, m), batch, seq);
  std::vector<std::size_t> rows;
  rows.reserve(batch * (m + 1));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i <= m; ++i) rows.push_back(b * seq + 2 * i);
  return ndiff::select_rows(out, std::move(rows));
}

Var next_token_mse(ndiff::Graph& g, Var preds, std::span<const RegressionTask> tasks) {
  if (tasks.empty()) throw EmptyError("next_token_mse: empty batch");
  const std::size_t m = tasks[0].m();
  Tensor target = Tensor::zeros({tasks.size() * (m + 1), 1});
  for (std::size_t b = 0; b < tasks.size(); ++b) {
    if (tasks[b].m() != m) throw ShapeError("next_token_mse: prompts differ in length");
    for (std::size_t i = 0; i < m; ++i) target[b * (m + 1) + i] = tasks[b].prompt.ys[i];
    target[b * (m + 1) + m] = tasks[b].y_query;
  }
  if (preds.value().shape() != target.shape()) throw ShapeError("next_token_mse: prediction shape");
  return ndiff::mean(ndiff::square(ndiff::sub(preds, g.constant(std::move(target)))));
}

namespace {

std::vector<Prompt> prompts_of(std::span<const RegressionTask> tasks) {
  std::vector<Prompt> out;
  out.reserve(tasks.size());
  for (const auto& t : tasks) out.push_back(t.prompt);
  return out;
}

}  // namespace

double next_token_loss(std::span<const RegressionTask> tasks, const ParamSet& params, const GptConfig& cfg) {
  check_layout(cfg, params);
  const auto prompts = prompts_of(tasks);
  const PromptBatch pb = PromptBatch::from(prompts);
  ndiff::Graph g;
  auto vars = params.bind(g, false);
  Var preds = x_token_predictions(g, cfg, vars, g.constant(pb.xs), g.constant(pb.ys), pb.x_query, pb.batch, pb.m);
  return next_token_mse(g, preds, tasks).value().item();
}

Trainer::Trainer(GptConfig cfg, TrainHp hp) : Trainer(cfg, hp, init_params(cfg)) {}

Trainer::Trainer(GptConfig cfg, TrainHp hp, ParamSet params)
    : cfg_(cfg), hp_(hp), params_(std::move(params)), adam_(params_) {
  cfg_.validate();
  if (hp_.batch == 0 || hp_.n == 0 || !(hp_.lr > 0.0)) throw std::invalid_argument("TrainHp: sizes must be positive");
  if (2 * hp_.n + 1 > cfg_.max_positions) {
    throw LengthError("max_positions too small for N = " + std::to_string(hp_.n));
  }
  check_layout(cfg_, params_);
}

double Trainer::step(std::span<const RegressionTask> tasks) {
  const auto prompts = prompts_of(tasks);
  const PromptBatch pb = PromptBatch::from(prompts);
  const double lr = warmup_lr(hp_.lr, hp_.warmup, step_ + 1);
  double loss = 0.0;
  try {
    ndiff::Graph g;
    auto vars = params_.bind(g, true);
    Var preds = x_token_predictions(g, cfg_, vars, g.constant(pb.xs), g.constant(pb.ys), pb.x_query, pb.batch, pb.m);
    Var l = next_token_mse(g, preds, tasks);
    loss = l.value().item();
    if (!(loss <= 1e6)) throw NonFiniteError("loss above divergence threshold");
    auto grads = ndiff::grad(g, l, std::span<const Var>(vars));
    adam_.step(params_, grads, lr);
  } catch (const NonFiniteError&) {
    std::vector<double> losses;
    for (const auto& r : trace_) losses.push_back(r.loss);
    losses.push_back(loss);
    throw DivergenceError("GPT training diverged at step " + std::to_string(step_ + 1), std::move(losses));
  }
  ++step_;
  trace_.push_back({step_, loss, lr});
  return loss;
}

std::pair<std::size_t, std::size_t> curriculum_dims(std::size_t d, std::size_t n, std::size_t step,
                                                    std::size_t total_steps) {
  const std::size_t d0 = std::max<std::size_t>(1, d / 4), n0 = std::max<std::size_t>(1, n / 4);
  const double ramp = 0.4 * static_cast<double>(total_steps);
  const double frac = ramp <= 0.0 ? 1.0 : std::min(1.0, static_cast<double>(step) / ramp);
  auto lerp = [frac](std::size_t a, std::size_t b) {
    return a + static_cast<std::size_t>(std::floor(frac * static_cast<double>(b - a) + 0.5));
  };
  return {lerp(d0, d), lerp(n0, n)};
}

RegressionTask training_task(std::uint64_t seed, std::size_t step, std::size_t slot, std::size_t d,
                             std::size_t d_active, std::size_t n_active) {
  RegressionTask t = sample_task(Rng::derive_key(seed, {Rng::tag("gpt-train"), step, slot}), d_active, n_active);
  t.w.resize(d, 0.0);
  for (auto& x : t.prompt.xs) x.resize(d, 0.0);
  t.prompt.x_query.resize(d, 0.0);
  return t;
}

std::vector<RegressionTask> Trainer::sample_batch(bool curriculum) const {
  const std::size_t step = step_ + 1;
  auto [da, na] = std::pair{cfg_.d, hp_.n};
  if (curriculum && cfg_.curriculum) std::tie(da, na) = curriculum_dims(cfg_.d, hp_.n, step, hp_.steps);
  std::vector<RegressionTask> batch;
  batch.reserve(hp_.batch);
  for (std::size_t s = 0; s < hp_.batch; ++s) batch.push_back(training_task(cfg_.seed, step, s, cfg_.d, da, na));
  return batch;
}

TrainResult train_gpt(const GptConfig& cfg, const TrainHp& hp) {
  if (hp.steps == 0) throw std::invalid_argument("train_gpt: steps must be positive");
  Trainer tr(cfg, hp);
  for (std::size_t s = 0; s < hp.steps; ++s) tr.step(tr.sample_batch(true));
  return {tr.params(), tr.trace()};
}

GptPredictor::GptPredictor(GptConfig cfg, ParamSet params, std::string id)
    : cfg_(cfg), params_(std::move(params)), id_(std::move(id)) {
  check_layout(cfg_, params_);
}

Var GptPredictor::predict_query(ndiff::Graph& g, Var xs, Var ys, const Tensor& x_query, std::size_t batch,
                                std::size_t m) const {
  auto vars = params_.bind(g, false);
  Var preds = x_token_predictions(g, cfg_, vars, xs, ys, x_query, batch, m);
  std::vector<std::size_t> rows(batch);
  for (std::size_t b = 0; b < batch; ++b) rows[b] = b * (m + 1) + m;
  return ndiff::select_rows(preds, std::move(rows));
}

}  // namespace icllab::gpt

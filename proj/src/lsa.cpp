// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#include "icllab/lsa.hpp"

#include <cmath>
#include <stdexcept>

#include "icllab/errors.hpp"
#include "icllab/ndiff/ops.hpp"
#include "icllab/rng.hpp"

namespace icllab::lsa {

using ndiff::Tensor;
using ndiff::Var;

LsaParams LsaParams::zeros(std::size_t d) { return {Tensor::zeros({d + 1, d + 1}), Tensor::zeros({d + 1, d + 1})}; }

LsaParams LsaParams::block_structured(const Tensor& w11_kq, double w22_pv) {
  const std::size_t d = w11_kq.rows();
  if (w11_kq.cols() != d) throw ShapeError("block_structured: W11_KQ must be square");
  LsaParams p = zeros(d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) p.w_kq(i, j) = w11_kq(i, j);
  p.w_pv(d, d) = w22_pv;
  return p;
}

LsaParams LsaParams::structured_init(std::size_t d, double scale) {
  Tensor w = Tensor::zeros({d, d});
  for (std::size_t i = 0; i < d; ++i) w(i, i) = scale;
  return block_structured(w, scale);
}

Tensor LsaParams::w11_kq() const {
  const std::size_t n = d();
  Tensor w = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) w(i, j) = w_kq(i, j);
  return w;
}

Vec LsaParams::w21_kq() const {
  Vec v(d());
  for (std::size_t j = 0; j < d(); ++j) v[j] = w_kq(d(), j);
  return v;
}

Vec LsaParams::w21_pv() const {
  Vec v(d());
  for (std::size_t j = 0; j < d(); ++j) v[j] = w_pv(d(), j);
  return v;
}

Vec LsaParams::w12_pv() const {
  Vec v(d());
  for (std::size_t i = 0; i < d(); ++i) v[i] = w_pv(i, d());
  return v;
}

double LsaParams::w22_pv() const { return w_pv(d(), d()); }

ParamSet LsaParams::to_params() const {
  ParamSet ps;
  ps.add("w_pv", w_pv);
  ps.add("w_kq", w_kq);
  return ps;
}

LsaParams LsaParams::from_params(const ParamSet& ps) {
  LsaParams p{ps.at("w_pv"), ps.at("w_kq")};
  if (p.w_pv.rank() != 2 || p.w_pv.rows() != p.w_pv.cols() || p.w_kq.shape() != p.w_pv.shape()) {
    throw FormatError("LSA parameters must be two equal square matrices");
  }
  return p;
}

Var lsa_forward(Var e, Var w_pv, Var w_kq) {
  const std::size_t cols = e.value().cols();
  if (cols < 2) throw ShapeError("lsa_forward: need at least one example column");
  const double inv_n = 1.0 / static_cast<double>(cols - 1);
  Var scores = ndiff::matmul(ndiff::transpose(e), ndiff::matmul(w_kq, e));
  Var update = ndiff::matmul(ndiff::matmul(w_pv, e), scores);
  return ndiff::add(e, ndiff::scale(update, inv_n));
}

namespace {

void require_concat(const EmbeddingMatrix& e, const LsaParams& p) {
  if (e.layout != Layout::concat) throw LayoutError("the LSA model takes the Concat layout");
  if (e.rows() != p.d() + 1) throw ShapeError("embedding height does not match LSA dimension");
}

}  // namespace

Tensor lsa_forward(const EmbeddingMatrix& e, const LsaParams& p) {
  require_concat(e, p);
  ndiff::Graph g;
  return lsa_forward(g.constant(e.data), g.constant(p.w_pv), g.constant(p.w_kq)).value();
}

double lsa_predict(const EmbeddingMatrix& e, const LsaParams& p) {
  const Tensor out = lsa_forward(e, p);
  return out(out.rows() - 1, out.cols() - 1);
}

double lsa_predict_expanded(const EmbeddingMatrix& e, const LsaParams& p) {
  require_concat(e, p);
  const std::size_t d = p.d(), cols = e.cols();
  const double n = static_cast<double>(cols - 1);
  // left = (w21_PV^T, w22_PV), right = (W11_KQ ; w21_KQ^T) x_q
  Vec right(d + 1, 0.0);
  for (std::size_t r = 0; r <= d; ++r)
    for (std::size_t j = 0; j < d; ++j) right[r] += p.w_kq(r, j) * e.data(j, cols - 1);
  Vec cov_right(d + 1, 0.0);  // (E E^T / N) right
  for (std::size_t c = 0; c < cols; ++c) {
    double proj = 0.0;
    for (std::size_t r = 0; r <= d; ++r) proj += e.data(r, c) * right[r];
    for (std::size_t r = 0; r <= d; ++r) cov_right[r] += e.data(r, c) * proj;
  }
  double out = 0.0;
  for (std::size_t r = 0; r <= d; ++r) out += p.w_pv(d, r) * cov_right[r];
  return out / n;
}

TrainLsaConfig TrainLsaConfig::paper_scale() {
  TrainLsaConfig c;
  c.d = 20;
  c.n = 40;
  c.batch = 1024;
  c.steps = 2000000;
  c.lr = 1e-6;
  return c;
}

TrainLsaConfig TrainLsaConfig::desk() { return TrainLsaConfig{}; }

Var lsa_batch_loss(ndiff::Graph& g, Var w_pv, Var w_kq, std::span<const RegressionTask> tasks) {
  if (tasks.empty()) throw EmptyError("lsa_batch_loss: empty batch");
  const std::size_t b = tasks.size(), d = tasks[0].d(), m = tasks[0].m();
  const double inv_n = 1.0 / static_cast<double>(m);
  // Stacked per-task covariances E E^T / N, query columns and labels.
  Tensor cov = Tensor::zeros({b * (d + 1), d + 1});
  Tensor q = Tensor::zeros({b, d + 1});
  Tensor y = Tensor::zeros({b, 1});
  Vec col(d + 1);
  for (std::size_t t = 0; t < b; ++t) {
    const Prompt& p = tasks[t].prompt;
    double* s = cov.ptr() + t * (d + 1) * (d + 1);
    auto accumulate = [&](const Vec& x, double label) {
      std::copy(x.begin(), x.end(), col.begin());
      col[d] = label;
      for (std::size_t i = 0; i <= d; ++i)
        for (std::size_t j = 0; j <= d; ++j) s[i * (d + 1) + j] += col[i] * col[j];
    };
    for (std::size_t i = 0; i < m; ++i) accumulate(p.xs[i], p.ys[i]);
    accumulate(p.x_query, 0.0);
    for (std::size_t i = 0; i < (d + 1) * (d + 1); ++i) s[i] *= inv_n;
    for (std::size_t j = 0; j < d; ++j) q(t, j) = p.x_query[j];
    y[t] = tasks[t].y_query;
  }
  Var pv_row = ndiff::transpose(ndiff::select_rows(w_pv, {d}));
  Var u = ndiff::reshape(ndiff::matmul(g.constant(std::move(cov)), pv_row), {b, d + 1});
  Var yhat = ndiff::sum_rows(ndiff::mul(ndiff::matmul(u, w_kq), g.constant(std::move(q))));
  Var err = ndiff::sub(yhat, g.constant(std::move(y)));
  return ndiff::scale(ndiff::mean(ndiff::square(err)), 0.5);
}

LsaTrainResult train_lsa(const TrainLsaConfig& cfg) {
  if (cfg.d == 0 || cfg.n == 0 || cfg.batch == 0 || cfg.steps == 0 || cfg.log_every == 0) {
    throw std::invalid_argument("train_lsa: sizes must be positive");
  }
  if (cfg.antithetic && cfg.batch % 2 != 0) throw std::invalid_argument("train_lsa: antithetic batches must be even");
  LsaTrainResult res;
  res.params = LsaParams::structured_init(cfg.d, cfg.init_scale);
  std::vector<RegressionTask> tasks(cfg.batch);
  const std::uint64_t stream = Rng::tag("lsa-train");
  double window = 0.0;
  std::size_t window_n = 0;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const std::size_t fresh = cfg.antithetic ? cfg.batch / 2 : cfg.batch;
    for (std::size_t s = 0; s < fresh; ++s) {
      tasks[s] = sample_task(Rng::derive_key(cfg.seed, {stream, step, s}), cfg.d, cfg.n);
      if (cfg.antithetic) {
        RegressionTask& twin = tasks[fresh + s];
        twin = tasks[s];
        for (auto& v : twin.w) v = -v;
        for (auto& v : twin.prompt.ys) v = -v;
        twin.y_query = -twin.y_query;
      }
    }
    ndiff::Graph g;
    Var w_pv = g.variable(res.params.w_pv);
    Var w_kq = g.variable(res.params.w_kq);
    double loss = 0.0;
    try {
      Var l = lsa_batch_loss(g, w_pv, w_kq, tasks);
      loss = l.value().item();
      if (!(2.0 * loss <= 1e6)) throw NonFiniteError("loss");
      auto grads = ndiff::grad(g, l, {w_pv, w_kq});
      for (std::size_t i = 0; i < grads[0].numel(); ++i) {
        res.params.w_pv[i] -= cfg.lr * grads[0][i];
        res.params.w_kq[i] -= cfg.lr * grads[1][i];
      }
    } catch (const NonFiniteError&) {
      std::vector<double> trace;
      for (const auto& c : res.trace) trace.push_back(c.loss);
      trace.push_back(2.0 * loss);
      throw DivergenceError("train_lsa diverged at step " + std::to_string(step), std::move(trace));
    }
    window += 2.0 * loss;
    ++window_n;
    if (step % cfg.log_every == 0 || step == cfg.steps) {
      res.trace.push_back({step, window / static_cast<double>(window_n)});
      window = 0.0;
      window_n = 0;
      if (cfg.keep_snapshots) res.snapshots.push_back(res.params);
    }
  }
  return res;
}

AttackMatrix extract_attack_matrix(const LsaParams& p, double tol) {
  AttackMatrix am;
  am.w = p.w11_kq();
  const double w22 = p.w22_pv();
  for (auto& v : am.w.data()) v *= w22;
  const double off = norm(p.w21_pv()) + norm(p.w12_pv()) + norm(p.w21_kq());
  const double total = norm(p.w_pv.data()) + norm(p.w_kq.data());
  am.off_block_norm_ratio = off == 0.0 ? 0.0 : off / total;
  am.structured = am.off_block_norm_ratio <= tol;
  return am;
}

Prompt apply_attack(const Prompt& prompt, const ClosedFormAttack& attack) {
  if (attack.index >= prompt.m()) throw std::out_of_range("apply_attack: index out of range");
  Prompt out = prompt;
  out.xs[attack.index] = attack.x_adv;
  out.ys[attack.index] = attack.y_adv;
  return out;
}

namespace {

constexpr double kDegenerate = 1e-10;

struct Residual {
  Vec w_xq;         // W x_q
  double required;  // M (y_bad - (1/M) sum_{i != index} y_i x_i^T W x_q)
};

Residual required_product(const Prompt& prompt, const LsaParams& p, double y_bad, std::size_t index, double tol) {
  if (index >= prompt.m()) throw std::out_of_range("closed-form attack: index out of range");
  if (prompt.d() != p.d()) throw ShapeError("closed-form attack: prompt dimension differs from model");
  const AttackMatrix am = extract_attack_matrix(p, tol);
  if (!am.structured) {
    throw StructureError("closed-form attack needs block-structured parameters (off-block ratio " +
                         std::to_string(am.off_block_norm_ratio) + "); use the gradient attack");
  }
  const std::size_t d = p.d(), m = prompt.m();
  Residual r;
  r.w_xq.assign(d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) r.w_xq[i] += am.w(i, j) * prompt.x_query[j];
  double rest = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    if (i != index) rest += prompt.ys[i] * dot(prompt.xs[i], r.w_xq);
  r.required = static_cast<double>(m) * y_bad - rest;
  return r;
}

}  // namespace

ClosedFormAttack closed_form_y_attack(const Prompt& prompt, const LsaParams& p, double y_bad, std::size_t index,
                                      const XAdvSource& source, double tol) {
  const Residual r = required_product(prompt, p, y_bad, index, tol);
  ClosedFormAttack a{index, prompt.xs[index], 0.0};
  if (const auto* fresh = std::get_if<FreshGaussian>(&source)) {
    Rng rng(fresh->seed);
    for (auto& v : a.x_adv) v = rng.normal();
  }
  const double denom = dot(a.x_adv, r.w_xq);
  if (std::abs(denom) < kDegenerate) throw DegenerateDirection("y-attack: x_adv^T W x_q vanishes");
  a.y_adv = r.required / denom;
  return a;
}

ClosedFormAttack closed_form_x_attack(const Prompt& prompt, const LsaParams& p, double y_bad, std::size_t index,
                                      double y_adv, double tol) {
  if (y_adv == 0.0) throw ZeroLabel("x-attack: y_adv must be non-zero");
  const Residual r = required_product(prompt, p, y_bad, index, tol);
  const double n2 = dot(r.w_xq, r.w_xq);
  if (std::sqrt(n2) < kDegenerate) throw DegenerateDirection("x-attack: W x_q vanishes");
  ClosedFormAttack a{index, Vec(r.w_xq.size()), y_adv};
  const double c = r.required / (y_adv * n2);
  for (std::size_t i = 0; i < a.x_adv.size(); ++i) a.x_adv[i] = c * r.w_xq[i];
  return a;
}

ClosedFormAttack closed_form_z_attack(const Prompt& prompt, const LsaParams& p, double y_bad, std::size_t index,
                                      double tol) {
  const Residual r = required_product(prompt, p, y_bad, index, tol);
  const double n2 = dot(r.w_xq, r.w_xq);
  if (std::sqrt(n2) < kDegenerate) throw DegenerateDirection("z-attack: W x_q vanishes");
  Vec v(r.w_xq.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = r.required / n2 * r.w_xq[i];
  const double vn = norm(v);
  if (vn == 0.0) return {index, Vec(v.size(), 0.0), 1.0};
  const double y_adv = std::sqrt(vn);
  for (auto& x : v) x /= y_adv;
  return {index, std::move(v), y_adv};
}

Var LsaPredictor::predict_query(ndiff::Graph& g, Var xs, Var ys, const Tensor& x_query, std::size_t batch,
                                std::size_t m) const {
  const std::size_t d = params_.d();
  if (xs.value().cols() != d) throw ShapeError("LsaPredictor: prompt dimension differs from model");
  Var w_pv = g.constant(params_.w_pv);
  Var w_kq = g.constant(params_.w_kq);
  std::vector<Var> preds;
  preds.reserve(batch);
  std::vector<std::size_t> rows(m);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < m; ++i) rows[i] = b * m + i;
    Tensor q = Tensor::zeros({1, d + 1});
    for (std::size_t j = 0; j < d; ++j) q(0, j) = x_query(b, j);
    std::vector<Var> cols{ndiff::select_rows(xs, rows), ndiff::select_rows(ys, rows)};
    std::vector<Var> tokens{ndiff::concat_cols(cols), g.constant(std::move(q))};
    Var e = ndiff::transpose(ndiff::concat_rows(tokens));
    Var out = lsa_forward(e, w_pv, w_kq);
    Var last_row = ndiff::transpose(ndiff::select_rows(out, {d}));
    preds.push_back(ndiff::select_rows(last_row, {m}));
  }
  return ndiff::concat_rows(preds);
}

}  // namespace icllab::lsa

// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#include "icllab/attack.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "icllab/errors.hpp"
#include "icllab/ndiff/ops.hpp"
#include "icllab/rng.hpp"

namespace icllab::attack {

using ndiff::Tensor;
using ndiff::Var;

std::string to_string(AttackType t) {
  switch (t) {
    case AttackType::x: return "x";
    case AttackType::y: return "y";
    case AttackType::z: return "z";
  }
  return "?";
}

AttackType parse_attack_type(std::string_view s) {
  if (s.ends_with("-attack")) s.remove_suffix(7);
  if (s == "x") return AttackType::x;
  if (s == "y") return AttackType::y;
  if (s == "z") return AttackType::z;
  throw std::invalid_argument("unknown attack type '" + std::string(s) + "' (expected x, y or z)");
}

AttackSpec AttackSpec::ols_defaults(AttackType type, std::size_t k) {
  AttackSpec s;
  s.type = type;
  s.k = k;
  s.iters = 1000;
  s.lr_x = 0.01;
  s.lr_y = 0.01;
  return s;
}

std::vector<std::size_t> select_indices(const IndexPolicy& policy, std::size_t m, std::size_t k,
                                        std::uint64_t stream) {
  if (k > m) throw BudgetError("attack budget k=" + std::to_string(k) + " exceeds the " + std::to_string(m) +
                               " in-context examples");
  std::vector<std::size_t> out;
  if (const auto* fixed = std::get_if<Fixed>(&policy)) {
    out = fixed->indices;
    std::sort(out.begin(), out.end());
    if (out.size() != k || std::adjacent_find(out.begin(), out.end()) != out.end() ||
        (!out.empty() && out.back() >= m)) {
      throw std::invalid_argument("fixed attack indices must be " + std::to_string(k) + " distinct values below " +
                                  std::to_string(m));
    }
    return out;
  }
  Rng rng = Rng::derive(std::get<RandomSubset>(policy).seed, {Rng::tag("attack-indices"), stream});
  std::vector<std::size_t> pool(m);
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(m - i)]);
  out.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

struct Best {
  double tae = 0.0;
  std::vector<Vec> xs;  // attacked rows at the best iterate, in index order
  std::vector<double> ys;
  bool seen = false;
};

double sq(double v) { return v * v; }

void finish(AttackResult& r, const Best& best, const PromptBatch& start, std::size_t b) {
  r.perturbed = start.prompt(b);
  if (best.seen) {
    for (std::size_t j = 0; j < r.indices.size(); ++j) {
      r.perturbed.xs[r.indices[j]] = best.xs[j];
      r.perturbed.ys[r.indices[j]] = best.ys[j];
    }
  }
  r.tae_final = sq(r.best_prediction - r.y_bad);
  r.gte_final = sq(r.best_prediction - r.y_clean);
}

}  // namespace

std::vector<AttackResult> hijack_batch(const Predictor& model, std::span<const RegressionTask> tasks,
                                       std::span<const double> y_bad, const AttackSpec& spec,
                                       std::uint64_t first_stream) {
  if (tasks.empty()) throw EmptyError("hijack: no prompts");
  if (y_bad.size() != tasks.size()) throw ShapeError("hijack: one target per prompt required");
  if (!(spec.lr_x > 0.0) || !(spec.lr_y > 0.0)) throw std::invalid_argument("hijack: step sizes must be positive");
  const std::size_t batch = tasks.size(), m = tasks[0].prompt.m(), d = tasks[0].prompt.d();
  if (spec.k > m) throw BudgetError("attack budget k=" + std::to_string(spec.k) + " exceeds M=" + std::to_string(m));

  std::vector<Prompt> prompts;
  prompts.reserve(batch);
  for (const auto& t : tasks) prompts.push_back(t.prompt);
  const PromptBatch clean = PromptBatch::from(prompts);
  const std::vector<double> clean_pred = model.predict(prompts);

  std::vector<AttackResult> res(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    res[b].indices = select_indices(spec.index_policy, m, spec.k, first_stream + b);
    res[b].clean_prediction = clean_pred[b];
    res[b].y_bad = y_bad[b];
    res[b].y_clean = tasks[b].y_query;
  }
  std::vector<Best> best(batch);
  if (spec.k == 0) {
    for (std::size_t b = 0; b < batch; ++b) {
      res[b].best_prediction = res[b].last_prediction = clean_pred[b];
      res[b].tae_trace = {sq(clean_pred[b] - y_bad[b])};
      finish(res[b], best[b], clean, b);
    }
    return res;
  }

  const bool upd_x = spec.type != AttackType::y;
  const bool upd_y = spec.type != AttackType::x;
  Tensor xs = clean.xs, ys = clean.ys;
  if (spec.init == InitPolicy::zero) {
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i : res[b].indices) {
        const std::size_t row = b * m + i;
        if (upd_x)
          for (std::size_t j = 0; j < d; ++j) xs(row, j) = 0.0;
        // z-attacks keep the label: zeroing both halves of a bilinear term is a saddle.
        if (spec.type == AttackType::y) ys[row] = 0.0;
      }
    }
  }
  Tensor target = Tensor::zeros({batch, 1});
  for (std::size_t b = 0; b < batch; ++b) target[b] = y_bad[b];

  std::vector<bool> frozen(batch, false);
  try {
    for (std::size_t t = 0; t <= spec.iters; ++t) {
      ndiff::Graph g;
      Var xv = upd_x ? g.variable(xs) : g.constant(xs);
      Var yv = upd_y ? g.variable(ys) : g.constant(ys);
      Var pred = model.predict_query(g, xv, yv, clean.x_query, batch, m);
      for (std::size_t b = 0; b < batch; ++b) {
        if (frozen[b]) continue;
        const double p = pred.value()[b];
        const double tae = sq(p - y_bad[b]);
        res[b].tae_trace.push_back(tae);
        res[b].last_prediction = p;
        if (!best[b].seen || tae < best[b].tae) {
          Best& bb = best[b];
          bb.seen = true;
          bb.tae = tae;
          bb.xs.clear();
          bb.ys.clear();
          for (std::size_t i : res[b].indices) {
            const std::size_t row = b * m + i;
            bb.xs.emplace_back(xs.ptr() + row * d, xs.ptr() + (row + 1) * d);
            bb.ys.push_back(ys[row]);
          }
          res[b].best_prediction = p;
          res[b].best_iter = t;
        }
      }
      if (t == spec.iters) break;
      Var loss = ndiff::sum(ndiff::square(ndiff::sub(pred, g.constant(target))));
      std::vector<Var> wrt{xv, yv};
      const auto grads = ndiff::grad(g, loss, wrt);
      for (std::size_t b = 0; b < batch; ++b) {
        if (frozen[b]) continue;
        bool finite = true;
        for (std::size_t i : res[b].indices) {
          const std::size_t row = b * m + i;
          if (upd_x)
            for (std::size_t j = 0; j < d; ++j) finite = finite && std::isfinite(xs(row, j) - spec.lr_x * grads[0](row, j));
          if (upd_y) finite = finite && std::isfinite(ys[row] - spec.lr_y * grads[1][row]);
        }
        if (!finite) {
          frozen[b] = true;
          res[b].diverged = true;
          continue;
        }
        for (std::size_t i : res[b].indices) {
          const std::size_t row = b * m + i;
          if (upd_x)
            for (std::size_t j = 0; j < d; ++j) xs(row, j) -= spec.lr_x * grads[0](row, j);
          if (upd_y) ys[row] -= spec.lr_y * grads[1][row];
        }
      }
    }
  } catch (const Error& e) {
    const bool numeric = dynamic_cast<const NonFiniteError*>(&e) || dynamic_cast<const IllConditioned*>(&e);
    if (!numeric) throw;
    if (batch > 1) {
      // Isolate the failing prompt(s): rerun one prompt at a time.
      std::vector<AttackResult> out;
      out.reserve(batch);
      for (std::size_t b = 0; b < batch; ++b)
        out.push_back(hijack_batch(model, tasks.subspan(b, 1), y_bad.subspan(b, 1), spec, first_stream + b)[0]);
      return out;
    }
    res[0].diverged = true;
    if (!best[0].seen) {
      res[0].best_prediction = res[0].last_prediction = res[0].clean_prediction;
      res[0].tae_trace.push_back(sq(res[0].clean_prediction - y_bad[0]));
    }
  }
  for (std::size_t b = 0; b < batch; ++b) finish(res[b], best[b], clean, b);
  return res;
}

AttackResult hijack(const Predictor& model, const RegressionTask& task, const HijackTarget& target,
                    const AttackSpec& spec) {
  const double yb = target.y_bad;
  return hijack_batch(model, std::span<const RegressionTask>(&task, 1), std::span<const double>(&yb, 1), spec)[0];
}

// ---------------------------------------------------------------------------

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMat> cmap(const Tensor& t) { return {t.ptr(), static_cast<Eigen::Index>(t.rows()),
                                                         static_cast<Eigen::Index>(t.cols())}; }

void check_gram(const Eigen::MatrixXd& gram) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > kMaxCondition) {
    throw IllConditioned("X^T X is singular or ill-conditioned (condition number " +
                         (lo > 0.0 ? std::to_string(hi / lo) : std::string("inf")) + ")");
  }
}

}  // namespace

OlsModel ols_fit(const Tensor& x, const Vec& y) {
  if (x.rank() != 2 || x.rows() != y.size()) throw ShapeError("ols_fit: X must be M x d with M labels");
  const std::size_t m = x.rows(), d = x.cols();
  if (m < d) throw IllConditioned("ols_fit: fewer examples than dimensions");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(cmap(x));
  const auto& s = svd.singularValues();
  const double lo = s(s.size() - 1), hi = s(0);
  if (!(lo > 0.0) || (hi / lo) * (hi / lo) > kMaxCondition) {
    throw IllConditioned("ols_fit: X^T X is singular or ill-conditioned");
  }
  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(m));
  const Eigen::VectorXd w = cmap(x).colPivHouseholderQr().solve(yv);
  OlsModel out{x, y, Vec(w.data(), w.data() + d)};
  return out;
}

OlsModel ols_fit(const Prompt& prompt) {
  const PromptBatch pb = PromptBatch::from(std::span<const Prompt>(&prompt, 1));
  return ols_fit(pb.xs, prompt.ys);
}

Vec ols_explicit_inverse(const Tensor& x, const Vec& y) {
  const Eigen::MatrixXd xm = cmap(x);
  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(y.size()));
  const Eigen::VectorXd w = (xm.transpose() * xm).inverse() * xm.transpose() * yv;
  return Vec(w.data(), w.data() + w.size());
}

Var OlsPredictor::predict_query(ndiff::Graph& g, Var xs, Var ys, const Tensor& x_query, std::size_t batch,
                                std::size_t m) const {
  const std::size_t d = xs.value().cols();
  if (m < d) throw IllConditioned("OLS needs at least d examples");
  std::vector<Var> preds;
  preds.reserve(batch);
  std::vector<std::size_t> rows(m);
  for (std::size_t b = 0; b < batch; ++b) {
    std::iota(rows.begin(), rows.end(), b * m);
    Var xb = ndiff::select_rows(xs, rows);
    Var yb = ndiff::select_rows(ys, rows);
    Var xt = ndiff::transpose(xb);
    Var gram = ndiff::matmul(xt, xb);
    check_gram(cmap(gram.value()));
    Var w = ndiff::solve_spd(gram, ndiff::matmul(xt, yb));
    Tensor q = Tensor::zeros({1, d});
    for (std::size_t j = 0; j < d; ++j) q[j] = x_query(b, j);
    preds.push_back(ndiff::matmul(g.constant(std::move(q)), w));
  }
  return ndiff::concat_rows(preds);
}

AttackResult ols_attack(const Tensor& x, const Vec& y, const Vec& x_query, const HijackTarget& target,
                        const AttackSpec& spec) {
  if (x.rank() != 2 || x.rows() != y.size() || x.cols() != x_query.size()) throw ShapeError("ols_attack: shapes");
  RegressionTask task;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    task.prompt.xs.emplace_back(x.ptr() + i * x.cols(), x.ptr() + (i + 1) * x.cols());
    task.prompt.ys.push_back(y[i]);
  }
  task.prompt.x_query = x_query;
  const OlsModel fit = ols_fit(x, y);
  task.w = fit.w_hat;
  task.y_query = fit.predict(x_query);
  return hijack(OlsPredictor{}, task, target, spec);
}

}  // namespace icllab::attack

// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#include "icllab/evalx.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "icllab/errors.hpp"
#include "icllab/parallel.hpp"
#include "icllab/rng.hpp"

namespace icllab::evalx {

namespace {

double sq(double v) { return v * v; }

double mean_sq_dev(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.empty()) throw EmptyError(std::string(what) + ": no predictions");
  if (a.size() != b.size()) throw ShapeError(std::string(what) + ": predictions and targets differ in length");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += sq(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

struct ChunkRange {
  std::size_t begin, end;
};

std::vector<ChunkRange> chunks(std::size_t n, std::size_t chunk) {
  chunk = std::max<std::size_t>(chunk, 1);
  std::vector<ChunkRange> out;
  for (std::size_t b = 0; b < n; b += chunk) out.push_back({b, std::min(n, b + chunk)});
  return out;
}

std::vector<double> predict_chunked(const Predictor& model, std::span<const Prompt> prompts, std::size_t chunk,
                                    std::size_t threads) {
  std::vector<double> out(prompts.size());
  const auto parts = chunks(prompts.size(), chunk);
  parallel_for(parts.size(), threads, [&](std::size_t c) {
    const auto [b, e] = parts[c];
    const auto p = model.predict(prompts.subspan(b, e - b));
    std::copy(p.begin(), p.end(), out.begin() + static_cast<std::ptrdiff_t>(b));
  });
  return out;
}

std::vector<RegressionTask> eval_tasks(std::uint64_t seed, std::size_t n, std::size_t d, std::size_t m) {
  std::vector<RegressionTask> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(eval_task(seed, i, d, m));
  return out;
}

// Runs the configured attack on every task, chunk by chunk.
std::vector<attack::AttackResult> attack_all(const Predictor& model, std::span<const RegressionTask> tasks,
                                             std::span<const double> y_bad, const attack::AttackSpec& spec,
                                             std::size_t chunk, std::size_t threads) {
  std::vector<attack::AttackResult> out(tasks.size());
  const auto parts = chunks(tasks.size(), chunk);
  parallel_for(parts.size(), threads, [&](std::size_t c) {
    const auto [b, e] = parts[c];
    auto r = attack::hijack_batch(model, tasks.subspan(b, e - b), y_bad.subspan(b, e - b), spec, b);
    std::move(r.begin(), r.end(), out.begin() + static_cast<std::ptrdiff_t>(b));
  });
  return out;
}

}  // namespace

double gte(std::span<const double> preds, std::span<const double> y_clean) {
  return mean_sq_dev(preds, y_clean, "gte");
}

double tae(std::span<const double> preds, std::span<const double> y_bad) { return mean_sq_dev(preds, y_bad, "tae"); }

Aggregate aggregate(std::span<const double> values) {
  if (values.empty()) throw EmptyError("aggregate: no values");
  Aggregate a;
  a.n = values.size();
  double s = 0.0;
  for (double v : values) s += v;
  a.mean = s / static_cast<double>(a.n);
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t h = a.n / 2;
  a.median = a.n % 2 ? sorted[h] : 0.5 * (sorted[h - 1] + sorted[h]);
  if (a.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += sq(v - a.mean);
    a.se = std::sqrt(ss / static_cast<double>(a.n - 1)) / std::sqrt(static_cast<double>(a.n));
  }
  return a;
}

std::vector<CellSummary> EvalReport::cells() const {
  using Key = std::tuple<std::string, std::string, double, std::size_t>;
  std::map<Key, std::size_t> index;
  std::vector<CellSummary> out;
  std::vector<std::vector<double>> g, t;
  for (const auto& r : records) {
    const Key key{r.model_id, r.attack_type, r.alpha, r.k};
    auto [it, fresh] = index.try_emplace(key, out.size());
    if (fresh) {
      out.push_back({r.model_id, r.attack_type, r.alpha, r.k, {}, {}});
      g.emplace_back();
      t.emplace_back();
    }
    g[it->second].push_back(r.gte);
    t[it->second].push_back(r.tae);
  }
  for (std::size_t c = 0; c < out.size(); ++c) {
    out[c].gte = aggregate(g[c]);
    out[c].tae = aggregate(t[c]);
  }
  return out;
}

void EvalReport::append(const EvalReport& other) {
  records.insert(records.end(), other.records.begin(), other.records.end());
  skipped += other.skipped;
}

RegressionTask eval_task(std::uint64_t seed, std::size_t idx, std::size_t d, std::size_t m) {
  return sample_task_at(Rng::derive_key(seed, {Rng::tag("eval-prompts")}), idx, d, m);
}

HijackTarget eval_target(const RegressionTask& task, double alpha, std::uint64_t seed, std::size_t idx) {
  return make_target(task, AlphaInterp{alpha, {}}, Rng::derive_key(seed, {Rng::tag("eval-target"), idx}));
}

attack::IndexPolicy eval_indices(std::uint64_t seed) {
  return attack::RandomSubset{Rng::derive_key(seed, {Rng::tag("eval-index")})};
}

EvalReport attack_sweep(const Predictor& model, const SweepGrid& grid, const SweepOptions& opt) {
  if (opt.n_prompts == 0 || opt.seeds.empty()) throw EmptyError("attack_sweep: no prompts");
  EvalReport rep;
  for (std::uint64_t seed : opt.seeds) {
    const auto tasks = eval_tasks(seed, opt.n_prompts, opt.d, opt.m);
    for (auto type : grid.types) {
      for (double alpha : grid.alphas) {
        std::vector<double> y_bad(tasks.size());
        for (std::size_t i = 0; i < tasks.size(); ++i) y_bad[i] = eval_target(tasks[i], alpha, seed, i).y_bad;
        for (std::size_t k : grid.ks) {
          attack::AttackSpec spec = opt.attack;
          spec.type = type;
          spec.k = k;
          spec.index_policy = eval_indices(seed);
          const auto res = attack_all(model, tasks, y_bad, spec, opt.chunk, opt.threads);
          for (std::size_t i = 0; i < tasks.size(); ++i) {
            const auto& r = res[i];
            rep.records.push_back({model.id(), seed, alpha, attack::to_string(type), k, i, r.gte_final, r.tae_final,
                                   r.clean_prediction, r.best_prediction, r.y_bad, r.y_clean});
          }
        }
      }
    }
  }
  return rep;
}

EvalReport theory_attack_transfer(const lsa::LsaParams& params, std::span<const Predictor* const> targets,
                                  std::span<const double> alphas, std::size_t n_prompts, std::uint64_t seed,
                                  std::size_t m) {
  const auto am = lsa::extract_attack_matrix(params);
  if (!am.structured) {
    throw StructureError("theory attacks need block-structured LSA parameters (off-block ratio " +
                         std::to_string(am.off_block_norm_ratio) + ")");
  }
  const std::size_t d = params.d();
  const auto tasks = eval_tasks(seed, n_prompts, d, m);
  std::vector<Prompt> clean;
  for (const auto& t : tasks) clean.push_back(t.prompt);
  EvalReport rep;
  for (double alpha : alphas) {
    for (attack::AttackType type : {attack::AttackType::x, attack::AttackType::y, attack::AttackType::z}) {
      std::vector<Prompt> adv, base;
      std::vector<std::size_t> idx;
      std::vector<double> y_bad;
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        const Prompt& p = tasks[i].prompt;
        const double yb = eval_target(tasks[i], alpha, seed, i).y_bad;
        try {
          lsa::ClosedFormAttack a;
          switch (type) {
            case attack::AttackType::x: a = lsa::closed_form_x_attack(p, params, yb, 0, p.ys[0]); break;
            case attack::AttackType::y: a = lsa::closed_form_y_attack(p, params, yb, 0); break;
            case attack::AttackType::z: a = lsa::closed_form_z_attack(p, params, yb, 0); break;
          }
          adv.push_back(lsa::apply_attack(p, a));
          base.push_back(p);
          idx.push_back(i);
          y_bad.push_back(yb);
        } catch (const DegenerateDirection&) {
          ++rep.skipped;
        } catch (const ZeroLabel&) {
          ++rep.skipped;
        }
      }
      if (adv.empty()) continue;
      for (const Predictor* target : targets) {
        const auto pa = target->predict(adv);
        const auto pc = target->predict(base);
        for (std::size_t j = 0; j < adv.size(); ++j) {
          const double yc = tasks[idx[j]].y_query;
          rep.records.push_back({target->id(), seed, alpha, attack::to_string(type), 1, idx[j], sq(pa[j] - yc),
                                 sq(pa[j] - y_bad[j]), pc[j], pa[j], y_bad[j], yc});
        }
      }
    }
  }
  return rep;
}

std::vector<TransferReport::Cell> TransferReport::cells() const {
  using Key = std::tuple<std::string, std::string, double>;
  std::map<Key, std::size_t> index;
  std::vector<Cell> out;
  std::vector<std::vector<double>> s, t, p;
  for (const auto& r : records) {
    auto [it, fresh] = index.try_emplace(Key{r.source_id, r.target_id, r.alpha}, out.size());
    if (fresh) {
      out.push_back({r.source_id, r.target_id, r.alpha, {}, {}, {}});
      s.emplace_back();
      t.emplace_back();
      p.emplace_back();
    }
    s[it->second].push_back(r.source_tae);
    t[it->second].push_back(r.target_tae);
    p[it->second].push_back(r.pred_mse);
  }
  for (std::size_t c = 0; c < out.size(); ++c) {
    out[c].source_tae = aggregate(s[c]);
    out[c].target_tae = aggregate(t[c]);
    out[c].pred_mse = aggregate(p[c]);
  }
  return out;
}

TransferReport transfer_eval(const Predictor& source, std::span<const Predictor* const> targets,
                             const TransferOptions& opt) {
  if (opt.n_prompts == 0) throw EmptyError("transfer_eval: no prompts");
  const auto tasks = eval_tasks(opt.seed, opt.n_prompts, opt.d, opt.m);
  std::vector<double> y_bad(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) y_bad[i] = eval_target(tasks[i], opt.alpha, opt.seed, i).y_bad;
  attack::AttackSpec spec = opt.attack;
  spec.index_policy = eval_indices(opt.seed);
  const auto res = attack_all(source, tasks, y_bad, spec, opt.chunk, opt.threads);
  std::vector<Prompt> adv;
  adv.reserve(res.size());
  for (const auto& r : res) adv.push_back(r.perturbed);
  const auto ps = predict_chunked(source, adv, opt.chunk, opt.threads);
  TransferReport rep;
  for (const Predictor* target : targets) {
    const auto pt = target == &source ? ps : predict_chunked(*target, adv, opt.chunk, opt.threads);
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      const double yc = tasks[i].y_query;
      rep.records.push_back({source.id(), target->id(), opt.seed, opt.alpha, attack::to_string(spec.type), spec.k, i,
                             ps[i], pt[i], sq(ps[i] - y_bad[i]), sq(pt[i] - y_bad[i]), sq(pt[i] - yc),
                             sq(ps[i] - pt[i]), y_bad[i], yc});
    }
  }
  return rep;
}

TransferReport transfer_matrix(std::span<const Predictor* const> models, const TransferOptions& opt) {
  TransferReport rep;
  for (const Predictor* src : models) {
    auto r = transfer_eval(*src, models, opt);
    rep.records.insert(rep.records.end(), r.records.begin(), r.records.end());
  }
  return rep;
}

TransferReport ols_tf_mse(std::span<const Predictor* const> models, std::span<const double> alphas,
                          Direction direction, const attack::AttackSpec& ols_spec,
                          const attack::AttackSpec& model_spec, const TransferOptions& opt) {
  const attack::OlsPredictor ols;
  TransferReport rep;
  for (const Predictor* model : models) {
    for (double alpha : alphas) {
      TransferOptions o = opt;
      o.alpha = alpha;
      const bool from_ols = direction == Direction::ols_to_model;
      o.attack = from_ols ? ols_spec : model_spec;
      const Predictor* target = from_ols ? model : static_cast<const Predictor*>(&ols);
      auto r = transfer_eval(from_ols ? static_cast<const Predictor&>(ols) : *model,
                             std::span<const Predictor* const>(&target, 1), o);
      rep.records.insert(rep.records.end(), r.records.begin(), r.records.end());
    }
  }
  return rep;
}

}  // namespace icllab::evalx

// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

// Desk-scale acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Set ICLLAB_ACCEPT_CACHE=<dir> to reuse
// trained checkpoints between runs (training is deterministic, so a cached
// model is bit-identical to a fresh one built by the same code).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "icllab/advtrain.hpp"
#include "icllab/attack.hpp"
#include "icllab/errors.hpp"
#include "icllab/evalx.hpp"
#include "icllab/gpt.hpp"
#include "icllab/lsa.hpp"
#include "icllab/ndiff/ops.hpp"
#include "icllab/runner/checkpoint.hpp"
#include "icllab/runner/results.hpp"
#include "icllab/runner/run.hpp"
#include "test_util.hpp"

using namespace icllab;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

constexpr std::uint64_t kEvalSeed = 1000;
constexpr std::size_t kPrompts = 200;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  return evalx::aggregate(v).median;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  return evalx::aggregate(v).mean;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Outcome {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

std::vector<Outcome> g_outcomes;

void report(Outcome o) {
  std::printf("%s  criterion %d  %s: %s  (%.1f s)\n", o.pass ? "PASS" : "FAIL", o.id, o.name.c_str(), o.detail.c_str(),
              o.seconds);
  std::fflush(stdout);
  g_outcomes.push_back(std::move(o));
}

void note(const std::string& s) {
  std::printf("      %s\n", s.c_str());
  std::fflush(stdout);
}

// ---------------------------------------------------------------------------
// Model cache.

std::optional<fs::path> cache_dir() {
  const char* d = std::getenv("ICLLAB_ACCEPT_CACHE");
  if (!d || !*d) return std::nullopt;
  fs::create_directories(d);
  return fs::path(d);
}

std::string gpt_key(const std::string& tag, const gpt::GptConfig& c, const gpt::TrainHp& h) {
  std::ostringstream s;
  s << tag << ' ' << ICLLAB_VERSION << ' ' << c.n_layers << ' ' << c.n_heads << ' ' << c.n_embd << ' ' << c.d << ' '
    << c.max_positions << ' ' << c.curriculum << ' ' << c.seed << ' ' << runner::format_double(h.lr) << ' '
    << h.warmup << ' ' << h.steps << ' ' << h.batch << ' ' << h.n;
  return tag + "-" + runner::config_hash(s.str());
}

std::optional<ParamSet> cached(const std::string& key) {
  auto dir = cache_dir();
  if (!dir || !fs::exists(*dir / (key + ".manifest"))) return std::nullopt;
  return runner::load_checkpoint((*dir / key).string()).params;
}

void store(const std::string& key, const runner::Checkpoint& c) {
  if (auto dir = cache_dir()) runner::save_checkpoint((*dir / key).string(), c);
}

// Full base run kept in memory so A-FT can continue it with the optimiser state intact.
gpt::Trainer train_gpt(const std::string& tag, const gpt::GptConfig& c, const gpt::TrainHp& h) {
  const auto t0 = Clock::now();
  gpt::Trainer tr(c, h);
  for (std::size_t s = 0; s < h.steps; ++s) tr.step(tr.sample_batch(true));
  note(tag + ": trained " + std::to_string(h.steps) + " steps in " + fmt("%.0f", seconds_since(t0)) + " s, final loss " +
       fmt("%.4f", tr.trace().empty() ? std::nan("") : tr.trace().back().loss));
  store(gpt_key(tag, c, h), runner::gpt_checkpoint(c, tr.params()));
  return tr;
}

ParamSet train_gpt_cached(const std::string& tag, const gpt::GptConfig& c, const gpt::TrainHp& h) {
  if (auto p = cached(gpt_key(tag, c, h))) {
    note("loaded cached " + tag);
    return *p;
  }
  return train_gpt(tag, c, h).params();
}

// ---------------------------------------------------------------------------

std::vector<evalx::EvalRecord> select(const std::vector<evalx::EvalRecord>& rs,
                                      const std::function<bool(const evalx::EvalRecord&)>& keep) {
  std::vector<evalx::EvalRecord> out;
  for (const auto& r : rs)
    if (keep(r)) out.push_back(r);
  return out;
}

std::vector<double> col(const std::vector<evalx::EvalRecord>& rs, double evalx::EvalRecord::*f) {
  std::vector<double> v;
  for (const auto& r : rs) v.push_back(r.*f);
  return v;
}

std::vector<double> clean_gte(const std::vector<evalx::EvalRecord>& rs) {
  std::vector<double> v;
  for (const auto& r : rs) v.push_back((r.clean_pred - r.y_clean) * (r.clean_pred - r.y_clean));
  return v;
}

evalx::EvalReport sweep(const Predictor& model, std::vector<attack::AttackType> types, std::vector<std::size_t> ks,
                        const attack::AttackSpec& spec) {
  evalx::SweepGrid g;
  g.alphas = {1.0};
  g.ks = std::move(ks);
  g.types = std::move(types);
  evalx::SweepOptions o;
  o.n_prompts = kPrompts;
  o.seeds = {kEvalSeed};
  o.attack = spec;
  return evalx::attack_sweep(model, g, o);
}

attack::AttackSpec gpt_spec() {
  attack::AttackSpec s;
  s.iters = 100;
  s.lr_x = 1.0;
  s.lr_y = 100.0;
  return s;
}

// ---------------------------------------------------------------------------
// Criterion 7 pieces.

struct Check {
  std::string name;
  bool pass;
  std::string detail;
};

Check fd_random_graphs() {
  using namespace ndiff;
  Rng rng(7);
  std::size_t failures = 0;
  double worst = 0.0;
  const int trials = 100;
  for (int trial = 0; trial < trials; ++trial) {
    std::vector<Tensor> in;
    for (int i = 0; i < 3; ++i) in.push_back(testing::random_tensor(rng, {3, 3}));
    in.push_back(testing::random_tensor(rng, {3}));
    std::vector<std::array<std::uint64_t, 3>> program;
    for (int step = 0; step < 6; ++step) program.push_back({rng.below(10), rng.below(64), rng.below(64)});
    auto fn = [program](Graph&, const std::vector<Var>& v) {
      std::vector<Var> pool(v.begin(), v.begin() + 3);
      Var bias = v[3];
      for (const auto& [op, ia, ib] : program) {
        Var a = pool[ia % pool.size()], b = pool[ib % pool.size()], r;
        switch (op) {
          case 0: r = matmul(a, b); break;
          case 1: r = add(a, b); break;
          case 2: r = sub(a, b); break;
          case 3: r = mul(a, b); break;
          case 4: r = gelu(a); break;
          case 5: r = scale(square(a), 0.25); break;
          case 6: r = softmax_rows(a); break;
          case 7: r = transpose(a); break;
          case 8: r = add_row(a, bias); break;
          default: r = layer_norm(a, bias, bias); break;
        }
        pool.push_back(r);
      }
      return ndiff::mean(square(pool.back()));
    };
    const auto res = testing::check_gradients(fn, in, 1e-5, 1e-5, 1e-8);
    failures += res.failures;
    worst = std::max(worst, res.worst_rel);
  }
  return {"fd random graphs", failures == 0,
          std::to_string(trials) + " graphs, worst rel " + fmt("%.2e", worst) + " [<= 1e-5]"};
}

Check fd_gpt() {
  gpt::GptConfig c;
  c.n_layers = 1;
  c.n_heads = 2;
  c.n_embd = 8;
  c.d = 3;
  c.max_positions = 16;
  c.seed = 5;
  const ParamSet p = gpt::init_params(c);
  std::vector<RegressionTask> tasks;
  for (std::uint64_t s = 0; s < 2; ++s) tasks.push_back(sample_task_at(31, s, c.d, 3));
  std::vector<Prompt> prompts;
  for (const auto& t : tasks) prompts.push_back(t.prompt);
  const PromptBatch pb = PromptBatch::from(prompts);
  std::vector<ndiff::Tensor> inputs;
  for (const auto& t : p) inputs.push_back(t.value);
  inputs.push_back(pb.xs);
  inputs.push_back(pb.ys);
  auto fn = [&](ndiff::Graph& g, const std::vector<ndiff::Var>& v) {
    std::vector<ndiff::Var> params(v.begin(), v.end() - 2);
    auto preds = gpt::x_token_predictions(g, c, params, v[v.size() - 2], v.back(), pb.x_query, pb.batch, pb.m);
    return gpt::next_token_mse(g, preds, tasks);
  };
  const auto res = testing::check_gradients(fn, inputs, 1e-5, 1e-4, 1e-8);
  return {"fd 1-layer gpt", res.failures == 0,
          std::to_string(res.checked) + " entries, worst rel " + fmt("%.2e", res.worst_rel) + " [<= 1e-4]"};
}

Check causal_mask(const gpt::GptConfig& c, const ParamSet& p) {
  std::size_t violations = 0, positions = 0;
  Rng rng(4);
  for (std::uint64_t s = 0; s < 3; ++s) {
    const RegressionTask t = sample_task(100 + s, c.d, 10);
    const EmbeddingMatrix e = embed(t, Layout::interleave);
    const auto base = gpt::forward_all(e, p, c);
    for (std::size_t j = 0; j < e.cols(); ++j) {
      EmbeddingMatrix changed = e;
      for (std::size_t r = 0; r < e.rows(); ++r) changed.data(r, j) += 1.0 + rng.normal();
      const auto out = gpt::forward_all(changed, p, c);
      for (std::size_t i = 0; i < j; ++i) violations += out[i] != base[i];
      ++positions;
    }
  }
  return {"causal mask", violations == 0,
          std::to_string(positions) + " perturbed positions, " + std::to_string(violations) + " earlier outputs changed"};
}

Check lsa_position_invariance(const lsa::LsaParams& p) {
  const lsa::LsaPredictor model(p);
  double worst = 0.0;
  std::size_t n = 0;
  Rng rng(12);
  for (std::size_t i = 0; i < 50; ++i) {
    const RegressionTask t = evalx::eval_task(77, i, p.d(), 10);
    const HijackTarget tgt = evalx::eval_target(t, 1.0, 77, i);
    const std::size_t idx = rng.below(10);
    Prompt attacked;
    try {
      attacked = lsa::apply_attack(t.prompt, lsa::closed_form_y_attack(t.prompt, p, tgt.y_bad, idx));
    } catch (const Error&) {
      continue;
    }
    const double ref = model.predict(attacked);
    std::vector<std::size_t> perm(10);
    std::iota(perm.begin(), perm.end(), 0);
    for (int rep = 0; rep < 4; ++rep) {
      for (std::size_t k = perm.size(); k > 1; --k) std::swap(perm[k - 1], perm[rng.below(k)]);
      Prompt q = attacked;
      for (std::size_t k = 0; k < perm.size(); ++k) {
        q.xs[k] = attacked.xs[perm[k]];
        q.ys[k] = attacked.ys[perm[k]];
      }
      worst = std::max(worst, std::abs(model.predict(q) - ref) / std::max(1.0, std::abs(ref)));
    }
    ++n;
  }
  return {"lsa position invariance", worst <= 1e-12 && n >= 45,
          std::to_string(n) + " attacked prompts x 4 permutations, worst rel diff " + fmt("%.2e", worst) +
              " [<= 1e-12]"};
}

Check best_iterate(const gpt::GptPredictor& model) {
  std::size_t bad = 0, n = 0, non_monotone = 0;
  attack::AttackSpec s;
  s.type = attack::AttackType::z;
  s.k = 2;
  s.iters = 40;
  s.lr_x = 5.0;  // large enough that the trace is not monotone
  s.lr_y = 5.0;
  for (std::size_t i = 0; i < 20; ++i) {
    const RegressionTask t = evalx::eval_task(55, i, model.config().d, 10);
    const HijackTarget tgt = evalx::eval_target(t, 1.0, 55, i);
    s.index_policy = attack::RandomSubset{55};
    const auto r = attack::hijack(model, t, tgt, s);
    const auto& tr = r.tae_trace;
    const auto best = static_cast<std::size_t>(std::min_element(tr.begin(), tr.end()) - tr.begin());
    const double replay = model.predict(r.perturbed);
    const bool ok = best == r.best_iter && tr[best] == r.tae_final &&
                    std::abs(replay - r.best_prediction) <= 1e-12 * std::max(1.0, std::abs(replay)) &&
                    r.tae_final <= tr.back();
    bad += !ok;
    non_monotone += r.best_iter != tr.size() - 1;
    ++n;
  }
  return {"best iterate", bad == 0,
          std::to_string(n) + " attacks (" + std::to_string(non_monotone) + " with best before last), " +
              std::to_string(bad) + " contract violations"};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Check csv_determinism() {
  const fs::path dir = fs::temp_directory_path() / ("icllab_accept_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto write = [](const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; };
  write(dir / "lsa.cfg", "[model]\nname = lsa\nd = 5\n[train]\nn = 10\nbatch = 64\nsteps = 2000\nlr = 1e-2\n");
  write(dir / "attack.cfg", "[model]\ncheckpoints = " + (dir / "lsa" / "lsa.manifest").string() +
                                ", ols\n[attack]\ntypes = x, y, z\nks = 1, 3\niters = 20\nlr_x = 0.1\nlr_y = 0.1\n"
                                "[eval]\nalphas = 0, 1\nn_prompts = 20\nseeds = 4, 5\nchunk = 8\n");
  auto run = [&](const std::string& cmd, const fs::path& cfg, const std::string& out, std::size_t threads) {
    runner::RunOptions o;
    o.command = cmd;
    o.config_path = cfg.string();
    o.out_dir = (dir / out).string();
    o.threads = threads;
    std::ostringstream log, err;
    return runner::run(o, log, err);
  };
  bool ok = run("train-lsa", dir / "lsa.cfg", "lsa", 1) == 0 && run("attack", dir / "attack.cfg", "a", 1) == 0;
  ok = ok && run("attack", dir / "a" / "config.txt", "replay", 1) == 0 && run("attack", dir / "attack.cfg", "par", 2) == 0;
  ok = ok && run("train-lsa", dir / "lsa" / "config.txt", "lsa2", 1) == 0;
  const std::string a = slurp(dir / "a" / "results.csv");
  const bool same = ok && !a.empty() && a == slurp(dir / "replay" / "results.csv") &&
                    a == slurp(dir / "par" / "results.csv") &&
                    slurp(dir / "lsa" / "lsa.bin") == slurp(dir / "lsa2" / "lsa.bin");
  const std::size_t rows = static_cast<std::size_t>(std::count(a.begin(), a.end(), '\n'));
  fs::remove_all(dir);
  return {"end-to-end determinism", same,
          "replayed config and 2-thread run: " + std::string(same ? "bit-identical" : "DIFFERENT") + " results.csv (" +
              std::to_string(rows) + " lines) and checkpoint"};
}

}  // namespace

int main() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
  const auto t_all = Clock::now();
  std::printf("icllab acceptance (desk scale)\n");

  // 1. Closed-form hijack exactness on the trained desk LSA.
  lsa::LsaParams lsa_params;
  {
    const auto t0 = Clock::now();
    const lsa::TrainLsaConfig lc = lsa::TrainLsaConfig::desk();
    const std::string key = "lsa-" + runner::config_hash(std::string(ICLLAB_VERSION) + " " + std::to_string(lc.steps) +
                                                         " " + std::to_string(lc.batch) + " " +
                                                         runner::format_double(lc.lr));
    if (auto p = cached(key)) {
      lsa_params = lsa::LsaParams::from_params(*p);
      note("loaded cached lsa");
    } else {
      const auto res = lsa::train_lsa(lc);
      lsa_params = res.params;
      note("lsa: " + std::to_string(lc.steps) + " steps, final loss " + fmt("%.4f", res.trace.back().loss));
      store(key, runner::lsa_checkpoint(lsa_params));
    }
    const lsa::LsaPredictor lsa_model(lsa_params);
    const std::vector<const Predictor*> targets{&lsa_model};
    const std::vector<double> alphas{0.0, 0.5, 1.0};
    Outcome o{1, "closed-form hijack exactness (LSA)"};
    try {
      const auto am = lsa::extract_attack_matrix(lsa_params);
      const auto rep = evalx::theory_attack_transfer(lsa_params, targets, alphas, kPrompts, kEvalSeed, 10);
      std::size_t exact = 0;
      double worst = 0.0;
      for (const auto& r : rep.records) {
        const double err = std::abs(r.attacked_pred - r.y_bad) / std::max(1.0, std::abs(r.y_bad));
        worst = std::max(worst, err);
        exact += err <= 1e-6;
      }
      const double coverage = static_cast<double>(rep.records.size()) / (3.0 * 3.0 * kPrompts);
      o.seconds = seconds_since(t0);
      o.pass = am.structured && exact == rep.records.size() && coverage >= 0.99 && o.seconds <= 300.0;
      o.detail = "structure ratio " + fmt("%.1e", am.off_block_norm_ratio) + "; " + std::to_string(exact) + "/" +
                 std::to_string(rep.records.size()) + " exact, worst rel " + fmt("%.1e", worst) +
                 " [<= 1e-6], coverage " + fmt("%.1f%%", 100.0 * coverage) + " [>= 99%], runtime [<= 300 s]";
    } catch (const StructureError& e) {
      o.seconds = seconds_since(t0);
      o.detail = std::string("trained LSA is not structured: ") + e.what();
    }
    report(o);
  }

  // Base desk GPT shared by criteria 2-5 and 9.
  const gpt::GptConfig gcfg = gpt::GptConfig::desk();
  const gpt::TrainHp ghp = gpt::TrainHp::desk();
  advtrain::AdvTrainConfig ac = advtrain::AdvTrainConfig::desk();
  ac.mode = advtrain::Mode::finetune;
  ac.attack_type = attack::AttackType::x;
  ac.k_train = 1;
  ac.inner_steps = 5;
  ac.t1 = ghp.steps;
  ac.t2 = 5000;
  ac.model = gcfg;
  ac.hp = ghp;
  ac.seed = gcfg.seed;
  const std::string aft_key = gpt_key("gpt-aft", gcfg, ghp) + "-" + std::to_string(ac.t2);
  std::optional<ParamSet> aft_cached = cached(aft_key);
  std::optional<gpt::Trainer> base_trainer;
  ParamSet base_params;
  const auto t_train = Clock::now();
  if (auto p = cached(gpt_key("gpt-base", gcfg, ghp)); p && aft_cached) {
    base_params = *p;
    note("loaded cached gpt-base");
  } else {
    base_trainer.emplace(train_gpt("gpt-base", gcfg, ghp));
    base_params = base_trainer->params();
  }
  const double base_train_s = seconds_since(t_train);
  const gpt::GptPredictor base(gcfg, base_params, "gpt");
  {
    std::vector<double> g;
    for (std::size_t i = 0; i < kPrompts; ++i) {
      const auto t = evalx::eval_task(kEvalSeed, i, gcfg.d, 10);
      const double p = base.predict(t.prompt);
      g.push_back((p - t.y_query) * (p - t.y_query));
    }
    note("base GPT clean GTE " + fmt("%.3f", mean(g)) + " (" + fmt("%.1f%%", 100.0 * mean(g) / gcfg.d) +
         " of d; zero predictor ~ d)");
  }

  // 2. Theory attacks built on the LSA do not transfer to the GPT.
  {
    const auto t0 = Clock::now();
    const lsa::LsaPredictor lsa_model(lsa_params);
    const std::vector<const Predictor*> targets{&lsa_model, &base};
    const std::vector<double> alphas{1.0};
    Outcome o{2, "theory-attack non-transfer (LSA -> GPT, alpha=1)"};
    const auto rep = evalx::theory_attack_transfer(lsa_params, targets, alphas, kPrompts, kEvalSeed, 10);
    bool all = true;
    std::string d;
    for (std::string type : {"x", "y", "z"}) {
      const auto on_lsa = select(rep.records, [&](auto& r) { return r.model_id == "lsa" && r.attack_type == type; });
      const auto on_gpt = select(rep.records, [&](auto& r) { return r.model_id == "gpt" && r.attack_type == type; });
      const double tl = median(col(on_lsa, &evalx::EvalRecord::tae)), tg = median(col(on_gpt, &evalx::EvalRecord::tae));
      const double ga = median(col(on_gpt, &evalx::EvalRecord::gte)), gc = median(clean_gte(on_gpt));
      // A zero LSA median makes any positive GPT median infinitely larger.
      const bool ok = tg >= 10.0 * tl && ga > gc && on_gpt.size() >= kPrompts * 99 / 100;
      all = all && ok;
      d += type + ": TAE gpt " + fmt("%.3g", tg) + " vs lsa " + fmt("%.2g", tl) + ", GTE " + fmt("%.3g", gc) + " -> " +
           fmt("%.3g", ga) + (ok ? "; " : " (fails); ");
    }
    o.pass = all;
    o.detail = d + "[TAE ratio >= 10, attacked GTE > clean GTE, medians]";
    o.seconds = seconds_since(t0);
    report(o);
  }

  // 3. Single-token gradient x-attack on the GPT.
  evalx::EvalReport base_x;
  {
    const auto t0 = Clock::now();
    base_x = sweep(base, {attack::AttackType::x}, {0, 1}, gpt_spec());
    const double clean = median(col(select(base_x.records, [](auto& r) { return r.k == 0; }), &evalx::EvalRecord::tae));
    const double hit = median(col(select(base_x.records, [](auto& r) { return r.k == 1; }), &evalx::EvalRecord::tae));
    Outcome o{3, "gradient hijack on GPT (x, k=1, alpha=1)"};
    o.seconds = seconds_since(t0);
    const double red = 1.0 - hit / clean;
    o.pass = red >= 0.90 && o.seconds <= 600.0;
    o.detail = "median TAE " + fmt("%.4g", clean) + " -> " + fmt("%.4g", hit) + ", reduction " +
               fmt("%.1f%%", 100.0 * red) + " [>= 90%], runtime [<= 600 s]";
    report(o);
  }

  // 4. y-attacks are weaker than x-attacks at k=1.
  {
    const auto t0 = Clock::now();
    const auto gy = sweep(base, {attack::AttackType::y}, {1}, gpt_spec());
    const double gx_med = median(col(select(base_x.records, [](auto& r) { return r.k == 1; }), &evalx::EvalRecord::tae));
    const double gy_med = median(col(gy.records, &evalx::EvalRecord::tae));
    const attack::OlsPredictor ols;
    const auto ols_rep = sweep(ols, {attack::AttackType::x, attack::AttackType::y}, {1},
                               attack::AttackSpec::ols_defaults(attack::AttackType::x, 1));
    const double ox = median(col(select(ols_rep.records, [](auto& r) { return r.attack_type == "x"; }),
                                 &evalx::EvalRecord::tae));
    const double oy = median(col(select(ols_rep.records, [](auto& r) { return r.attack_type == "y"; }),
                                 &evalx::EvalRecord::tae));
    Outcome o{4, "x/y asymmetry at k=1"};
    o.pass = gy_med > gx_med && oy > ox;
    o.detail = "GPT median TAE y " + fmt("%.4g", gy_med) + " vs x " + fmt("%.4g", gx_med) + "; OLS y " +
               fmt("%.4g", oy) + " vs x " + fmt("%.4g", ox) + " [y > x on both]";
    o.seconds = seconds_since(t0);
    report(o);
  }

  // 5. Adversarial fine-tuning from the base run.
  ParamSet aft_params;
  {
    const auto t0 = Clock::now();
    if (aft_cached) {
      aft_params = *aft_cached;
      note("loaded cached A-FT model");
    } else {
      gpt::Trainer tr = *base_trainer;
      aft_params = advtrain::adversarial_finetune(tr, ac).params;
      store(aft_key, runner::gpt_checkpoint(gcfg, aft_params));
    }
    const double train_s = seconds_since(t0);
    const gpt::GptPredictor aft(gcfg, aft_params, "gpt-aft");
    const auto aft_x = sweep(aft, {attack::AttackType::x}, {0, 1}, gpt_spec());
    auto med_tae = [](const evalx::EvalReport& r) {
      return median(col(select(r.records, [](auto& e) { return e.k == 1; }), &evalx::EvalRecord::tae));
    };
    auto clean = [](const evalx::EvalReport& r) {
      return mean(col(select(r.records, [](auto& e) { return e.k == 0; }), &evalx::EvalRecord::gte));
    };
    const double ratio = med_tae(aft_x) / med_tae(base_x);
    const double degr = clean(aft_x) / clean(base_x) - 1.0;
    Outcome o{5, "adversarial fine-tuning (A-FT, T2=5000, k_train=1)"};
    o.seconds = seconds_since(t0);
    o.pass = ratio >= 2.0 && degr <= 0.50 && o.seconds <= 1800.0;
    o.detail = "median TAE at k=1 " + fmt("%.4g", med_tae(base_x)) + " -> " + fmt("%.4g", med_tae(aft_x)) + " (x" +
               fmt("%.2f", ratio) + ") [>= 2x]; clean GTE " + fmt("%.4g", clean(base_x)) + " -> " +
               fmt("%.4g", clean(aft_x)) + " (" + fmt("%+.1f%%", 100.0 * degr) + ") [<= +50%]; A-FT phase " +
               fmt("%.0f", train_s) + " s [<= 1800 s]";
    report(o);
  }

  // 6. OLS invariants.
  {
    const auto t0 = Clock::now();
    double worst_w = 0.0;
    for (std::uint64_t i = 0; i < 200; ++i) {
      const RegressionTask t = sample_task_at(606, i, 5, 10 + i % 20);
      const auto fit = attack::ols_fit(t.prompt);
      for (std::size_t j = 0; j < t.w.size(); ++j) worst_w = std::max(worst_w, std::abs(fit.w_hat[j] - t.w[j]));
    }
    std::size_t hit = 0, n = 0;
    double worst_tae = 0.0;
    for (std::uint64_t i = 0; i < 50; ++i) {
      const RegressionTask t = evalx::eval_task(707, i, 5, 10);
      const HijackTarget tgt = evalx::eval_target(t, 1.0, 707, i);
      const PromptBatch pb = PromptBatch::from(std::span<const Prompt>(&t.prompt, 1));
      auto spec = attack::AttackSpec::ols_defaults(attack::AttackType::x, 10);
      spec.init = attack::InitPolicy::keep_original;
      const auto r = attack::ols_attack(pb.xs, t.prompt.ys, t.prompt.x_query, tgt, spec);
      worst_tae = std::max(worst_tae, r.tae_final);
      hit += r.tae_final <= 1e-3;
      ++n;
    }
    Outcome o{6, "OLS invariant suite"};
    o.pass = worst_w <= 1e-10 && hit == n;
    o.detail = "ols_fit max |w_hat - w| " + fmt("%.1e", worst_w) + " over 200 noiseless instances [<= 1e-10]; " +
               "all-rows x-attack (1000 iters, lr 0.01) " + std::to_string(hit) + "/" + std::to_string(n) +
               " with TAE <= 1e-3, worst " + fmt("%.1e", worst_tae);
    o.seconds = seconds_since(t0);
    report(o);
  }

  // 7. Numerical foundations.
  {
    const auto t0 = Clock::now();
    std::vector<Check> checks{fd_random_graphs(), fd_gpt(), causal_mask(gcfg, base_params),
                              lsa_position_invariance(lsa_params), best_iterate(base), csv_determinism()};
    Outcome o{7, "numerical foundations"};
    o.pass = std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
    std::size_t passed = 0;
    for (const auto& c : checks) passed += c.pass;
    o.detail = std::to_string(passed) + "/" + std::to_string(checks.size()) + " sub-checks";
    o.seconds = seconds_since(t0);
    for (const auto& c : checks) note(std::string(c.pass ? "ok   " : "FAIL ") + c.name + ": " + c.detail);
    report(o);
  }

  // 8. Parameter count at paper scale.
  {
    const auto t0 = Clock::now();
    const gpt::GptConfig pc = gpt::GptConfig::paper_scale();
    std::istringstream lines(runner::param_count_report(pc));
    for (std::string l; std::getline(lines, l);) note(l);
    const double n = static_cast<double>(gpt::count_params(pc));
    const double rel = (n - runner::kReferenceParamCount) / runner::kReferenceParamCount;
    Outcome o{8, "parameter-count calibration (8 layers, width 256, 8 heads)"};
    o.pass = std::abs(rel) <= 0.02;
    o.detail = fmt("%.0f", n) + " vs published 6413313 (" + fmt("%+.2f%%", 100.0 * rel) + ") [within 2%]";
    o.seconds = seconds_since(t0);
    report(o);
  }

  // 9. Transfer matrix over two seeds of the 2-layer GPT and one 4-layer GPT.
  {
    const auto t0 = Clock::now();
    gpt::GptConfig s1 = gcfg;
    s1.seed = 1;
    gpt::GptConfig deep = gcfg;
    deep.n_layers = 4;
    const gpt::GptPredictor m1(s1, train_gpt_cached("gpt-s1", s1, ghp), "gpt-s1");
    // The 4-layer model stays on the zero-predictor plateau at lr 2e-3 for the whole run.
    gpt::TrainHp deep_hp = ghp;
    deep_hp.lr = 1e-3;
    const gpt::GptPredictor m4(deep, train_gpt_cached("gpt-4l", deep, deep_hp), "gpt-4l");
    const double train_s = seconds_since(t0);
    const std::vector<const Predictor*> models{&base, &m1, &m4};
    evalx::TransferOptions to;
    to.n_prompts = kPrompts;
    to.seed = kEvalSeed;
    to.alpha = 1.0;
    to.attack = gpt_spec();
    const auto rep = evalx::transfer_matrix(models, to);
    const auto cells = rep.cells();
    std::size_t self_bad = 0, self_n = 0;
    for (const auto& r : rep.records) {
      if (r.source_id != r.target_id) continue;
      ++self_n;
      self_bad += r.target_tae != r.source_tae;
    }
    for (const auto& c : cells)
      note(c.source_id + " -> " + c.target_id + ": median target TAE " + fmt("%.4g", c.target_tae.median) +
           " (source " + fmt("%.4g", c.source_tae.median) + "), n=" + std::to_string(c.target_tae.n));
    bool full = cells.size() == 9;
    for (const auto& c : cells) full = full && c.target_tae.n == kPrompts;
    Outcome o{9, "transfer report smoke (2L seed 0, 2L seed 1, 4L)"};
    o.pass = full && self_bad == 0 && self_n == 3 * kPrompts;
    o.detail = std::to_string(cells.size()) + " ordered pairs [9], self pairs exact on " +
               std::to_string(self_n - self_bad) + "/" + std::to_string(self_n) + "; training " +
               fmt("%.0f", train_s) + " s";
    o.seconds = seconds_since(t0);
    report(o);
  }

  std::size_t passed = 0;
  for (const auto& o : g_outcomes) passed += o.pass;
  std::printf("acceptance: %zu/%zu criteria passed in %.0f s (base GPT training %.0f s)\n", passed, g_outcomes.size(),
              seconds_since(t_all), base_train_s);
  return passed == g_outcomes.size() ? 0 : 1;
}

// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#include "icllab/runner/run.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

#include "icllab/advtrain.hpp"
#include "icllab/attack.hpp"
#include "icllab/errors.hpp"
#include "icllab/evalx.hpp"
#include "icllab/lsa.hpp"
#include "icllab/runner/checkpoint.hpp"
#include "icllab/runner/config.hpp"
#include "icllab/runner/results.hpp"
#include "icllab/runner/svg.hpp"
#include "json.hpp"

#ifndef ICLLAB_VERSION
#define ICLLAB_VERSION "0.0.0"
#endif

namespace icllab::runner {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string RunManifest::to_json() const {
  json j;
  j["command"] = command;
  j["config_path"] = config_path;
  j["config_hash"] = config_hash;
  j["config_copy"] = config_copy;
  j["seed"] = seed;
  j["threads"] = threads;
  j["artifacts"] = artifacts;
  j["version"] = version;
  j["started_utc"] = started_utc;
  j["wall_clock_s"] = wall_clock_s;
  j["status"] = status;
  if (!error.empty()) j["error"] = error;
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  RunManifest m;
  try {
    const json j = json::parse(text);
    m.command = j.at("command");
    m.config_path = j.at("config_path");
    m.config_hash = j.at("config_hash");
    m.config_copy = j.at("config_copy");
    m.seed = j.at("seed");
    m.threads = j.at("threads");
    m.artifacts = j.at("artifacts").get<std::vector<std::string>>();
    m.version = j.at("version");
    m.started_utc = j.at("started_utc");
    m.wall_clock_s = j.at("wall_clock_s");
    m.status = j.at("status");
    m.error = j.value("error", "");
  } catch (const json::exception& e) {
    throw FormatError(std::string("run manifest: ") + e.what());
  }
  return m;
}

std::string config_hash(const std::string& text) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text.data(), text.size())));
  return buf;
}

const std::vector<std::string>& run_commands() {
  static const std::vector<std::string> c{"train-lsa", "train-gpt", "attack", "advtrain", "transfer", "theory", "report"};
  return c;
}

std::string resolve_out_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("ICLLAB_OUT"); env && *env) return env;
  return ".";
}

std::string param_count_report(const gpt::GptConfig& cfg) {
  std::ostringstream o;
  o << "GPT parameter count: layers=" << cfg.n_layers << " heads=" << cfg.n_heads << " embd=" << cfg.n_embd
    << " d=" << cfg.d << " positions=" << cfg.max_positions << '\n';
  std::size_t total = 0;
  for (const auto& t : gpt::param_breakdown(cfg)) {
    std::string shape;
    for (std::size_t i = 0; i < t.shape.size(); ++i) shape += (i ? "x" : "") + std::to_string(t.shape[i]);
    char line[160];
    std::snprintf(line, sizeof line, "  %-28s %-12s %10zu\n", t.name.c_str(), shape.c_str(), t.count);
    o << line;
    total += t.count;
  }
  const double rel = (static_cast<double>(total) - static_cast<double>(kReferenceParamCount)) /
                     static_cast<double>(kReferenceParamCount);
  char tail[200];
  std::snprintf(tail, sizeof tail, "  total %zu; published %zu; delta %+lld (%+.2f%%)\n", total, kReferenceParamCount,
                static_cast<long long>(total) - static_cast<long long>(kReferenceParamCount), 100.0 * rel);
  o << tail;
  return o.str();
}

namespace {

// Collects outputs; every file goes through here so the manifest lists it.
class Sink {
 public:
  explicit Sink(fs::path dir) : dir_(std::move(dir)) {}

  std::string path(const std::string& name) {
    const std::string p = (dir_ / name).string();
    artifacts_.push_back(p);
    return p;
  }
  void text(const std::string& name, const std::string& content) {
    const std::string p = path(name);
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw FormatError("cannot write " + p);
  }
  void checkpoint(const std::string& stem, const Checkpoint& c) {
    const auto files = save_checkpoint((dir_ / stem).string(), c);
    artifacts_.insert(artifacts_.end(), files.begin(), files.end());
  }
  const std::vector<std::string>& artifacts() const { return artifacts_; }

 private:
  fs::path dir_;
  std::vector<std::string> artifacts_;
};

struct Context {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string run_id;
  std::ostream* log = nullptr;
};

using Job = std::function<void(Sink&, const Context&)>;

struct Prepared {
  Job job;
  std::uint64_t seed = 0;
};

std::uint64_t master_seed(Config& cfg, const std::string& section, const RunOptions& opt) {
  const std::uint64_t s = cfg.get_u64(section, "seed", 0);
  return opt.seed ? *opt.seed : s;
}

std::string model_name(Config& cfg, const std::string& fallback) {
  const std::string name = cfg.get_string("model", "name", fallback);
  if (!is_plain_id(name)) cfg.fail("model", "name", "use letters, digits, '-', '_', '.' or '+'");
  return name;
}

gpt::GptConfig read_gpt(Config& cfg, std::size_t n) {
  gpt::GptConfig g = gpt::GptConfig::desk();
  g.n_layers = cfg.get_size("model", "layers", g.n_layers);
  g.n_heads = cfg.get_size("model", "heads", g.n_heads);
  g.n_embd = cfg.get_size("model", "embd", g.n_embd);
  g.d = cfg.get_size("model", "d", g.d);
  g.max_positions = cfg.get_size("model", "max_positions", gpt::positions_for(n));
  g.curriculum = cfg.get_bool("model", "curriculum", g.curriculum);
  try {
    g.validate();
  } catch (const std::invalid_argument& e) {
    cfg.fail("model", "embd", e.what());
  }
  if (g.max_positions < 2 * n + 1) cfg.fail("model", "max_positions", "needs at least 2N+1 = " + std::to_string(2 * n + 1));
  return g;
}

gpt::TrainHp read_hp(Config& cfg) {
  gpt::TrainHp h = gpt::TrainHp::desk();
  h.lr = cfg.get_double("train", "lr", h.lr);
  h.warmup = cfg.get_size("train", "warmup", h.warmup);
  h.steps = cfg.get_size("train", "steps", h.steps);
  h.batch = cfg.get_size("train", "batch", h.batch);
  h.n = cfg.get_size("train", "n", h.n);
  if (!(h.lr > 0.0)) cfg.fail("train", "lr", "must be positive");
  if (h.batch == 0) cfg.fail("train", "batch", "must be positive");
  if (h.n == 0) cfg.fail("train", "n", "must be positive");
  return h;
}

attack::AttackType read_type(Config& cfg, const std::string& sec, const std::string& key, const std::string& s) {
  try {
    return attack::parse_attack_type(s);
  } catch (const std::invalid_argument&) {
    cfg.fail(sec, key, "unknown attack type '" + s + "' (x, y or z)");
  }
}

attack::AttackSpec read_attack(Config& cfg) {
  attack::AttackSpec a;
  a.iters = cfg.get_size("attack", "iters", a.iters);
  a.lr_x = cfg.get_double("attack", "lr_x", a.lr_x);
  a.lr_y = cfg.get_double("attack", "lr_y", a.lr_y);
  const std::string init = cfg.get_string("attack", "init", "zero");
  if (init == "zero") a.init = attack::InitPolicy::zero;
  else if (init == "keep_original") a.init = attack::InitPolicy::keep_original;
  else cfg.fail("attack", "init", "expected zero or keep_original");
  if (!(a.lr_x > 0.0)) cfg.fail("attack", "lr_x", "must be positive");
  if (!(a.lr_y > 0.0)) cfg.fail("attack", "lr_y", "must be positive");
  return a;
}

struct Models {
  std::vector<std::unique_ptr<Predictor>> owned;
  std::vector<const Predictor*> ptrs;
  std::optional<std::size_t> d;
};

// Loads every listed checkpoint up front; a missing or corrupt file is a
// config error, reported before anything is written.
Models load_models(Config& cfg, const std::string& sec, const std::string& key) {
  Models m;
  std::set<std::string> ids;
  for (const auto& entry : cfg.get_strings(sec, key)) {
    std::unique_ptr<Predictor> p;
    if (entry == "ols") {
      p = std::make_unique<attack::OlsPredictor>();
    } else {
      const std::string path = entry;
      try {
        auto ck = load_checkpoint(path);
        const std::size_t d = ck.kind == "gpt" ? gpt_config_of(ck).d : lsa::LsaParams::from_params(ck.params).d();
        if (m.d && *m.d != d) cfg.fail(sec, key, "checkpoints disagree on d (" + std::to_string(*m.d) + " vs " +
                                                     std::to_string(d) + ")");
        m.d = d;
        p = load_predictor(path);
      } catch (const FormatError& e) {
        cfg.fail(sec, key, e.what());
      }
    }
    if (!ids.insert(p->id()).second) cfg.fail(sec, key, "duplicate model id '" + p->id() + "'");
    m.ptrs.push_back(p.get());
    m.owned.push_back(std::move(p));
  }
  if (m.ptrs.empty()) cfg.fail(sec, key, "needs at least one model");
  return m;
}

std::size_t eval_d(Config& cfg, const Models& models) {
  const std::size_t d = cfg.get_size("eval", "d", models.d.value_or(5));
  if (models.d && *models.d != d) cfg.fail("eval", "d", "does not match the checkpoints (d=" + std::to_string(*models.d) + ")");
  if (d == 0) cfg.fail("eval", "d", "must be positive");
  return d;
}

Prepared prep_train_lsa(Config& cfg, const RunOptions& opt) {
  lsa::TrainLsaConfig t = lsa::TrainLsaConfig::desk();
  const std::string name = model_name(cfg, "lsa");
  t.d = cfg.get_size("model", "d", t.d);
  t.n = cfg.get_size("train", "n", t.n);
  t.batch = cfg.get_size("train", "batch", t.batch);
  t.steps = cfg.get_size("train", "steps", t.steps);
  t.lr = cfg.get_double("train", "lr", t.lr);
  t.init_scale = cfg.get_double("train", "init_scale", t.init_scale);
  t.antithetic = cfg.get_bool("train", "antithetic", t.antithetic);
  t.log_every = cfg.get_size("train", "log_every", t.log_every);
  t.seed = master_seed(cfg, "train", opt);
  if (t.d == 0) cfg.fail("model", "d", "must be positive");
  if (t.batch == 0) cfg.fail("train", "batch", "must be positive");
  if (!(t.lr > 0.0)) cfg.fail("train", "lr", "must be positive");
  if (t.log_every == 0) cfg.fail("train", "log_every", "must be positive");
  return {[t, name](Sink& out, const Context& ctx) {
            const auto res = lsa::train_lsa(t);
            std::ostringstream tr;
            tr << "step,loss\n";
            for (const auto& c : res.trace) tr << c.step << ',' << format_double(c.loss) << '\n';
            out.text("train_trace.csv", tr.str());
            out.checkpoint(name, lsa_checkpoint(res.params));
            const auto am = lsa::extract_attack_matrix(res.params);
            *ctx.log << "train-lsa: final loss " << (res.trace.empty() ? 0.0 : res.trace.back().loss)
                     << ", off-block ratio " << am.off_block_norm_ratio
                     << (am.structured ? " (structured)" : " (not structured)") << '\n';
          },
          t.seed};
}

Prepared prep_train_gpt(Config& cfg, const RunOptions& opt) {
  const std::string name = model_name(cfg, "gpt");
  const gpt::TrainHp hp = read_hp(cfg);
  gpt::GptConfig g = read_gpt(cfg, hp.n);
  g.seed = master_seed(cfg, "train", opt);
  if (hp.steps == 0) cfg.fail("train", "steps", "must be positive");
  return {[g, hp, name](Sink& out, const Context& ctx) {
            gpt::Trainer tr(g, hp);
            std::ostringstream trace;
            trace << "step,loss,lr\n";
            for (std::size_t s = 0; s < hp.steps; ++s) {
              tr.step(tr.sample_batch(true));
              const auto& r = tr.trace().back();
              trace << r.step << ',' << format_double(r.loss) << ',' << format_double(r.lr) << '\n';
              if (r.step % 1000 == 0) *ctx.log << "train-gpt: step " << r.step << " loss " << r.loss << '\n';
            }
            out.text("train_trace.csv", trace.str());
            out.checkpoint(name, gpt_checkpoint(g, tr.params()));
          },
          g.seed};
}

Prepared prep_attack(Config& cfg, const RunOptions& opt) {
  auto models = std::make_shared<Models>(load_models(cfg, "model", "checkpoints"));
  evalx::SweepGrid grid;
  grid.types.clear();
  for (const auto& s : cfg.get_strings("attack", "types", std::vector<std::string>{"x"}))
    grid.types.push_back(read_type(cfg, "attack", "types", s));
  grid.ks = cfg.get_sizes("attack", "ks", grid.ks);
  evalx::SweepOptions so;
  so.attack = read_attack(cfg);
  grid.alphas = cfg.get_doubles("eval", "alphas", grid.alphas);
  so.d = eval_d(cfg, *models);
  so.m = cfg.get_size("eval", "m", so.m);
  so.n_prompts = cfg.get_size("eval", "n_prompts", so.n_prompts);
  so.seeds = cfg.get_u64s("eval", "seeds", std::vector<std::uint64_t>{0});
  so.chunk = cfg.get_size("eval", "chunk", so.chunk);
  if (opt.seed) so.seeds = {*opt.seed};
  if (grid.types.empty()) cfg.fail("attack", "types", "needs at least one type");
  if (grid.ks.empty()) cfg.fail("attack", "ks", "needs at least one budget");
  for (auto k : grid.ks)
    if (k > so.m) cfg.fail("attack", "ks", "budget " + std::to_string(k) + " exceeds m = " + std::to_string(so.m));
  if (grid.alphas.empty()) cfg.fail("eval", "alphas", "needs at least one value");
  if (so.seeds.empty()) cfg.fail("eval", "seeds", "needs at least one seed");
  if (so.chunk == 0) cfg.fail("eval", "chunk", "must be positive");
  if (so.m == 0) cfg.fail("eval", "m", "must be positive");
  return {[models, grid, so](Sink& out, const Context& ctx) mutable {
            so.threads = ctx.threads;
            evalx::EvalReport all;
            for (const Predictor* p : models->ptrs) {
              *ctx.log << "attack: " << p->id() << '\n';
              all.append(evalx::attack_sweep(*p, grid, so));
            }
            write_results_csv(out.path("results.csv"), ctx.run_id, all.records);
            write_cells_csv(out.path("cells.csv"), all);
          },
          so.seeds.front()};
}

Prepared prep_advtrain(Config& cfg, const RunOptions& opt) {
  advtrain::AdvTrainConfig a = advtrain::AdvTrainConfig::desk();
  const std::string name = model_name(cfg, "adv");
  const std::string init = cfg.get_string("model", "init_checkpoint", "");
  a.hp = read_hp(cfg);
  std::shared_ptr<Checkpoint> base;
  if (!init.empty()) {
    try {
      base = std::make_shared<Checkpoint>(load_checkpoint(init));
      a.model = gpt_config_of(*base);
    } catch (const FormatError& e) {
      cfg.fail("model", "init_checkpoint", e.what());
    }
  } else {
    a.model = read_gpt(cfg, a.hp.n);
  }
  a.seed = master_seed(cfg, "train", opt);
  try {
    a.mode = advtrain::parse_mode(cfg.get_string("advtrain", "mode", "A-FT"));
  } catch (const std::invalid_argument&) {
    cfg.fail("advtrain", "mode", "expected A-PT or A-FT");
  }
  a.attack_type = read_type(cfg, "advtrain", "attack_type", cfg.get_string("advtrain", "attack_type", "x"));
  a.k_train = cfg.get_size("advtrain", "k_train", a.k_train);
  a.inner_steps = cfg.get_size("advtrain", "inner_steps", a.inner_steps);
  a.t1 = cfg.get_size("advtrain", "t1", base || a.mode == advtrain::Mode::pretrain ? 0 : a.t1);
  a.t2 = cfg.get_size("advtrain", "t2", a.t2);
  a.mix_fraction = cfg.get_double("advtrain", "mix_fraction", a.mix_fraction);
  a.lr_x = cfg.get_double("advtrain", "lr_x", a.lr_x);
  a.lr_y = cfg.get_double("advtrain", "lr_y", a.lr_y);
  if (base && a.mode != advtrain::Mode::finetune) cfg.fail("advtrain", "mode", "init_checkpoint requires A-FT");
  if (base && a.t1 != 0) cfg.fail("advtrain", "t1", "must be 0 when continuing from init_checkpoint");
  if (base && a.hp.n * 2 + 1 > a.model.max_positions)
    cfg.fail("train", "n", "exceeds the checkpoint's positional table");
  try {
    a.validate();
  } catch (const BudgetError& e) {
    cfg.fail("advtrain", "k_train", e.what());
  } catch (const std::invalid_argument& e) {
    cfg.fail("advtrain", "mode", e.what());
  }
  return {[a, base, name](Sink& out, const Context& ctx) {
            advtrain::AdvTrainResult res;
            if (base) {
              gpt::TrainHp hp = a.hp;
              hp.steps = std::max<std::size_t>(a.t2, 1);
              gpt::Trainer tr(a.model, hp, base->params);
              res = advtrain::adversarial_finetune(tr, a);
            } else {
              res = advtrain::adversarial_train(a);
            }
            std::ostringstream trace;
            trace << "step,loss,lr,adversarial\n";
            for (const auto& r : res.trace)
              trace << r.step << ',' << format_double(r.loss) << ',' << format_double(r.lr) << ','
                    << (r.adversarial ? 1 : 0) << '\n';
            out.text("train_trace.csv", trace.str());
            gpt::GptConfig saved = a.model;
            if (!base) saved.seed = a.seed;
            out.checkpoint(name, gpt_checkpoint(saved, res.params));
            *ctx.log << "advtrain: " << advtrain::to_string(a.mode) << ", " << res.trace.size() << " steps\n";
          },
          a.seed};
}

Prepared prep_transfer(Config& cfg, const RunOptions& opt) {
  auto models = std::make_shared<Models>(load_models(cfg, "model", "checkpoints"));
  evalx::TransferOptions to;
  to.attack = read_attack(cfg);
  to.attack.type = read_type(cfg, "attack", "type", cfg.get_string("attack", "type", "x"));
  to.attack.k = cfg.get_size("attack", "k", to.attack.k);
  const auto alphas = cfg.get_doubles("eval", "alphas", std::vector<double>{1.0});
  to.d = eval_d(cfg, *models);
  to.m = cfg.get_size("eval", "m", to.m);
  to.n_prompts = cfg.get_size("eval", "n_prompts", to.n_prompts);
  to.seed = master_seed(cfg, "eval", opt);
  to.chunk = cfg.get_size("eval", "chunk", to.chunk);
  const bool with_ols = cfg.get_bool("eval", "ols_mse", false);
  auto ols_spec = attack::AttackSpec::ols_defaults(to.attack.type, to.attack.k);
  ols_spec.iters = cfg.get_size("eval", "ols_iters", ols_spec.iters);
  if (to.attack.k == 0 || to.attack.k > to.m) cfg.fail("attack", "k", "must be in [1, m]");
  if (alphas.empty()) cfg.fail("eval", "alphas", "needs at least one value");
  if (to.chunk == 0) cfg.fail("eval", "chunk", "must be positive");
  return {[models, to, alphas, with_ols, ols_spec](Sink& out, const Context& ctx) mutable {
            to.threads = ctx.threads;
            evalx::TransferReport all;
            for (double a : alphas) {
              to.alpha = a;
              auto rep = evalx::transfer_matrix(models->ptrs, to);
              all.records.insert(all.records.end(), rep.records.begin(), rep.records.end());
            }
            write_transfer_csv(out.path("transfer.csv"), ctx.run_id, all);
            write_transfer_matrix_csv(out.path("transfer_matrix.csv"), all);
            if (with_ols) {
              std::vector<const Predictor*> non_ols;
              for (const Predictor* p : models->ptrs)
                if (p->id() != "ols") non_ols.push_back(p);
              evalx::TransferReport ols;
              for (auto dir : {evalx::Direction::ols_to_model, evalx::Direction::model_to_ols}) {
                auto rep = evalx::ols_tf_mse(non_ols, alphas, dir, ols_spec, to.attack, to);
                ols.records.insert(ols.records.end(), rep.records.begin(), rep.records.end());
              }
              write_transfer_matrix_csv(out.path("ols_mse.csv"), ols);
            }
            *ctx.log << "transfer: " << all.records.size() << " records\n";
          },
          to.seed};
}

Prepared prep_theory(Config& cfg, const RunOptions& opt) {
  std::shared_ptr<lsa::LsaParams> source;
  const std::string src = cfg.get_string("model", "lsa_checkpoint");
  try {
    auto ck = load_checkpoint(src);
    if (ck.kind != "lsa") cfg.fail("model", "lsa_checkpoint", "is a " + ck.kind + " checkpoint, expected lsa");
    source = std::make_shared<lsa::LsaParams>(lsa::LsaParams::from_params(ck.params));
  } catch (const FormatError& e) {
    cfg.fail("model", "lsa_checkpoint", e.what());
  }
  auto targets = std::make_shared<Models>(load_models(cfg, "model", "targets"));
  if (targets->d && *targets->d != source->d()) cfg.fail("model", "targets", "d differs from the LSA checkpoint");
  const auto alphas = cfg.get_doubles("eval", "alphas", std::vector<double>{0.0, 0.5, 1.0});
  const std::size_t n_prompts = cfg.get_size("eval", "n_prompts", 200);
  const std::size_t m = cfg.get_size("eval", "m", 10);
  const std::uint64_t seed = master_seed(cfg, "eval", opt);
  if (!lsa::extract_attack_matrix(*source).structured)
    cfg.fail("model", "lsa_checkpoint", "LSA parameters are not block structured; closed-form attacks do not apply");
  return {[source, targets, alphas, n_prompts, m, seed](Sink& out, const Context& ctx) {
            const auto rep = evalx::theory_attack_transfer(*source, targets->ptrs, alphas, n_prompts, seed, m);
            write_results_csv(out.path("results.csv"), ctx.run_id, rep.records);
            write_cells_csv(out.path("cells.csv"), rep);
            *ctx.log << "theory: " << rep.records.size() << " records, " << rep.skipped << " prompts skipped\n";
          },
          seed};
}

Prepared prep_report(Config& cfg, const RunOptions& opt) {
  auto rows = std::make_shared<std::vector<evalx::EvalRecord>>();
  const auto inputs = cfg.get_strings("report", "inputs");
  if (inputs.empty()) cfg.fail("report", "inputs", "needs at least one results CSV");
  for (const auto& in : inputs) {
    try {
      for (auto& r : read_results_csv(in)) rows->push_back(std::move(r.record));
    } catch (const FormatError& e) {
      cfg.fail("report", "inputs", e.what());
    }
  }
  const std::uint64_t seed = opt.seed.value_or(0);
  return {[rows](Sink& out, const Context& ctx) {
            for (const auto& [type, svg] : tae_vs_k_charts(*rows)) out.text("tae_vs_k_" + type + ".svg", svg);
            evalx::EvalReport rep;
            rep.records = *rows;
            write_cells_csv(out.path("cells.csv"), rep);
            *ctx.log << "report: " << rows->size() << " rows\n";
          },
          seed};
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

int run(const RunOptions& opt, std::ostream& log, std::ostream& err) {
  const auto t0 = std::chrono::steady_clock::now();
  Prepared prep;
  Config cfg;
  try {
    cfg = Config::load(opt.config_path);
    if (opt.command == "train-lsa") prep = prep_train_lsa(cfg, opt);
    else if (opt.command == "train-gpt") prep = prep_train_gpt(cfg, opt);
    else if (opt.command == "attack") prep = prep_attack(cfg, opt);
    else if (opt.command == "advtrain") prep = prep_advtrain(cfg, opt);
    else if (opt.command == "transfer") prep = prep_transfer(cfg, opt);
    else if (opt.command == "theory") prep = prep_theory(cfg, opt);
    else if (opt.command == "report") prep = prep_report(cfg, opt);
    else throw ConfigError(opt.config_path, 0, "unknown command '" + opt.command + "'");
    cfg.finish();
    if (opt.threads == 0) throw ConfigError(opt.config_path, 0, "--threads must be positive");
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  RunManifest man;
  man.command = opt.command;
  man.config_path = opt.config_path;
  man.config_hash = config_hash(cfg.text());
  man.seed = prep.seed;
  man.threads = opt.threads;
  man.version = ICLLAB_VERSION;
  man.started_utc = utc_now();
  const fs::path dir(opt.out_dir.empty() ? "." : opt.out_dir);
  Sink sink(dir);
  Context ctx{prep.seed, opt.threads, opt.command + "-" + man.config_hash.substr(0, 8) + "-s" + std::to_string(prep.seed),
              &log};
  int code = 0;
  try {
    fs::create_directories(dir);
    sink.text("config.txt", cfg.text());
    man.config_copy = sink.artifacts().back();
    prep.job(sink, ctx);
  } catch (const std::exception& e) {
    man.status = "partial";
    man.error = e.what();
    err << "error: " << opt.command << " failed: " << e.what() << '\n';
    code = 1;
  }
  man.artifacts = sink.artifacts();
  man.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  try {
    std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
    out << man.to_json();
    if (!out) throw FormatError("cannot write manifest");
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  log << opt.command << ": " << man.status << ", " << man.artifacts.size() << " artifacts in " << dir.string() << '\n';
  return code;
}

}  // namespace icllab::runner

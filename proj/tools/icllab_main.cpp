// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

// icllab run <command> --config FILE [--seed S] [--threads T] [--out-dir DIR]
// icllab count-params [--layers L --heads H --embd C --d D --positions P]

#include <iostream>

#include "CLI11.hpp"
#include "icllab/gpt.hpp"
#include "icllab/runner/run.hpp"

#ifdef __GLIBC__
#include <malloc.h>
#endif

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // Training allocates and frees the same large buffers every step; keep
  // them on the heap instead of round-tripping through mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
  using namespace icllab;
  CLI::App app{"In-context regression hijacking lab"};
  app.require_subcommand(1);

  runner::RunOptions opt;
  std::uint64_t seed = 0;
  std::string out_dir;
  auto* run = app.add_subcommand("run", "Run a config-driven experiment step");
  run->add_option("command", opt.command, "train-lsa | train-gpt | attack | advtrain | transfer | theory | report")
      ->required()
      ->check(CLI::IsMember(runner::run_commands()));
  run->add_option("--config", opt.config_path, "Config file")->required();
  auto* seed_opt = run->add_option("--seed", seed, "Override the config's master seed");
  run->add_option("--threads", opt.threads, "Worker threads for evaluation")->check(CLI::PositiveNumber);
  run->add_option("--out-dir", out_dir, "Output directory (default: $ICLLAB_OUT, else .)");

  gpt::GptConfig pc = gpt::GptConfig::paper_scale();
  auto* count = app.add_subcommand("count-params", "GPT parameter breakdown");
  count->add_option("--layers", pc.n_layers);
  count->add_option("--heads", pc.n_heads);
  count->add_option("--embd", pc.n_embd);
  count->add_option("--d", pc.d);
  count->add_option("--positions", pc.max_positions);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*count) {
    try {
      pc.validate();
    } catch (const std::invalid_argument& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 2;
    }
    std::cout << runner::param_count_report(pc);
    return 0;
  }
  if (*seed_opt) opt.seed = seed;
  opt.out_dir = runner::resolve_out_dir(out_dir);
  return runner::run(opt, std::cout, std::cerr);
}

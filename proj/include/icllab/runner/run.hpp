// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "icllab/gpt.hpp"

namespace icllab::runner {

/// Provenance written next to every run's outputs as manifest.json.
struct RunManifest {
  std::string command;
  std::string config_path;
  /// fnv1a64 hex of the config bytes; the copy in `config_copy` hashes the same.
  std::string config_hash;
  std::string config_copy;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::vector<std::string> artifacts;
  std::string version;
  std::string started_utc;
  double wall_clock_s = 0.0;
  /// "complete" or "partial" (runtime failure; artifacts lists what exists).
  std::string status = "complete";
  std::string error;

  std::string to_json() const;
  static RunManifest from_json(const std::string& text);
};

std::string config_hash(const std::string& text);

struct RunOptions {
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  std::string out_dir;
};

/// Commands accepted by run().
const std::vector<std::string>& run_commands();

/// Exit codes: 0 success, 2 invalid config or inputs (nothing written),
/// 1 runtime failure (manifest marked partial).
int run(const RunOptions& opt, std::ostream& log, std::ostream& err);

/// --out-dir, else $ICLLAB_OUT, else ".".
std::string resolve_out_dir(const std::string& flag);

/// Per-tensor table, total and comparison with the published 6,413,313.
std::string param_count_report(const gpt::GptConfig& cfg);
inline constexpr std::size_t kReferenceParamCount = 6413313;

}  // namespace icllab::runner

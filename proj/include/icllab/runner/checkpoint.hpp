// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "icllab/gpt.hpp"
#include "icllab/lsa.hpp"
#include "icllab/params.hpp"
#include "icllab/predictor.hpp"

namespace icllab::runner {

/// A saved model: `<stem>.manifest` (text: kind, config echo, tensor names
/// and shapes, blob checksum) next to `<stem>.bin` (little-endian float64,
/// row-major, manifest order).
struct Checkpoint {
  std::string kind;  // "lsa" or "gpt"
  std::vector<std::pair<std::string, std::string>> config;
  ParamSet params;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// FNV-1a 64-bit.
std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);

std::string manifest_path(const std::string& stem);
std::string blob_path(const std::string& stem);

/// Writes both files; returns their paths (manifest first).
std::vector<std::string> save_checkpoint(const std::string& stem, const Checkpoint& ckpt);
/// `path` may be the stem or the manifest path. Throws FormatError on any
/// mismatch (missing files, shape or size disagreement, bad checksum).
Checkpoint load_checkpoint(const std::string& path);

Checkpoint gpt_checkpoint(const gpt::GptConfig& cfg, const ParamSet& params);
Checkpoint lsa_checkpoint(const lsa::LsaParams& params);
gpt::GptConfig gpt_config_of(const Checkpoint& ckpt);

/// Predictor for a checkpoint; `id` defaults to the file stem.
std::unique_ptr<Predictor> load_predictor(const std::string& path, std::string id = {});

/// Stem of a path ("runs/a/gpt.manifest" -> "gpt").
std::string stem_of(const std::string& path);

}  // namespace icllab::runner

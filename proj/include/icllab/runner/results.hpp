// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "icllab/evalx.hpp"

namespace icllab::runner {

/// Fixed column order of every results CSV.
inline constexpr const char* kResultsHeader =
    "run_id,model_id,seed,alpha,attack_type,k,prompt_idx,gte,tae,clean_pred,attacked_pred,y_bad,y_clean";

struct ResultRow {
  std::string run_id;
  evalx::EvalRecord record;
  friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

/// Doubles are printed with 17 significant digits, so a read gives back the
/// same bits.
std::string format_double(double v);

void write_results_csv(std::ostream& out, const std::string& run_id, std::span<const evalx::EvalRecord> records);
void write_results_csv(const std::string& path, const std::string& run_id,
                       std::span<const evalx::EvalRecord> records);
/// Throws FormatError (with the line number) on a wrong header or row.
std::vector<ResultRow> read_results_csv(const std::string& path);

/// Order used to compare parallel outputs: (model, type, alpha, k, seed, prompt).
void canonical_sort(std::vector<evalx::EvalRecord>& records);

void write_transfer_csv(const std::string& path, const std::string& run_id, const evalx::TransferReport& rep);
/// One row per (source, target, alpha) cell with mean/median/se.
void write_transfer_matrix_csv(const std::string& path, const evalx::TransferReport& rep);
void write_cells_csv(const std::string& path, const evalx::EvalReport& rep);

/// Identifiers end up unquoted in CSV and SVG.
bool is_plain_id(const std::string& s);

}  // namespace icllab::runner

// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#include "icllab/runner/results.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <tuple>

#include "icllab/errors.hpp"

namespace icllab::runner {

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path);
  return out;
}

void check_written(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw FormatError("write failed: " + path);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <class T>
T parse_num(const std::string& s, const std::string& where) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw FormatError(where + ": bad number '" + s + "'");
  return v;
}

void agg_cols(std::ostream& out, const evalx::Aggregate& a) {
  out << ',' << format_double(a.mean) << ',' << format_double(a.median) << ',' << format_double(a.se);
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool is_plain_id(const std::string& s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '+';
  });
}

void write_results_csv(std::ostream& out, const std::string& run_id, std::span<const evalx::EvalRecord> records) {
  out << kResultsHeader << '\n';
  for (const auto& r : records) {
    out << run_id << ',' << r.model_id << ',' << r.seed << ',' << format_double(r.alpha) << ',' << r.attack_type << ','
        << r.k << ',' << r.prompt_idx << ',' << format_double(r.gte) << ',' << format_double(r.tae) << ','
        << format_double(r.clean_pred) << ',' << format_double(r.attacked_pred) << ',' << format_double(r.y_bad)
        << ',' << format_double(r.y_clean) << '\n';
  }
}

void write_results_csv(const std::string& path, const std::string& run_id,
                       std::span<const evalx::EvalRecord> records) {
  auto out = open_out(path);
  write_results_csv(out, run_id, records);
  check_written(out, path);
}

std::vector<ResultRow> read_results_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader) throw FormatError(path + ":1: not a results CSV header");
  std::vector<ResultRow> rows;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(n);
    const auto f = split(line);
    if (f.size() != 13) throw FormatError(where + ": expected 13 fields, got " + std::to_string(f.size()));
    ResultRow row;
    row.run_id = f[0];
    auto& r = row.record;
    r.model_id = f[1];
    r.seed = parse_num<std::uint64_t>(f[2], where);
    r.alpha = parse_num<double>(f[3], where);
    r.attack_type = f[4];
    r.k = parse_num<std::size_t>(f[5], where);
    r.prompt_idx = parse_num<std::size_t>(f[6], where);
    r.gte = parse_num<double>(f[7], where);
    r.tae = parse_num<double>(f[8], where);
    r.clean_pred = parse_num<double>(f[9], where);
    r.attacked_pred = parse_num<double>(f[10], where);
    r.y_bad = parse_num<double>(f[11], where);
    r.y_clean = parse_num<double>(f[12], where);
    rows.push_back(std::move(row));
  }
  return rows;
}

void canonical_sort(std::vector<evalx::EvalRecord>& records) {
  std::stable_sort(records.begin(), records.end(), [](const evalx::EvalRecord& a, const evalx::EvalRecord& b) {
    return std::tie(a.model_id, a.attack_type, a.alpha, a.k, a.seed, a.prompt_idx) <
           std::tie(b.model_id, b.attack_type, b.alpha, b.k, b.seed, b.prompt_idx);
  });
}

void write_transfer_csv(const std::string& path, const std::string& run_id, const evalx::TransferReport& rep) {
  auto out = open_out(path);
  out << "run_id,source_id,target_id,seed,alpha,attack_type,k,prompt_idx,source_pred,target_pred,source_tae,"
         "target_tae,target_gte,pred_mse,y_bad,y_clean\n";
  for (const auto& r : rep.records) {
    out << run_id << ',' << r.source_id << ',' << r.target_id << ',' << r.seed << ',' << format_double(r.alpha) << ','
        << r.attack_type << ',' << r.k << ',' << r.prompt_idx << ',' << format_double(r.source_pred) << ','
        << format_double(r.target_pred) << ',' << format_double(r.source_tae) << ',' << format_double(r.target_tae)
        << ',' << format_double(r.target_gte) << ',' << format_double(r.pred_mse) << ',' << format_double(r.y_bad)
        << ',' << format_double(r.y_clean) << '\n';
  }
  check_written(out, path);
}

void write_transfer_matrix_csv(const std::string& path, const evalx::TransferReport& rep) {
  auto out = open_out(path);
  out << "source_id,target_id,alpha,n,source_tae_mean,source_tae_median,source_tae_se,target_tae_mean,"
         "target_tae_median,target_tae_se,pred_mse_mean,pred_mse_median,pred_mse_se\n";
  for (const auto& c : rep.cells()) {
    out << c.source_id << ',' << c.target_id << ',' << format_double(c.alpha) << ',' << c.target_tae.n;
    agg_cols(out, c.source_tae);
    agg_cols(out, c.target_tae);
    agg_cols(out, c.pred_mse);
    out << '\n';
  }
  check_written(out, path);
}

void write_cells_csv(const std::string& path, const evalx::EvalReport& rep) {
  auto out = open_out(path);
  out << "model_id,attack_type,alpha,k,n,gte_mean,gte_median,gte_se,tae_mean,tae_median,tae_se\n";
  for (const auto& c : rep.cells()) {
    out << c.model_id << ',' << c.attack_type << ',' << format_double(c.alpha) << ',' << c.k << ',' << c.tae.n;
    agg_cols(out, c.gte);
    agg_cols(out, c.tae);
    out << '\n';
  }
  check_written(out, path);
}

}  // namespace icllab::runner

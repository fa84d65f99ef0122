// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <vector>

#include "icllab/evalx.hpp"

namespace icllab::runner {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> mean;
  std::vector<double> se;
};

struct ChartSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y = false;
};

/// Standalone SVG line chart: one polyline per series with a shaded
/// mean +/- se band.
std::string line_chart(const ChartSpec& spec, const std::vector<Series>& series);

/// One chart per attack type: mean TAE against k, one series per
/// (model, alpha). Keys are attack types.
std::map<std::string, std::string> tae_vs_k_charts(const std::vector<evalx::EvalRecord>& records);

}  // namespace icllab::runner

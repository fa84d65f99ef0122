// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#include "icllab/runner/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <tuple>

#include "icllab/errors.hpp"

namespace icllab::runner {

namespace {

constexpr double kW = 640, kH = 420, kLeft = 70, kRight = 170, kTop = 40, kBottom = 55;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                                    "#8c564b", "#e377c2", "#17becf", "#7f7f7f", "#bcbd22"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string line_chart(const ChartSpec& spec, const std::vector<Series>& series) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  const double floor_y = 1e-12;
  auto ty = [&](double v) { return spec.log_y ? std::log10(std::max(v, floor_y)) : v; };
  for (const auto& s : series) {
    if (s.x.size() != s.mean.size() || s.se.size() != s.mean.size())
      throw ShapeError("line_chart: series '" + s.label + "' has mismatched lengths");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(s.mean[i] - s.se[i]));
      y1 = std::max(y1, ty(s.mean[i] + s.se[i]));
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  if (!spec.log_y) y0 = std::min(y0, 0.0);
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto px = [&](double v) { return kLeft + (v - x0) / (x1 - x0) * pw; };
  auto py = [&](double v) { return kTop + (1.0 - (ty(v) - y0) / (y1 - y0)) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" viewBox=\"0 0 " << kW
    << ' ' << kH << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << num(kW / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(spec.title)
    << "</text>\n";
  o << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + (x1 - x0) * i / 4.0, gx = kLeft + pw * i / 4.0;
    o << "<text x=\"" << num(gx) << "\" y=\"" << num(kTop + ph + 16) << "\" text-anchor=\"middle\">" << tick(fx)
      << "</text>\n";
    const double fy = y0 + (y1 - y0) * i / 4.0, gy = kTop + ph * (1.0 - i / 4.0);
    o << "<line x1=\"" << kLeft << "\" x2=\"" << num(kLeft + pw) << "\" y1=\"" << num(gy) << "\" y2=\"" << num(gy)
      << "\" stroke=\"#ddd\"/>\n";
    o << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(gy + 4) << "\" text-anchor=\"end\">"
      << tick(spec.log_y ? std::pow(10.0, fy) : fy) << "</text>\n";
  }
  o << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << num(kH - 14) << "\" text-anchor=\"middle\">"
    << escape(spec.x_label) << "</text>\n";
  o << "<text transform=\"translate(18," << num(kTop + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(spec.y_label) << "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& ser = series[s];
    const char* color = kPalette[s % std::size(kPalette)];
    if (!ser.x.empty()) {
      o << "<polygon fill=\"" << color << "\" fill-opacity=\"0.18\" stroke=\"none\" points=\"";
      for (std::size_t i = 0; i < ser.x.size(); ++i) o << num(px(ser.x[i])) << ',' << num(py(ser.mean[i] + ser.se[i])) << ' ';
      for (std::size_t i = ser.x.size(); i-- > 0;)
        o << num(px(ser.x[i])) << ',' << num(py(ser.mean[i] - ser.se[i])) << ' ';
      o << "\"/>\n";
      o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
      for (std::size_t i = 0; i < ser.x.size(); ++i) o << num(px(ser.x[i])) << ',' << num(py(ser.mean[i])) << ' ';
      o << "\"/>\n";
      for (std::size_t i = 0; i < ser.x.size(); ++i)
        o << "<circle cx=\"" << num(px(ser.x[i])) << "\" cy=\"" << num(py(ser.mean[i])) << "\" r=\"3\" fill=\"" << color
          << "\"/>\n";
    }
    const double ly = kTop + 10 + 18.0 * static_cast<double>(s);
    o << "<line x1=\"" << num(kW - kRight + 12) << "\" x2=\"" << num(kW - kRight + 32) << "\" y1=\"" << num(ly)
      << "\" y2=\"" << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << num(kW - kRight + 38) << "\" y=\"" << num(ly + 4) << "\">" << escape(ser.label)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::map<std::string, std::string> tae_vs_k_charts(const std::vector<evalx::EvalRecord>& records) {
  // type -> (model, alpha) -> k -> values, all in first-appearance order.
  std::map<std::string, std::vector<std::tuple<std::string, double, std::map<std::size_t, std::vector<double>>>>> groups;
  for (const auto& r : records) {
    auto& lines = groups[r.attack_type];
    auto it = std::find_if(lines.begin(), lines.end(),
                           [&](const auto& l) { return std::get<0>(l) == r.model_id && std::get<1>(l) == r.alpha; });
    if (it == lines.end()) {
      lines.emplace_back(r.model_id, r.alpha, std::map<std::size_t, std::vector<double>>{});
      it = std::prev(lines.end());
    }
    std::get<2>(*it)[r.k].push_back(r.tae);
  }
  std::map<std::string, std::string> out;
  for (const auto& [type, lines] : groups) {
    std::vector<Series> series;
    for (const auto& [model, alpha, by_k] : lines) {
      Series s;
      s.label = model + " a=" + tick(alpha);
      for (const auto& [k, vals] : by_k) {
        const auto a = evalx::aggregate(vals);
        s.x.push_back(static_cast<double>(k));
        s.mean.push_back(a.mean);
        s.se.push_back(a.se);
      }
      series.push_back(std::move(s));
    }
    out[type] = line_chart({type + "-attack: targeted attack error vs tokens perturbed", "k (tokens perturbed)",
                            "mean TAE (+/- se)", false},
                           series);
  }
  return out;
}

}  // namespace icllab::runner

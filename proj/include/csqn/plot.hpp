#pragma once

// Static SVG line plots with a log-scale y axis. Output depends only on the
// input, so identical series give byte-identical documents.

#include "csqn/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

namespace csqn {

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotAxes {
  std::string title = "Training loss";
  std::string x_label = "cumulative samples";
  std::string y_label = "loss";
  int width = 720;
  int height = 440;
  bool log_y = true;
};

namespace detail {

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

inline std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

inline constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                           "#9467bd", "#8c564b", "#e377c2", "#17becf"};

}  // namespace detail

/// One polyline per series and one legend entry per series, both in input
/// order. Points with non-finite coordinates (or y <= 0 on a log axis) are
/// dropped; a series left with no points still gets its legend entry.
inline std::string emit_plot(const std::vector<PlotSeries>& series, const PlotAxes& axes = {}) {
  if (series.empty()) throw ContractViolation("emit_plot needs at least one series");
  for (const auto& s : series)
    require(s.x.size() == s.y.size(), "series '" + s.name + "' has mismatched x and y lengths");

  auto usable = [&](double x, double y) { return std::isfinite(x) && std::isfinite(y) && (!axes.log_y || y > 0.0); };
  auto ty = [&](double y) { return axes.log_y ? std::log10(y) : y; };

  double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo, y_lo = x_lo, y_hi = -x_lo;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      x_lo = std::min(x_lo, s.x[i]);
      x_hi = std::max(x_hi, s.x[i]);
      y_lo = std::min(y_lo, ty(s.y[i]));
      y_hi = std::max(y_hi, ty(s.y[i]));
    }
  if (!std::isfinite(x_lo)) throw ContractViolation("emit_plot: no plottable points");
  if (x_hi == x_lo) x_hi = x_lo + 1.0;
  if (y_hi == y_lo) {
    y_lo -= 0.05;
    y_hi += 0.05;
  }
  const double pad = 0.04 * (y_hi - y_lo);
  y_lo -= pad;
  y_hi += pad;

  const double left = 80, right = 170, top = 40, bottom = 56;
  const double pw = axes.width - left - right, ph = axes.height - top - bottom;
  auto px = [&](double x) { return left + (x - x_lo) / (x_hi - x_lo) * pw; };
  auto py = [&](double y) { return top + (1.0 - (ty(y) - y_lo) / (y_hi - y_lo)) * ph; };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(axes.width) + "\" height=\"" +
         std::to_string(axes.height) + "\" viewBox=\"0 0 " + std::to_string(axes.width) + " " +
         std::to_string(axes.height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + detail::fmt("%.1f", left + pw / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" +
         detail::svg_escape(axes.title) + "</text>\n";
  svg += "<rect x=\"" + detail::fmt("%.1f", left) + "\" y=\"" + detail::fmt("%.1f", top) + "\" width=\"" +
         detail::fmt("%.1f", pw) + "\" height=\"" + detail::fmt("%.1f", ph) + "\" fill=\"none\" stroke=\"black\"/>\n";

  constexpr int kTicks = 5;
  for (int t = 0; t <= kTicks; ++t) {
    const double fx = x_lo + (x_hi - x_lo) * t / kTicks;
    const double sx = px(fx);
    svg += "<line x1=\"" + detail::fmt("%.2f", sx) + "\" y1=\"" + detail::fmt("%.2f", top + ph) + "\" x2=\"" +
           detail::fmt("%.2f", sx) + "\" y2=\"" + detail::fmt("%.2f", top + ph + 5) + "\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + detail::fmt("%.2f", sx) + "\" y=\"" + detail::fmt("%.2f", top + ph + 19) +
           "\" text-anchor=\"middle\">" + detail::fmt("%.6g", fx) + "</text>\n";

    const double fy = y_lo + (y_hi - y_lo) * t / kTicks;
    const double value = axes.log_y ? std::pow(10.0, fy) : fy;
    const double sy = top + (1.0 - (fy - y_lo) / (y_hi - y_lo)) * ph;
    svg += "<line x1=\"" + detail::fmt("%.2f", left - 5) + "\" y1=\"" + detail::fmt("%.2f", sy) + "\" x2=\"" +
           detail::fmt("%.2f", left + pw) + "\" y2=\"" + detail::fmt("%.2f", sy) +
           "\" stroke=\"#dddddd\"/>\n";
    svg += "<text x=\"" + detail::fmt("%.2f", left - 8) + "\" y=\"" + detail::fmt("%.2f", sy + 4) +
           "\" text-anchor=\"end\">" + detail::fmt("%.5g", value) + "</text>\n";
  }
  svg += "<text x=\"" + detail::fmt("%.1f", left + pw / 2) + "\" y=\"" + detail::fmt("%.1f", axes.height - 12.0) +
         "\" text-anchor=\"middle\">" + detail::svg_escape(axes.x_label) + "</text>\n";
  svg += "<text transform=\"translate(18 " + detail::fmt("%.1f", top + ph / 2) +
         ") rotate(-90)\" text-anchor=\"middle\">" + detail::svg_escape(axes.y_label + (axes.log_y ? " (log)" : "")) +
         "</text>\n";

  const std::size_t palette = std::size(detail::kPalette);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    std::string points;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      if (!points.empty()) points += ' ';
      points += detail::fmt("%.2f", px(s.x[i])) + "," + detail::fmt("%.2f", py(s.y[i]));
    }
    svg += "<polyline class=\"series\" fill=\"none\" stroke=\"" + std::string(detail::kPalette[k % palette]) +
           "\" stroke-width=\"1.8\" points=\"" + points + "\"/>\n";
  }

  for (std::size_t k = 0; k < series.size(); ++k) {
    const double ly = top + 14 + 20.0 * static_cast<double>(k);
    const double lx = left + pw + 14;
    svg += "<g class=\"legend-entry\"><line x1=\"" + detail::fmt("%.1f", lx) + "\" y1=\"" + detail::fmt("%.1f", ly) +
           "\" x2=\"" + detail::fmt("%.1f", lx + 22) + "\" y2=\"" + detail::fmt("%.1f", ly) + "\" stroke=\"" +
           detail::kPalette[k % palette] + "\" stroke-width=\"2\"/><text x=\"" + detail::fmt("%.1f", lx + 28) +
           "\" y=\"" + detail::fmt("%.1f", ly + 4) + "\">" + detail::svg_escape(series[k].name) + "</text></g>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace csqn

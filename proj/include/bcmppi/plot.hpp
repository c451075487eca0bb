// Minimal SVG line charts for sweep results. Every chart carries its data as a CSV
// table inside an XML comment so the numbers survive without a viewer.
#pragma once

#include "bcmppi/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace bcmppi {

struct SeriesPoint {
  double x = 0.0;
  double y = 0.0;
  double err = 0.0;  // population std, drawn as a vertical bar
};

struct Series {
  std::string name;
  std::vector<SeriesPoint> points;
};

struct Panel {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

namespace detail {

inline std::string fmt(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
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

inline const char* series_color(std::size_t i) {
  static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  return kColors[i % 6];
}

inline void render_panel(std::ostringstream& svg, const Panel& p, double ox, double oy, double w, double h) {
  const double left = ox + 60, right = ox + w - 15, top = oy + 30, bottom = oy + h - 45;
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : p.series) {
    for (const auto& pt : s.points) {
      xmin = std::min(xmin, pt.x);
      xmax = std::max(xmax, pt.x);
      ymin = std::min(ymin, pt.y - pt.err);
      ymax = std::max(ymax, pt.y + pt.err);
    }
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  ymin = std::min(ymin, 0.0);
  if (xmax == xmin) xmin -= 1, xmax += 1;
  if (ymax == ymin) ymax = ymin + 1;
  ymax += 0.05 * (ymax - ymin);
  auto sx = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (right - left); };
  auto sy = [&](double y) { return bottom - (y - ymin) / (ymax - ymin) * (bottom - top); };

  svg << "<text x=\"" << (left + right) / 2 << "\" y=\"" << oy + 18
      << "\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(p.title) << "</text>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << right << "\" y2=\"" << bottom
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << bottom
      << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = ymin + (ymax - ymin) * i / 4.0;
    svg << "<text x=\"" << left - 5 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\" font-size=\"10\">"
        << fmt(yv, 3) << "</text>\n";
  }
  std::vector<double> ticks;
  for (const auto& s : p.series) {
    for (const auto& pt : s.points) ticks.push_back(pt.x);
  }
  std::sort(ticks.begin(), ticks.end());
  ticks.erase(std::unique(ticks.begin(), ticks.end()), ticks.end());
  for (double xv : ticks) {
    svg << "<text x=\"" << sx(xv) << "\" y=\"" << bottom + 14 << "\" text-anchor=\"middle\" font-size=\"10\">"
        << fmt(xv) << "</text>\n";
  }
  svg << "<text x=\"" << (left + right) / 2 << "\" y=\"" << bottom + 32 << "\" text-anchor=\"middle\" font-size=\"12\">"
      << xml_escape(p.x_label) << "</text>\n";
  svg << "<text x=\"" << ox + 14 << "\" y=\"" << (top + bottom) / 2 << "\" text-anchor=\"middle\" font-size=\"12\""
      << " transform=\"rotate(-90 " << ox + 14 << ' ' << (top + bottom) / 2 << ")\">" << xml_escape(p.y_label)
      << "</text>\n";

  for (std::size_t si = 0; si < p.series.size(); ++si) {
    const auto& s = p.series[si];
    const char* color = series_color(si);
    if (s.points.size() > 1) {
      svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
      for (const auto& pt : s.points) svg << sx(pt.x) << ',' << sy(pt.y) << ' ';
      svg << "\"/>\n";
    }
    for (const auto& pt : s.points) {
      svg << "<circle cx=\"" << sx(pt.x) << "\" cy=\"" << sy(pt.y) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
      if (pt.err > 0) {
        svg << "<line x1=\"" << sx(pt.x) << "\" y1=\"" << sy(pt.y - pt.err) << "\" x2=\"" << sx(pt.x) << "\" y2=\""
            << sy(pt.y + pt.err) << "\" stroke=\"" << color << "\"/>\n";
      }
    }
    svg << "<text x=\"" << right - 110 << "\" y=\"" << top + 14 * (si + 1) << "\" font-size=\"11\" fill=\"" << color
        << "\">" << xml_escape(s.name) << "</text>\n";
  }
}

}  // namespace detail

/// Panels side by side in one SVG document.
inline std::string render_svg(const std::vector<Panel>& panels) {
  const double w = 420, h = 300;
  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w * static_cast<double>(panels.size())
      << "\" height=\"" << h << "\" font-family=\"sans-serif\">\n";
  svg << "<!-- data\n";
  for (const auto& p : panels) {
    svg << "panel," << p.title << "\nseries," << p.x_label << ",mean,std\n";
    for (const auto& s : p.series) {
      for (const auto& pt : s.points) {
        svg << s.name << ',' << format_double(pt.x) << ',' << format_double(pt.y) << ',' << format_double(pt.err)
            << '\n';
      }
    }
  }
  svg << "-->\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < panels.size(); ++i) detail::render_panel(svg, panels[i], w * static_cast<double>(i), 0, w, h);
  svg << "</svg>\n";
  return svg.str();
}

/// Mean/std of `metric` grouped by controller and an x key.
template <typename XKey>
std::vector<Series> group_series(std::span<const SweepRow> rows, const std::string& metric, XKey x_of) {
  std::map<std::string, std::map<double, std::vector<double>>> groups;
  for (const auto& r : rows) {
    if (r.metrics.failed) continue;
    groups[to_string(r.controller)][x_of(r)].push_back(metric_value(r.metrics, metric));
  }
  std::vector<Series> out;
  for (auto& [name, by_x] : groups) {
    Series s{name, {}};
    for (auto& [x, values] : by_x) {
      std::sort(values.begin(), values.end());
      double sum = 0.0;
      for (double v : values) sum += v;
      const double mean = sum / static_cast<double>(values.size());
      double ss = 0.0;
      for (double v : values) ss += (v - mean) * (v - mean);
      s.points.push_back({x, mean, std::sqrt(ss / static_cast<double>(values.size()))});
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// One SVG per aggregated metric (metric vs obstacle count, metric vs K) plus index.html.
/// Returns the written SVG paths.
inline std::vector<std::filesystem::path> write_report(std::span<const SweepRow> rows,
                                                       const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  std::ostringstream index;
  index << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Sweep report</title></head><body>\n";
  index << "<h1>Sweep report</h1>\n<p>" << rows.size() << " episodes.</p>\n";
  for (const char* metric : kAggregatedMetrics) {
    std::vector<Panel> panels;
    panels.push_back({metric + std::string(" vs obstacle count"), "obstacles", metric,
                      group_series(rows, metric, [](const SweepRow& r) { return double(r.obstacle_count); })});
    panels.push_back({metric + std::string(" vs K"), "K", metric,
                      group_series(rows, metric, [](const SweepRow& r) { return double(r.num_samples); })});
    const auto path = dir / (std::string(metric) + ".svg");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write plot " + path.string());
    out << render_svg(panels);
    written.push_back(path);
    index << "<h2>" << metric << "</h2>\n<img src=\"" << metric << ".svg\" alt=\"" << metric << "\">\n";
  }
  index << "</body></html>\n";
  std::ofstream out(dir / "index.html");
  if (!out) throw std::runtime_error("cannot write report index in " + dir.string());
  out << index.str();
  return written;
}

}  // namespace bcmppi

#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace dap::cli {

namespace {

std::string f(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void pad() {
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
    const double m = 0.05 * (hi - lo);
    lo -= m;
    hi += m;
  }
};

constexpr double kLeft = 70, kRight = 170, kTop = 40, kBottom = 60;

void frame(Svg& svg, double w, double h, const std::string& title, const std::string& x_title,
           const std::string& y_title, const Range& yr) {
  svg.rect(0, 0, w, h, "white");
  svg.text(w / 2, 22, title, 15, "middle");
  svg.rect(kLeft, kTop, w - kLeft - kRight, h - kTop - kBottom, "none", "#333");
  svg.text(kLeft + (w - kLeft - kRight) / 2, h - 15, x_title, 12, "middle");
  svg.text(18, kTop + (h - kTop - kBottom) / 2, y_title, 12, "middle", -90);
  for (int k = 0; k <= 4; ++k) {
    const double v = yr.lo + (yr.hi - yr.lo) * k / 4.0;
    const double y = h - kBottom - (h - kTop - kBottom) * k / 4.0;
    svg.line(kLeft - 4, y, kLeft, y, "#333");
    svg.line(kLeft, y, w - kRight, y, "#ddd", 0.5);
    svg.text(kLeft - 6, y + 4, tick_label(v), 10, "end");
  }
}

}  // namespace

Svg::Svg(double width, double height) : width_(width), height_(height) {}

void Svg::comment(const std::string& text) {
  std::string safe = text;
  for (std::size_t p; (p = safe.find("--")) != std::string::npos;) safe.replace(p, 2, "- -");
  body_ += "<!-- " + safe + " -->\n";
}

void Svg::rect(double x, double y, double w, double h, const std::string& fill, const std::string& stroke) {
  body_ += "<rect x=\"" + f(x) + "\" y=\"" + f(y) + "\" width=\"" + f(w) + "\" height=\"" + f(h) + "\" fill=\"" +
           fill + "\" stroke=\"" + stroke + "\"/>\n";
}

void Svg::line(double x1, double y1, double x2, double y2, const std::string& stroke, double width,
               const std::string& dash) {
  body_ += "<line x1=\"" + f(x1) + "\" y1=\"" + f(y1) + "\" x2=\"" + f(x2) + "\" y2=\"" + f(y2) + "\" stroke=\"" +
           stroke + "\" stroke-width=\"" + f(width) + "\"" +
           (dash.empty() ? std::string() : " stroke-dasharray=\"" + dash + "\"") + "/>\n";
}

void Svg::polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke, double width) {
  std::string p;
  for (const auto& [x, y] : pts) p += (p.empty() ? "" : " ") + f(x) + "," + f(y);
  body_ += "<polyline points=\"" + p + "\" fill=\"none\" stroke=\"" + stroke + "\" stroke-width=\"" + f(width) +
           "\"/>\n";
}

void Svg::circle(double cx, double cy, double r, const std::string& fill, double opacity, const std::string& stroke) {
  body_ += "<circle cx=\"" + f(cx) + "\" cy=\"" + f(cy) + "\" r=\"" + f(r) + "\" fill=\"" + fill +
           "\" fill-opacity=\"" + f(opacity) + "\" stroke=\"" + stroke + "\"/>\n";
}

void Svg::text(double x, double y, const std::string& s, double size, const std::string& anchor, double rotate) {
  body_ += "<text x=\"" + f(x) + "\" y=\"" + f(y) + "\" font-family=\"sans-serif\" font-size=\"" + f(size) +
           "\" text-anchor=\"" + anchor + "\"" +
           (rotate != 0.0 ? " transform=\"rotate(" + f(rotate) + " " + f(x) + " " + f(y) + ")\"" : std::string()) +
           ">" + xml_escape(s) + "</text>\n";
}

std::string Svg::str() const {
  return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + f(width_) +
         "\" height=\"" + f(height_) + "\" viewBox=\"0 0 " + f(width_) + " " + f(height_) + "\">\n" + body_ +
         "</svg>\n";
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

const std::string& palette(std::size_t i) {
  static const std::vector<std::string> colors = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % colors.size()];
}

std::string line_chart(const std::string& title, const std::string& x_title, const std::vector<std::string>& x_labels,
                       const std::string& y_title, const std::vector<Series>& series, const std::string& note) {
  const double w = 720, h = 420;
  Svg svg(w, h);
  if (!note.empty()) svg.comment(note);
  Range yr;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      const double e = i < s.err.size() ? s.err[i] : 0.0;
      yr.add(s.y[i] - e);
      yr.add(s.y[i] + e);
    }
  }
  yr.pad();
  frame(svg, w, h, title, x_title, y_title, yr);
  const double pw = w - kLeft - kRight, ph = h - kTop - kBottom;
  const std::size_t n = x_labels.size();
  auto px = [&](std::size_t i) { return kLeft + pw * (n > 1 ? (0.05 + 0.9 * i / (n - 1.0)) : 0.5); };
  auto py = [&](double v) { return h - kBottom - ph * (v - yr.lo) / (yr.hi - yr.lo); };
  for (std::size_t i = 0; i < n; ++i) {
    svg.line(px(i), h - kBottom, px(i), h - kBottom + 4, "#333");
    svg.text(px(i), h - kBottom + 17, x_labels[i], 10, "middle");
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const std::string& color = palette(k);
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < s.y.size() && i < n; ++i) {
      if (!std::isfinite(s.y[i])) continue;
      pts.emplace_back(px(i), py(s.y[i]));
      if (i < s.err.size() && s.err[i] > 0.0) {
        svg.line(px(i), py(s.y[i] - s.err[i]), px(i), py(s.y[i] + s.err[i]), color, 1.0);
      }
      svg.circle(px(i), py(s.y[i]), 3, color);
    }
    svg.polyline(pts, color);
    const double ly = kTop + 10 + 18 * static_cast<double>(k);
    svg.line(w - kRight + 12, ly, w - kRight + 32, ly, color, 2.0);
    svg.text(w - kRight + 38, ly + 4, s.name, 11);
  }
  return svg.str();
}

std::string scatter_plot(const std::string& title, const std::string& x_title, const std::string& y_title,
                         const std::vector<PointGroup>& groups, const std::vector<std::string>& legend_names,
                         const std::vector<std::string>& legend_colors, const std::string& note) {
  const double w = 720, h = 600;
  Svg svg(w, h);
  if (!note.empty()) svg.comment(note);
  Range xr, yr;
  for (const auto& g : groups) {
    for (const auto& [x, y] : g.pts) {
      xr.add(x);
      yr.add(y);
    }
  }
  xr.pad();
  yr.pad();
  frame(svg, w, h, title, x_title, y_title, yr);
  const double pw = w - kLeft - kRight, ph = h - kTop - kBottom;
  auto px = [&](double v) { return kLeft + pw * (v - xr.lo) / (xr.hi - xr.lo); };
  auto py = [&](double v) { return h - kBottom - ph * (v - yr.lo) / (yr.hi - yr.lo); };
  for (int k = 0; k <= 4; ++k) {
    const double v = xr.lo + (xr.hi - xr.lo) * k / 4.0;
    svg.line(px(v), h - kBottom, px(v), h - kBottom + 4, "#333");
    svg.text(px(v), h - kBottom + 17, tick_label(v), 10, "middle");
  }
  for (const auto& g : groups) {
    for (const auto& [x, y] : g.pts) svg.circle(px(x), py(y), g.radius, g.color, g.opacity, g.outlined ? "black" : "none");
  }
  double ly = kTop + 10;
  for (std::size_t k = 0; k < legend_names.size(); ++k, ly += 18) {
    svg.circle(w - kRight + 20, ly, 5, legend_colors[k]);
    svg.text(w - kRight + 32, ly + 4, legend_names[k], 11);
  }
  ly += 8;
  svg.circle(w - kRight + 20, ly, 2, "#555", 0.5);
  svg.text(w - kRight + 32, ly + 4, "real (train)", 11);
  ly += 18;
  svg.circle(w - kRight + 20, ly, 5, "#555", 1.0, "black");
  svg.text(w - kRight + 32, ly + 4, "distilled", 11);
  return svg.str();
}

}  // namespace dap::cli

#pragma once

#include <string>
#include <utility>
#include <vector>

namespace dap::cli {

// Minimal SVG writer. Numbers are printed with fixed precision so output is
// byte-stable across runs.
class Svg {
 public:
  Svg(double width, double height);

  void comment(const std::string& text);
  void rect(double x, double y, double w, double h, const std::string& fill, const std::string& stroke = "none");
  void line(double x1, double y1, double x2, double y2, const std::string& stroke, double width = 1.0,
            const std::string& dash = "");
  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke, double width = 1.5);
  void circle(double cx, double cy, double r, const std::string& fill, double opacity = 1.0,
              const std::string& stroke = "none");
  void text(double x, double y, const std::string& s, double size = 12.0, const std::string& anchor = "start",
            double rotate = 0.0);

  std::string str() const;

 private:
  double width_;
  double height_;
  std::string body_;
};

std::string xml_escape(const std::string& s);
const std::string& palette(std::size_t i);

struct Series {
  std::string name;
  std::vector<double> y;
  std::vector<double> err;  // optional, same length as y
};

// Categorical x axis: one tick per label, series drawn as polylines with
// optional +-err whiskers.
std::string line_chart(const std::string& title, const std::string& x_title, const std::vector<std::string>& x_labels,
                       const std::string& y_title, const std::vector<Series>& series, const std::string& note);

struct PointGroup {
  std::string name;
  std::string color;
  double radius = 2.0;
  double opacity = 0.5;
  bool outlined = false;
  std::vector<std::pair<double, double>> pts;
};

std::string scatter_plot(const std::string& title, const std::string& x_title, const std::string& y_title,
                         const std::vector<PointGroup>& groups, const std::vector<std::string>& legend_names,
                         const std::vector<std::string>& legend_colors, const std::string& note);

}  // namespace dap::cli

#pragma once

// Static plots: 2-D slices of p(theta) and its entropy as CSV grids and SVG
// heatmaps, with optional design points on top.

#include <nroy/acquisition.hpp>
#include <nroy/core.hpp>
#include <nroy/history_match.hpp>

#include <cstdio>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace nroy {

struct SliceGrid {
  std::size_t x_param = 0;
  std::size_t y_param = 1;
  std::size_t nx = 0;
  std::size_t ny = 0;
  std::vector<double> xs;  // cell centres
  std::vector<double> ys;
  std::vector<Point> points;  // row-major, y outer
  std::vector<double> probability;
  std::vector<double> entropy;
  std::vector<Classification> classes;
};

/// Evaluates the field on an nx-by-ny grid of cell centres over parameters
/// (x_param, y_param); every other parameter sits at its midpoint.
inline SliceGrid slice_grid(const PlausibilityField& field, std::size_t x_param, std::size_t y_param, std::size_t nx,
                            std::size_t ny) {
  const auto& space = field.space();
  if (x_param >= space.dim() || y_param >= space.dim() || x_param == y_param)
    throw ArgumentError("report needs two distinct parameters");
  if (nx < 1 || ny < 1) throw ArgumentError("report grid needs at least one cell per axis");
  SliceGrid g;
  g.x_param = x_param;
  g.y_param = y_param;
  g.nx = nx;
  g.ny = ny;
  const auto& px = space[x_param];
  const auto& py = space[y_param];
  for (std::size_t i = 0; i < nx; ++i)
    g.xs.push_back(px.lower + (static_cast<double>(i) + 0.5) / static_cast<double>(nx) * (px.upper - px.lower));
  for (std::size_t i = 0; i < ny; ++i)
    g.ys.push_back(py.lower + (static_cast<double>(i) + 0.5) / static_cast<double>(ny) * (py.upper - py.lower));
  const Point mid = space.midpoint();
  for (std::size_t iy = 0; iy < ny; ++iy)
    for (std::size_t ix = 0; ix < nx; ++ix) {
      Point p = mid;
      p[static_cast<Eigen::Index>(x_param)] = g.xs[ix];
      p[static_cast<Eigen::Index>(y_param)] = g.ys[iy];
      const double prob = field.probability(p);
      g.points.push_back(p);
      g.probability.push_back(prob);
      g.entropy.push_back(nroy::entropy(prob));
      g.classes.push_back(classify_probability(prob, field.p_low, field.p_high));
    }
  return g;
}

inline void write_grid_csv(std::ostream& os, const SliceGrid& g, const ParameterSpace& space) {
  os << space[g.x_param].name << ',' << space[g.y_param].name << ",probability,entropy,class\n";
  char buf[128];
  for (std::size_t c = 0; c < g.points.size(); ++c) {
    const auto& p = g.points[c];
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,", p[static_cast<Eigen::Index>(g.x_param)],
                  p[static_cast<Eigen::Index>(g.y_param)], g.probability[c], g.entropy[c]);
    os << buf << to_string(g.classes[c]) << '\n';
  }
}

namespace detail {

// White -> dark blue ramp on [0,1].
inline std::string ramp(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const int r = static_cast<int>(247 - t * (247 - 8));
  const int g = static_cast<int>(251 - t * (251 - 48));
  const int b = static_cast<int>(255 - t * (255 - 107));
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace detail

enum class SurfaceKind { Probability, Entropy };

/// One <rect> per grid cell, carrying a class attribute with the cell's
/// classification. Entropy is scaled by ln 2 for colouring.
inline void write_heatmap_svg(std::ostream& os, const SliceGrid& g, const ParameterSpace& space, SurfaceKind kind,
                              const std::vector<Point>& overlay = {}) {
  constexpr double cell = 6.0;
  constexpr double margin = 50.0;
  const double w = cell * static_cast<double>(g.nx);
  const double h = cell * static_cast<double>(g.ny);
  const auto& px = space[g.x_param];
  const auto& py = space[g.y_param];
  char buf[256];
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                w + 2 * margin, h + 2 * margin, w + 2 * margin, h + 2 * margin);
  os << buf;
  os << "<title>" << (kind == SurfaceKind::Probability ? "plausibility probability" : "entropy") << "</title>\n";
  os << "<g id=\"cells\">\n";
  for (std::size_t iy = 0; iy < g.ny; ++iy)
    for (std::size_t ix = 0; ix < g.nx; ++ix) {
      const std::size_t c = iy * g.nx + ix;
      const double v = kind == SurfaceKind::Probability ? g.probability[c] : g.entropy[c] / std::log(2.0);
      // Larger y values at the top.
      const double y0 = margin + h - cell * static_cast<double>(iy + 1);
      std::snprintf(buf, sizeof buf, "<rect class=\"%s\" x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"%s\"/>\n",
                    to_string(g.classes[c]).c_str(), margin + cell * static_cast<double>(ix), y0, cell, cell,
                    detail::ramp(v).c_str());
      os << buf;
    }
  os << "</g>\n<g id=\"design\">\n";
  for (const auto& p : overlay) {
    const double fx = (p[static_cast<Eigen::Index>(g.x_param)] - px.lower) / (px.upper - px.lower);
    const double fy = (p[static_cast<Eigen::Index>(g.y_param)] - py.lower) / (py.upper - py.lower);
    std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"#d62728\" stroke=\"black\"/>\n",
                  margin + fx * w, margin + h - fy * h);
    os << buf;
  }
  os << "</g>\n";
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">", margin + w / 2, h + 2 * margin - 15);
  os << buf << px.name << "</text>\n";
  std::snprintf(buf, sizeof buf, "<text x=\"15\" y=\"%.1f\" transform=\"rotate(-90 15 %.1f)\" text-anchor=\"middle\">",
                margin + h / 2, margin + h / 2);
  os << buf << py.name << "</text>\n";
  os << "</svg>\n";
}

}  // namespace nroy

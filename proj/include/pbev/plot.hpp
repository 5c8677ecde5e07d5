#pragma once

// Minimal SVG line plots and PGM/SVG heatmap output.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "pbev/eval.hpp"

namespace pbev {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

struct PlotOptions {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y{false};
  int width{640}, height{420};
};

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

inline void write_line_plot_svg(std::ostream& os, const std::vector<Series>& series, const PlotOptions& opt = {}) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
  const double ml = 70, mr = 20, mt = 36, mb = 50;
  const double pw = opt.width - ml - mr, ph = opt.height - mt - mb;
  const auto ty = [&](double v) { return opt.log_y ? std::log10(std::max(v, 1e-300)) : v; };

  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]) || (opt.log_y && s.y[i] <= 0.0)) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  if (!(x1 >= x0)) x0 = 0, x1 = 1;
  if (!(y1 >= y0)) y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const auto px = [&](double x) { return ml + (x - x0) / (x1 - x0) * pw; };
  const auto py = [&](double y) { return mt + ph - (ty(y) - y0) / (y1 - y0) * ph; };

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opt.width << "\" height=\"" << opt.height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double fx = x0 + (x1 - x0) * k / 4.0, fy = y0 + (y1 - y0) * k / 4.0;
    const double gx = ml + pw * k / 4.0, gy = mt + ph - ph * k / 4.0;
    os << "<text x=\"" << gx << "\" y=\"" << mt + ph + 16 << "\" text-anchor=\"middle\">" << fx << "</text>\n";
    os << "<text x=\"" << ml - 6 << "\" y=\"" << gy + 4 << "\" text-anchor=\"end\">"
       << (opt.log_y ? std::pow(10.0, fy) : fy) << "</text>\n";
  }
  os << "<text x=\"" << ml + pw / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(opt.title)
     << "</text>\n";
  os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << opt.height - 10 << "\" text-anchor=\"middle\">"
     << xml_escape(opt.x_label) << "</text>\n";
  os << "<text transform=\"translate(16," << mt + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << xml_escape(opt.y_label) << "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = palette[si % 7];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.2\" points=\"";
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.y[i]) || (opt.log_y && s.y[i] <= 0.0)) continue;
      os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    }
    os << "\"/>\n";
    os << "<text x=\"" << ml + pw - 4 << "\" y=\"" << mt + 14 + 14 * si << "\" text-anchor=\"end\" fill=\"" << color
       << "\">" << xml_escape(s.name) << "</text>\n";
  }
  os << "</svg>\n";
}

// Binary 8-bit graymap, scaled to the map maximum, row 0 (y_max) first.
inline void write_pgm(std::ostream& os, const Heatmap& hm) {
  const double mx = hm.values.empty() ? 0.0 : *std::max_element(hm.values.begin(), hm.values.end());
  os << "P5\n" << hm.cols << ' ' << hm.rows << "\n255\n";
  for (std::size_t r = hm.rows; r-- > 0;)
    for (std::size_t c = 0; c < hm.cols; ++c) {
      const double v = mx > 0.0 ? hm.at(r, c) / mx : 0.0;
      os.put(static_cast<char>(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
    }
}

// Heatmap as a grid of gray rectangles with optional point overlay (meters).
inline void write_heatmap_svg(std::ostream& os, const Heatmap& hm, const std::vector<Vec2>& overlay = {},
                              int cell_px = 3) {
  const double mx = hm.values.empty() ? 0.0 : *std::max_element(hm.values.begin(), hm.values.end());
  const double W = static_cast<double>(hm.cols * cell_px), H = static_cast<double>(hm.rows * cell_px);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"black\"/>\n";
  for (std::size_t r = 0; r < hm.rows; ++r)
    for (std::size_t c = 0; c < hm.cols; ++c) {
      const int g = mx > 0.0 ? static_cast<int>(std::lround(255.0 * std::clamp(hm.at(r, c) / mx, 0.0, 1.0))) : 0;
      if (g == 0) continue;
      os << "<rect x=\"" << c * cell_px << "\" y=\"" << (hm.rows - 1 - r) * cell_px << "\" width=\"" << cell_px
         << "\" height=\"" << cell_px << "\" fill=\"rgb(" << g << ',' << g << ',' << g << ")\"/>\n";
    }
  for (Vec2 p : overlay) {
    const double x = (p.x - hm.extent.x_min) / hm.extent.width() * W;
    const double y = H - (p.y - hm.extent.y_min) / hm.extent.height() * H;
    os << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"2.5\" fill=\"none\" stroke=\"red\"/>\n";
  }
  os << "</svg>\n";
}

}  // namespace pbev

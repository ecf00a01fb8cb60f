#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cfq::svg {

// Minimal deterministic chart writer. Reports stay numeric in the .tsv files;
// these renderings exist only for eyeballs, so the layout is fixed and no
// timestamps or randomness ever enter the output.

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

namespace detail {

inline constexpr double kW = 640.0, kH = 420.0;
inline constexpr double kL = 70.0, kR = 20.0, kT = 40.0, kB = 50.0;
inline constexpr const char* kPalette[] = {"#4363d8", "#e6194b", "#3cb44b", "#f58231",
                                           "#911eb4", "#469990"};
inline constexpr std::size_t kPaletteSize = 6;

inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

struct Range {
  double lo = 0.0, hi = 1.0;
};

inline Range pad_range(double lo, double hi) {
  if (!(lo < hi)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

inline double sx(double x, const Range& r) { return kL + (x - r.lo) / (r.hi - r.lo) * (kW - kL - kR); }
inline double sy(double y, const Range& r) { return kH - kB - (y - r.lo) / (r.hi - r.lo) * (kH - kT - kB); }

inline void open_doc(std::ofstream& out, const std::string& title) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" viewBox=\"0 0 " << kW << " " << kH << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\""
      << " font-size=\"15\">" << title << "</text>\n";
}

inline void axes(std::ofstream& out, const Range& xr, const Range& yr, const std::string& xlabel,
                 const std::string& ylabel) {
  out << "<rect x=\"" << kL << "\" y=\"" << kT << "\" width=\"" << kW - kL - kR << "\" height=\""
      << kH - kT - kB << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = xr.lo + (xr.hi - xr.lo) * i / 4.0;
    const double fy = yr.lo + (yr.hi - yr.lo) * i / 4.0;
    out << "<text x=\"" << num(sx(fx, xr)) << "\" y=\"" << kH - kB + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << num(fx)
        << "</text>\n";
    out << "<text x=\"" << kL - 8 << "\" y=\"" << num(sy(fy, yr) + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << num(fy)
        << "</text>\n";
  }
  out << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << xlabel
      << "</text>\n";
  out << "<text x=\"16\" y=\"" << kH / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\""
      << "rotate(-90 16 " << kH / 2 << ")\">" << ylabel << "</text>\n";
}

inline void legend(std::ofstream& out, const std::vector<Series>& series) {
  double y = kT + 14.0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % kPaletteSize];
    out << "<rect x=\"" << kW - kR - 130 << "\" y=\"" << y - 9
        << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n"
        << "<text x=\"" << kW - kR - 115 << "\" y=\"" << y
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << series[i].label << "</text>\n";
    y += 16.0;
  }
}

inline Range span_x(const std::vector<Series>& series) {
  double lo = 1e300, hi = -1e300;
  for (const Series& s : series)
    for (const auto& [x, y] : s.points) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  return pad_range(lo, hi);
}

inline Range span_y(const std::vector<Series>& series) {
  double lo = 1e300, hi = -1e300;
  for (const Series& s : series)
    for (const auto& [x, y] : s.points) {
      lo = std::min(lo, y);
      hi = std::max(hi, y);
    }
  return pad_range(lo, hi);
}

}  // namespace detail

inline void write_scatter(const std::string& path, const std::vector<Series>& series,
                          const std::string& title, const std::string& xlabel,
                          const std::string& ylabel) {
  using namespace detail;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("svg: cannot open " + path);
  const Range xr = span_x(series), yr = span_y(series);
  open_doc(out, title);
  axes(out, xr, yr, xlabel, ylabel);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % kPaletteSize];
    for (const auto& [x, y] : series[i].points)
      out << "<circle cx=\"" << num(sx(x, xr)) << "\" cy=\"" << num(sy(y, yr))
          << "\" r=\"2.2\" fill=\"" << color << "\" fill-opacity=\"0.6\"/>\n";
  }
  legend(out, series);
  out << "</svg>\n";
}

inline void write_lines(const std::string& path, const std::vector<Series>& series,
                        const std::string& title, const std::string& xlabel,
                        const std::string& ylabel) {
  using namespace detail;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("svg: cannot open " + path);
  const Range xr = span_x(series), yr = span_y(series);
  open_doc(out, title);
  axes(out, xr, yr, xlabel, ylabel);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % kPaletteSize];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : series[i].points)
      out << num(sx(x, xr)) << "," << num(sy(y, yr)) << " ";
    out << "\"/>\n";
  }
  legend(out, series);
  out << "</svg>\n";
}

inline void write_bars(const std::string& path,
                       const std::vector<std::pair<std::string, double>>& bars,
                       const std::string& title, const std::string& ylabel) {
  using namespace detail;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("svg: cannot open " + path);
  double lo = 0.0, hi = 0.0;
  for (const auto& [label, v] : bars) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const Range yr = pad_range(lo, hi);
  open_doc(out, title);
  axes(out, {0.0, static_cast<double>(bars.size())}, yr, "", ylabel);
  const double slot = (kW - kL - kR) / static_cast<double>(bars.size());
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const char* color = kPalette[i % kPaletteSize];
    const double x = kL + slot * (static_cast<double>(i) + 0.25);
    const double y0 = sy(0.0, yr), y1 = sy(bars[i].second, yr);
    out << "<rect x=\"" << num(x) << "\" y=\"" << num(std::min(y0, y1)) << "\" width=\""
        << num(slot * 0.5) << "\" height=\"" << num(std::abs(y0 - y1)) << "\" fill=\"" << color
        << "\"/>\n";
    out << "<text x=\"" << num(x + slot * 0.25) << "\" y=\"" << kH - kB + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
        << bars[i].first << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace cfq::svg

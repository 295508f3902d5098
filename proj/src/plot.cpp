#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "compmark/errors.hpp"
#include "compmark/io.hpp"

namespace compmark {

namespace {

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

bool usable(const CurveReport& rep, std::size_t k) {
  return !(k < rep.masked.size() && rep.masked[k]) && std::isfinite(rep.observed[k]);
}

}  // namespace

std::string render_svg(const CurveReport& rep, const PlotOptions& opt) {
  const bool band = rep.has_envelope();
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  std::size_t shown = 0;
  for (std::size_t k = 0; k < rep.r.size(); ++k) {
    if (!usable(rep, k)) continue;
    ++shown;
    x0 = std::min(x0, rep.r[k]);
    x1 = std::max(x1, rep.r[k]);
    for (const auto* v : {&rep.observed, &rep.lower, &rep.upper, &rep.null_mean}) {
      if (k < v->size() && std::isfinite((*v)[k])) {
        y0 = std::min(y0, (*v)[k]);
        y1 = std::max(y1, (*v)[k]);
      }
    }
  }
  if (shown == 0) throw ValidationError("cannot plot a fully masked curve");
  if (x1 <= x0) x1 = x0 + 1.0;
  if (y1 <= y0) {
    const double pad = std::max(1e-12, std::abs(y0) * 0.05 + 1e-3);
    y0 -= pad;
    y1 += pad;
  }
  const double ypad = 0.05 * (y1 - y0);
  y0 -= ypad;
  y1 += ypad;

  const double left = 70, right = 20, top = 30, bottom = 50;
  const double pw = opt.width - left - right, ph = opt.height - top - bottom;
  auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return top + (y1 - y) / (y1 - y0) * ph; };
  auto points = [&](const std::vector<double>& v, bool reverse) {
    std::string s;
    for (std::size_t q = 0; q < rep.r.size(); ++q) {
      const std::size_t k = reverse ? rep.r.size() - 1 - q : q;
      if (!usable(rep, k) || !std::isfinite(v[k])) continue;
      if (!s.empty()) s += ' ';
      s += fixed(sx(rep.r[k])) + "," + fixed(sy(v[k]));
    }
    return s;
  };

  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"no\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << opt.width << "\" height=\""
    << opt.height << "\" viewBox=\"0 0 " << opt.width << " " << opt.height << "\">\n"
    << "<rect x=\"0\" y=\"0\" width=\"" << opt.width << "\" height=\"" << opt.height << "\" fill=\"white\"/>\n";
  if (!opt.title.empty()) {
    o << "<text x=\"" << fixed(left + pw / 2) << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">"
      << escape(opt.title) << "</text>\n";
  }
  o << "<g stroke=\"black\" stroke-width=\"1\">\n"
    << "<line x1=\"" << fixed(left) << "\" y1=\"" << fixed(top + ph) << "\" x2=\"" << fixed(left + pw) << "\" y2=\""
    << fixed(top + ph) << "\"/>\n"
    << "<line x1=\"" << fixed(left) << "\" y1=\"" << fixed(top) << "\" x2=\"" << fixed(left) << "\" y2=\""
    << fixed(top + ph) << "\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    o << "<line x1=\"" << fixed(sx(xv)) << "\" y1=\"" << fixed(top + ph) << "\" x2=\"" << fixed(sx(xv))
      << "\" y2=\"" << fixed(top + ph + 5) << "\"/>\n";
    o << "<line x1=\"" << fixed(left - 5) << "\" y1=\"" << fixed(sy(yv)) << "\" x2=\"" << fixed(left)
      << "\" y2=\"" << fixed(sy(yv)) << "\"/>\n";
  }
  o << "</g>\n<g font-size=\"11\" font-family=\"sans-serif\">\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    o << "<text x=\"" << fixed(sx(xv)) << "\" y=\"" << fixed(top + ph + 18) << "\" text-anchor=\"middle\">"
      << tick(xv) << "</text>\n";
    o << "<text x=\"" << fixed(left - 8) << "\" y=\"" << fixed(sy(yv) + 4) << "\" text-anchor=\"end\">" << tick(yv)
      << "</text>\n";
  }
  const std::string xlabel = opt.r_units.empty() ? "r" : "r [" + opt.r_units + "]";
  o << "<text x=\"" << fixed(left + pw / 2) << "\" y=\"" << fixed(opt.height - 10.0)
    << "\" text-anchor=\"middle\">" << escape(xlabel) << "</text>\n"
    << "<text x=\"16\" y=\"" << fixed(top + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << fixed(top + ph / 2) << ")\">" << escape(rep.label) << "</text>\n</g>\n";
  if (band) {
    o << "<polygon fill=\"#c8c8c8\" stroke=\"none\" points=\"" << points(rep.upper, false) << " "
      << points(rep.lower, true) << "\"/>\n";
    o << "<polyline fill=\"none\" stroke=\"#555555\" stroke-width=\"1\" stroke-dasharray=\"6,4\" points=\""
      << points(rep.null_mean, false) << "\"/>\n";
  }
  o << "<polyline fill=\"none\" stroke=\"black\" stroke-width=\"1.5\" points=\"" << points(rep.observed, false)
    << "\"/>\n</svg>\n";
  return o.str();
}

void render_plot(const CurveReport& report, const std::string& path, const PlotOptions& options) {
  const std::string svg = render_svg(report, options);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write '" + path + "'");
  f << svg;
  if (!f) throw ValidationError("write failed: '" + path + "'");
}

}  // namespace compmark

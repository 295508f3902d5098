#include "compmark/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "compmark/errors.hpp"

namespace compmark {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string where(const std::string& source, std::size_t line) { return source + ":" + std::to_string(line) + ": "; }

double to_double(const std::string& field, const std::string& ctx) {
  double v = 0.0;
  const char* b = field.data();
  const char* e = b + field.size();
  if (!field.empty() && *b == '+') ++b;
  const auto res = std::from_chars(b, e, v);
  if (field.empty() || res.ec != std::errc() || res.ptr != e) {
    throw ValidationError(ctx + "not a number: '" + field + "'");
  }
  return v;
}

int to_int(const std::string& field, const std::string& ctx) {
  int v = 0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (field.empty() || res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    throw ValidationError(ctx + "not an integer type label: '" + field + "'");
  }
  return v;
}

Composition read_composition(const std::vector<double>& raw, double w, ZeroPolicy policy, const std::string& ctx) {
  try {
    const double sum = std::accumulate(raw.begin(), raw.end(), 0.0);
    const bool has_zero = std::find(raw.begin(), raw.end(), 0.0) != raw.end();
    const bool negative = std::any_of(raw.begin(), raw.end(), [](double v) { return v < 0.0; });
    if (!negative && std::abs(sum - w) <= 1e-12 * w && (!has_zero || policy == ZeroPolicy::keep)) {
      return Composition(raw, w);
    }
    return closure(raw, w, policy);
  } catch (const ValidationError& e) {
    throw ValidationError(ctx + e.what());
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write '" + path + "'");
  return f;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot read '" + path + "'");
  return f;
}

std::string field_or_empty(const std::vector<double>& v, std::size_t k, bool masked) {
  if (masked || k >= v.size() || !std::isfinite(v[k])) return {};
  return format_double(v[k]);
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

MarkedPattern read_pattern_csv(std::istream& in, ZeroPolicy policy, const std::string& source) {
  double w = 1.0;
  std::optional<Window> window;
  std::vector<std::string> header;
  std::size_t header_line = 0;
  std::string line;
  std::size_t lineno = 0;

  MarkedPattern p;
  std::vector<std::size_t> row_lines;
  int col_type = -1, col_total = -1;
  std::vector<int> col_c, col_b;

  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '#') {
      const std::string body = trim(std::string_view(t).substr(1));
      if (body.rfind("w=", 0) == 0) {
        w = to_double(trim(body.substr(2)), where(source, lineno));
        if (!(w > 0.0)) throw ValidationError(where(source, lineno) + "w must be positive");
      } else if (body.rfind("window=", 0) == 0) {
        const auto f = split(body.substr(7));
        if (f.size() != 4) throw ValidationError(where(source, lineno) + "window needs x_min,x_max,y_min,y_max");
        const auto ctx = where(source, lineno);
        try {
          window = Window(to_double(f[0], ctx), to_double(f[1], ctx), to_double(f[2], ctx), to_double(f[3], ctx));
        } catch (const ValidationError& e) {
          throw ValidationError(ctx + e.what());
        }
      }
      continue;
    }
    if (header.empty()) {
      header = split(t);
      header_line = lineno;
      const auto ctx = where(source, lineno);
      if (header.size() < 2 || header[0] != "x" || header[1] != "y") {
        throw ValidationError(ctx + "header must start with x,y");
      }
      for (std::size_t c = 2; c < header.size(); ++c) {
        const auto& h = header[c];
        if (h == "type") {
          col_type = static_cast<int>(c);
        } else if (h == "total") {
          col_total = static_cast<int>(c);
        } else if (h == "c_" + std::to_string(col_c.size() + 1)) {
          col_c.push_back(static_cast<int>(c));
        } else if (h == "b_" + std::to_string(col_b.size() + 1)) {
          col_b.push_back(static_cast<int>(c));
        } else {
          throw ValidationError(ctx + "unexpected column '" + h + "'");
        }
      }
      if (col_c.size() < 2) throw ValidationError(ctx + "need at least two mark columns c_1,c_2");
      if (!col_b.empty() && col_b.size() != col_c.size()) {
        throw ValidationError(ctx + "columns b_* must match c_* in number");
      }
      if (col_type >= 0) p.types.emplace();
      if (col_total >= 0) p.totals.emplace();
      if (!col_b.empty()) p.marks_b.emplace();
      continue;
    }

    const auto ctx = where(source, lineno);
    const auto f = split(t);
    if (f.size() != header.size()) {
      throw ValidationError(ctx + "expected " + std::to_string(header.size()) + " fields, found " +
                            std::to_string(f.size()));
    }
    p.points.push_back({to_double(f[0], ctx), to_double(f[1], ctx)});
    std::vector<double> raw;
    for (int c : col_c) raw.push_back(to_double(f[static_cast<std::size_t>(c)], ctx));
    p.marks.push_back(read_composition(raw, w, policy, ctx));
    if (!col_b.empty()) {
      raw.clear();
      for (int c : col_b) raw.push_back(to_double(f[static_cast<std::size_t>(c)], ctx));
      p.marks_b->push_back(read_composition(raw, w, policy, ctx));
    }
    if (col_type >= 0) p.types->push_back(to_int(f[static_cast<std::size_t>(col_type)], ctx));
    if (col_total >= 0) p.totals->push_back(to_double(f[static_cast<std::size_t>(col_total)], ctx));
    row_lines.push_back(lineno);
  }
  if (header.empty()) throw ValidationError(source + ": no header row");
  (void)header_line;
  if (window) p.window = *window;

  const auto report = validate_pattern(p, policy);
  if (!report.ok) {
    const std::size_t at = report.index && *report.index < row_lines.size() ? row_lines[*report.index] : header_line;
    throw ValidationError(where(source, at) + report.message);
  }
  return p;
}

MarkedPattern parse_pattern_csv(const std::string& path, ZeroPolicy policy) {
  auto f = open_in(path);
  return read_pattern_csv(f, policy, path);
}

void write_pattern_csv(const MarkedPattern& p, std::ostream& out) {
  const double w = p.marks.empty() ? 1.0 : p.marks.front().total();
  const std::size_t d = p.parts();
  out << "# w=" << format_double(w) << "\n";
  out << "# window=" << format_double(p.window.x_min()) << "," << format_double(p.window.x_max()) << ","
      << format_double(p.window.y_min()) << "," << format_double(p.window.y_max()) << "\n";
  out << "x,y";
  if (p.types) out << ",type";
  if (p.totals) out << ",total";
  for (std::size_t j = 0; j < d; ++j) out << ",c_" << j + 1;
  if (p.marks_b) {
    for (std::size_t j = 0; j < d; ++j) out << ",b_" << j + 1;
  }
  out << "\n";
  for (std::size_t i = 0; i < p.size(); ++i) {
    out << format_double(p.points[i].x) << "," << format_double(p.points[i].y);
    if (p.types) out << "," << (*p.types)[i];
    if (p.totals) out << "," << format_double((*p.totals)[i]);
    for (double v : p.marks[i].parts()) out << "," << format_double(v);
    if (p.marks_b) {
      for (double v : (*p.marks_b)[i].parts()) out << "," << format_double(v);
    }
    out << "\n";
  }
}

void write_pattern_csv(const MarkedPattern& p, const std::string& path) {
  auto f = open_out(path);
  write_pattern_csv(p, f);
  if (!f) throw ValidationError("write failed: '" + path + "'");
}

CurveReport CurveReport::from_curve(const CharacteristicCurve& c) {
  CurveReport r;
  r.label = c.label;
  r.r = c.r;
  r.observed = c.values;
  r.masked = c.masked;
  return r;
}

CurveReport CurveReport::from_envelope(const EnvelopeResult& e, const std::string& label, std::uint64_t seed) {
  CurveReport r;
  r.label = label;
  r.r = e.r;
  r.observed = e.observed;
  r.null_mean = e.null_mean;
  r.lower = e.lower;
  r.upper = e.upper;
  r.masked = e.masked;
  r.p_value = e.p_value;
  r.replicates = e.replicates;
  r.seed = seed;
  return r;
}

void write_curves_csv(const CurveReport& report, std::ostream& out) {
  if (!report.label.empty()) out << "# label=" << report.label << "\n";
  out << "r,observed,null_mean,lo,hi,masked\n";
  for (std::size_t k = 0; k < report.r.size(); ++k) {
    const bool m = k < report.masked.size() && report.masked[k];
    out << format_double(report.r[k]) << "," << field_or_empty(report.observed, k, m) << ","
        << field_or_empty(report.null_mean, k, m) << "," << field_or_empty(report.lower, k, m) << ","
        << field_or_empty(report.upper, k, m) << "," << (m ? 1 : 0) << "\n";
  }
  if (report.p_value) {
    out << "# p=" << format_double(*report.p_value) << " s=" << report.replicates << " seed=" << report.seed << "\n";
  }
}

void write_curves_csv(const CurveReport& report, const std::string& path) {
  auto f = open_out(path);
  write_curves_csv(report, f);
  if (!f) throw ValidationError("write failed: '" + path + "'");
}

CurveReport read_curves_csv(std::istream& in, const std::string& source) {
  CurveReport rep;
  std::string line;
  std::size_t lineno = 0;
  bool header = false, any_envelope = false;
  std::vector<double> nm, lo, hi;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto ctx = where(source, lineno);
    if (t.front() == '#') {
      const std::string body = trim(std::string_view(t).substr(1));
      if (body.rfind("label=", 0) == 0) {
        rep.label = body.substr(6);
      } else if (body.rfind("p=", 0) == 0) {
        std::istringstream ss(body);
        std::string tok;
        while (ss >> tok) {
          const auto eq = tok.find('=');
          if (eq == std::string::npos) continue;
          const auto key = tok.substr(0, eq), val = tok.substr(eq + 1);
          if (key == "p") rep.p_value = to_double(val, ctx);
          if (key == "s") rep.replicates = static_cast<std::size_t>(std::stoull(val));
          if (key == "seed") rep.seed = std::stoull(val);
        }
      }
      continue;
    }
    if (!header) {
      if (t != "r,observed,null_mean,lo,hi,masked") throw ValidationError(ctx + "unexpected curve header");
      header = true;
      continue;
    }
    const auto f = split(t);
    if (f.size() != 6) throw ValidationError(ctx + "expected 6 fields");
    auto opt = [&](const std::string& s) { return s.empty() ? kNaN : to_double(s, ctx); };
    rep.r.push_back(to_double(f[0], ctx));
    rep.observed.push_back(opt(f[1]));
    nm.push_back(opt(f[2]));
    lo.push_back(opt(f[3]));
    hi.push_back(opt(f[4]));
    if (!f[3].empty()) any_envelope = true;
    if (f[5] != "0" && f[5] != "1") throw ValidationError(ctx + "masked must be 0 or 1");
    rep.masked.push_back(f[5] == "1");
  }
  if (!header) throw ValidationError(source + ": no curve header");
  if (any_envelope) {
    rep.null_mean = std::move(nm);
    rep.lower = std::move(lo);
    rep.upper = std::move(hi);
  }
  return rep;
}

CurveReport read_curves_csv(const std::string& path) {
  auto f = open_in(path);
  return read_curves_csv(f, path);
}

void write_coordinates_csv(const std::vector<Coordinates>& coords, std::ostream& out) {
  if (coords.empty()) {
    out << "\n";
    return;
  }
  out << "# transform=" << coords.front().transform.name() << "\n";
  const std::size_t k = coords.front().values.size();
  for (std::size_t j = 0; j < k; ++j) out << (j ? "," : "") << "z_" << j + 1;
  out << "\n";
  for (const auto& z : coords) {
    for (std::size_t j = 0; j < z.values.size(); ++j) out << (j ? "," : "") << format_double(z.values[j]);
    out << "\n";
  }
}

}  // namespace compmark

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "compmark/characteristics.hpp"
#include "compmark/coda.hpp"
#include "compmark/envelope.hpp"
#include "compmark/pattern.hpp"

namespace compmark {

/// Pattern CSV:
///
///   # w=100
///   # window=0,1,0,1
///   x,y[,type][,total],c_1,...,c_D[,b_1,...,b_D]
///
/// Rows are closed to w unless they already sum to it within 1e-12 relative,
/// so files written by write_pattern_csv read back bit-exactly. Errors name
/// the source and line.
MarkedPattern read_pattern_csv(std::istream& in, ZeroPolicy policy = ZeroPolicy::strict,
                               const std::string& source = "<input>");
MarkedPattern parse_pattern_csv(const std::string& path, ZeroPolicy policy = ZeroPolicy::strict);

void write_pattern_csv(const MarkedPattern& p, std::ostream& out);
void write_pattern_csv(const MarkedPattern& p, const std::string& path);

/// Flat view of a curve or envelope for serialization and plotting.
struct CurveReport {
  std::string label;
  std::vector<double> r;
  std::vector<double> observed;
  std::vector<double> null_mean;  ///< empty for curve-only runs
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<bool> masked;
  std::optional<double> p_value;
  std::size_t replicates = 0;
  std::uint64_t seed = 0;

  bool has_envelope() const noexcept { return !lower.empty(); }
  static CurveReport from_curve(const CharacteristicCurve& c);
  static CurveReport from_envelope(const EnvelopeResult& e, const std::string& label, std::uint64_t seed);
};

/// Columns r,observed,null_mean,lo,hi,masked with 17 significant digits;
/// masked or absent values are empty fields. Envelope runs end with
/// "# p=<p> s=<s> seed=<seed>".
void write_curves_csv(const CurveReport& report, std::ostream& out);
void write_curves_csv(const CurveReport& report, const std::string& path);
CurveReport read_curves_csv(std::istream& in, const std::string& source = "<input>");
CurveReport read_curves_csv(const std::string& path);

void write_coordinates_csv(const std::vector<Coordinates>& coords, std::ostream& out);

struct PlotOptions {
  std::string r_units = "";
  std::string title = "";
  int width = 640;
  int height = 400;
};

/// SVG 1.1: shaded band polygon plus observed and dashed null-mean polylines
/// for envelopes, a single observed polyline otherwise. Masked entries are
/// skipped. Throws ValidationError for a fully masked curve.
std::string render_svg(const CurveReport& report, const PlotOptions& options = {});
void render_plot(const CurveReport& report, const std::string& path, const PlotOptions& options = {});

/// "%.17g"
std::string format_double(double v);

}  // namespace compmark

#include "compmark/cli.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "compmark/characteristics.hpp"
#include "compmark/coda.hpp"
#include "compmark/envelope.hpp"
#include "compmark/errors.hpp"
#include "compmark/io.hpp"
#include "compmark/mixed.hpp"
#include "compmark/pattern.hpp"

namespace compmark::cli {

namespace {

struct Options {
  std::string input;
  std::string output;
  std::string plot;
  std::string transform = "clr";
  std::string basis;
  std::string zero_policy = "strict";
  std::string window;

  std::string characteristic = "nabla";
  std::string testfn;
  std::string scope = "compositional";
  std::size_t j = 1, l = 1;
  std::optional<double> rmax;
  std::size_t nr = 128;
  std::string rgrid;
  std::optional<double> bandwidth;
  std::string kernel = "epanechnikov";
  std::size_t min_pairs = 5;
  std::string edge = "none";
  std::string beta_mode = "variance_ratio";
  double beta = 1.0;
  std::string cross;
  std::string types;
  std::string r_units;

  std::size_t nperm = 999;
  double alpha = 0.05;
  std::optional<std::uint64_t> seed;
  bool combined = false;

  std::string points = "poisson:100";
  std::size_t parts = 3;
  std::string marks = "iid";
  double mark_sd = 0.5;
  std::string totals;
};

std::vector<double> parse_list(const std::string& text, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ValidationError(flag + ": not a number: '" + tok + "'");
    }
  }
  return out;
}

Window parse_window(const std::string& text) {
  const auto v = parse_list(text, "--window");
  if (v.size() != 4) throw ValidationError("--window needs x_min,x_max,y_min,y_max");
  return Window(v[0], v[1], v[2], v[3]);
}

TransformSpec resolve_transform(const Options& o) {
  if (o.transform == "ilr_basis") {
    if (o.basis.empty()) throw ValidationError("--transform ilr_basis needs --basis <csv>");
    std::ifstream f(o.basis);
    if (!f) throw ValidationError("--basis: cannot read '" + o.basis + "'");
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty() || line.front() == '#') continue;
      rows.push_back(parse_list(line, "--basis"));
    }
    if (rows.empty()) throw ValidationError("--basis: empty file");
    Eigen::MatrixXd b(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows.front().size()) throw ValidationError("--basis: ragged rows");
      for (std::size_t c = 0; c < rows[i].size(); ++c) {
        b(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
      }
    }
    return TransformSpec::ilr_basis(b);
  }
  return TransformSpec::parse(o.transform);
}

MarkedPattern load(const Options& o) {
  if (o.input.empty()) throw ValidationError("--input is required");
  auto p = parse_pattern_csv(o.input, parse_zero_policy(o.zero_policy));
  if (!o.window.empty()) {
    p.window = parse_window(o.window);
    require_valid(p, parse_zero_policy(o.zero_policy));
  }
  return p;
}

EstimatorConfig make_config(const MarkedPattern& p, const Options& o) {
  EstimatorConfig cfg;
  if (!o.rgrid.empty()) {
    cfg.rgrid = RGrid(parse_list(o.rgrid, "--rgrid"));
    cfg.bandwidth = o.bandwidth ? *o.bandwidth : 0.15 / std::sqrt(intensity(p));
  } else {
    cfg = EstimatorConfig::defaults(p, o.nr, o.bandwidth, o.rmax);
  }
  cfg.kernel = parse_kernel(o.kernel);
  cfg.min_pairs = o.min_pairs;
  cfg.edge = parse_edge_correction(o.edge);
  cfg.validate();
  return cfg;
}

std::optional<int> parse_type(const std::string& t) {
  if (t == "*" || t.empty()) return std::nullopt;
  try {
    return std::stoi(t);
  } catch (const std::exception&) {
    throw ValidationError("--types: not an integer: '" + t + "'");
  }
}

TestFunctionSpec make_spec(const Options& o, TestFamily forced, bool force) {
  TestFamily family = o.testfn.empty() ? (force ? forced : TestFamily::t1) : parse_test_family(o.testfn);
  if (force && family != forced) {
    throw ValidationError("--characteristic " + o.characteristic + " conflicts with --testfn " + o.testfn);
  }
  TestFunctionSpec spec;
  spec.family = family;
  spec.transform = resolve_transform(o);
  if (o.scope == "compositional") {
    spec.scope = Scope::compositional;
    if (family == TestFamily::t2 || family == TestFamily::t3) {
      throw ValidationError("--scope compositional conflicts with --testfn " + to_string(family));
    }
  } else if (o.scope == "componentwise") {
    spec.scope = Scope::componentwise;
    if (o.j < 1 || o.l < 1) throw ValidationError("--j/--l are 1-based");
    spec.j = o.j - 1;
    spec.l = o.l - 1;
  } else {
    throw ValidationError("--scope must be compositional or componentwise");
  }
  if (!o.cross.empty() || !o.types.empty()) {
    CrossFilter cf{false, false, std::nullopt, std::nullopt};
    const std::string sets = o.cross.empty() ? "aa" : o.cross;
    if (sets.size() != 2 || (sets[0] != 'a' && sets[0] != 'b') || (sets[1] != 'a' && sets[1] != 'b')) {
      throw ValidationError("--cross must be two letters from {a,b}, e.g. ab");
    }
    cf.first_from_b = sets[0] == 'b';
    cf.second_from_b = sets[1] == 'b';
    if (!o.types.empty()) {
      const auto comma = o.types.find(',');
      if (comma == std::string::npos) throw ValidationError("--types needs p,q");
      cf.first_type = parse_type(o.types.substr(0, comma));
      cf.second_type = parse_type(o.types.substr(comma + 1));
    }
    spec.cross = cf;
  }
  return spec;
}

// One curve per pattern; patterns share p's locations so the pair table is
// built once.
Statistic make_statistic(const MarkedPattern& p, const Options& o, const EstimatorConfig& cfg) {
  const std::string& c = o.characteristic;
  auto est = std::make_shared<const KernelEstimator>(p, cfg);
  if (c == "rho2") {
    return [est](const MarkedPattern&) { return est->rho2(); };
  }
  if (c == "mixed" || c == "mixed_kappa") {
    const TestFamily family = o.testfn.empty() ? TestFamily::t4 : parse_test_family(o.testfn);
    if (o.scope != "compositional") throw ValidationError("--characteristic " + c + " is compositional only");
    const TransformSpec transform = resolve_transform(o);
    const double beta = resolve_beta(BetaWeight::parse(o.beta_mode, o.beta), p);
    if (c == "mixed") {
      return [est, family, beta, transform](const MarkedPattern& q) {
        return mixed_characteristic(*est, q, family, beta, transform);
      };
    }
    return [est, family, beta, transform](const MarkedPattern& q) {
      return mixed_kappa(*est, q, family, beta, transform);
    };
  }
  if (c == "nabla" || c == "variogram" || c == "cross") {
    const auto spec = make_spec(o, TestFamily::t4, c == "variogram");
    if (c == "cross" && !spec.cross) throw ValidationError("--characteristic cross needs --cross and/or --types");
    return [est, spec](const MarkedPattern& q) { return est->nabla(q, spec); };
  }
  if (c == "kappa" || c == "correlation") {
    const auto spec = make_spec(o, TestFamily::t1, c == "correlation");
    return [est, spec](const MarkedPattern& q) { return est->kappa(q, spec); };
  }
  if (c == "K" || c == "L") {
    const auto spec = make_spec(o, TestFamily::t1, false);
    const bool l = c == "L";
    return [spec, cfg, l](const MarkedPattern& q) {
      auto k = estimate_mark_weighted_K(q, spec, cfg);
      return l ? l_transform(k) : k;
    };
  }
  throw ValidationError("unknown --characteristic '" + c + "'");
}

void emit_curves(const CurveReport& rep, const Options& o, std::ostream& out) {
  if (o.output.empty()) {
    write_curves_csv(rep, out);
  } else {
    write_curves_csv(rep, o.output);
  }
  if (!o.plot.empty()) {
    PlotOptions po;
    po.r_units = o.r_units;
    po.title = rep.label;
    render_plot(rep, o.plot, po);
  }
}

void warn(const std::vector<std::string>& warnings, std::ostream& err) {
  for (const auto& w : warnings) err << "warning: " << w << "\n";
}

int do_transform(const Options& o, std::ostream& out) {
  const auto p = load(o);
  const auto spec = resolve_transform(o);
  std::vector<Coordinates> coords;
  coords.reserve(p.size());
  for (const auto& m : p.marks) coords.push_back(transform(m, spec));
  if (o.output.empty()) {
    write_coordinates_csv(coords, out);
  } else {
    std::ofstream f(o.output, std::ios::binary);
    if (!f) throw ValidationError("--output: cannot write '" + o.output + "'");
    write_coordinates_csv(coords, f);
  }
  return 0;
}

int do_summary(const Options& o, std::ostream& out) {
  const auto p = load(o);
  if (p.size() < 2) throw ValidationError("summary needs at least two points");
  const CompositionSample sample(p.marks);
  std::ostringstream s;
  s << "n=" << p.size() << "\nD=" << p.parts() << "\nintensity=" << format_double(intensity(p)) << "\ncenter=";
  const auto cen = center(sample);
  for (std::size_t j = 0; j < cen.size(); ++j) s << (j ? "," : "") << format_double(cen[j]);
  s << "\nvariation_matrix=\n";
  const auto t = variation_matrix(sample);
  for (Eigen::Index a = 0; a < t.rows(); ++a) {
    for (Eigen::Index b = 0; b < t.cols(); ++b) s << (b ? "," : "") << format_double(t(a, b));
    s << "\n";
  }
  s << "mvar=" << format_double(metric_variance(sample)) << "\n";
  if (o.output.empty()) {
    out << s.str();
  } else {
    std::ofstream f(o.output, std::ios::binary);
    if (!f) throw ValidationError("--output: cannot write '" + o.output + "'");
    f << s.str();
  }
  return 0;
}

int do_estimate(const Options& o, std::ostream& out, std::ostream& err) {
  const auto p = load(o);
  const auto cfg = make_config(p, o);
  const auto curve = make_statistic(p, o, cfg)(p);
  warn(curve.warnings, err);
  emit_curves(CurveReport::from_curve(curve), o, out);
  return 0;
}

int do_envelope(const Options& o, std::ostream& out, std::ostream& err) {
  if (!o.seed) throw ValidationError("--seed is required for envelope runs");
  const auto p = load(o);
  const auto cfg = make_config(p, o);
  CurveFamily family;
  std::string label;
  if (o.combined) {
    // stack the componentwise auto-characteristics of every coordinate
    if (o.scope != "componentwise") throw ValidationError("--combined needs --scope componentwise");
    const std::string ch = o.characteristic;
    if (ch != "nabla" && ch != "variogram" && ch != "kappa" && ch != "correlation") {
      throw ValidationError("--combined supports nabla, variogram, kappa and correlation");
    }
    const auto base = make_spec(o, ch == "variogram" ? TestFamily::t4 : TestFamily::t1,
                                ch == "variogram" || ch == "correlation");
    const std::size_t dim = base.transform.output_dim(p.parts());
    auto est = std::make_shared<const KernelEstimator>(p, cfg);
    const bool normalized = ch == "kappa" || ch == "correlation";
    MultiStatistic stat = [est, base, dim, normalized](const MarkedPattern& q) {
      std::vector<CharacteristicCurve> out;
      for (std::size_t j = 0; j < dim; ++j) {
        auto spec = base;
        spec.j = spec.l = j;
        out.push_back(normalized ? est->kappa(q, spec) : est->nabla(q, spec));
      }
      return out;
    };
    family = curve_family_combined(p, stat, o.nperm, *o.seed);
  } else {
    family = curve_family(p, make_statistic(p, o, cfg), o.nperm, *o.seed);
  }
  label = family.label;
  const auto env = global_envelope(family, o.alpha);
  emit_curves(CurveReport::from_envelope(env, label, *o.seed), o, out);
  if (!o.output.empty()) {
    out << "p=" << format_double(env.p_value) << " exceedances=" << env.exceedances.size() << "\n";
  }
  (void)err;
  return 0;
}

int do_simulate(const Options& o, std::ostream& out) {
  SimulationSpec sim;
  if (!o.window.empty()) sim.window = parse_window(o.window);
  const auto colon = o.points.find(':');
  if (colon == std::string::npos) throw ValidationError("--points must be binomial:N or poisson:LAMBDA");
  const std::string kind = o.points.substr(0, colon);
  const auto value = parse_list(o.points.substr(colon + 1), "--points");
  if (value.size() != 1) throw ValidationError("--points must be binomial:N or poisson:LAMBDA");
  if (kind == "binomial") {
    if (value[0] < 0 || value[0] != std::floor(value[0])) throw ValidationError("--points binomial:N needs N >= 0");
    sim.points = PointModel::binomial(static_cast<std::size_t>(value[0]));
  } else if (kind == "poisson") {
    sim.points = PointModel::poisson(value[0]);
  } else {
    throw ValidationError("--points must be binomial:N or poisson:LAMBDA");
  }
  if (o.parts < 2) throw ValidationError("--parts must be at least 2");
  if (!(o.mark_sd >= 0.0)) throw ValidationError("--mark-sd must be nonnegative");
  const std::size_t dim = o.parts - 1;
  std::vector<double> mean(dim, 0.0);
  if (o.marks == "iid") {
    sim.marks = MarkModel::iid(mean, Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim),
                                                                static_cast<Eigen::Index>(dim)) *
                                         (o.mark_sd * o.mark_sd));
  } else if (o.marks.rfind("geo:", 0) == 0) {
    const auto range = parse_list(o.marks.substr(4), "--marks");
    if (range.size() != 1) throw ValidationError("--marks geo:RANGE");
    sim.marks = MarkModel::geostatistical(mean, std::vector<double>(dim, o.mark_sd * o.mark_sd), range[0]);
  } else {
    throw ValidationError("--marks must be iid or geo:RANGE");
  }
  if (!o.totals.empty()) {
    const auto t = parse_list(o.totals, "--totals");
    if (t.size() != 2) throw ValidationError("--totals needs LOG_MEAN,LOG_SD");
    sim.totals = TotalsModel{t[0], t[1]};
  }
  const auto p = simulate_pattern(sim, o.seed.value_or(0));
  if (o.output.empty()) {
    write_pattern_csv(p, out);
  } else {
    write_pattern_csv(p, o.output);
  }
  return 0;
}

void add_io(CLI::App* sc, Options& o) {
  sc->add_option("--input,-i", o.input, "pattern CSV");
  sc->add_option("--output,-o", o.output, "output file (default: stdout)");
  sc->add_option("--transform", o.transform, "identity|lr|alr|clr|ilr|ilr_basis|alpha_clr:A|alpha_ilr:A");
  sc->add_option("--basis", o.basis, "CSV of the (D-1) x D contrast matrix for ilr_basis");
  sc->add_option("--zero-policy", o.zero_policy, "strict|replace|keep");
  sc->add_option("--window", o.window, "x_min,x_max,y_min,y_max");
}

void add_estimation(CLI::App* sc, Options& o) {
  add_io(sc, o);
  sc->add_option("--characteristic", o.characteristic,
                 "nabla|kappa|variogram|correlation|rho2|K|L|cross|mixed|mixed_kappa");
  sc->add_option("--testfn", o.testfn, "t1..t6");
  sc->add_option("--scope", o.scope, "compositional|componentwise");
  sc->add_option("--j", o.j, "first coordinate (1-based)");
  sc->add_option("--l", o.l, "second coordinate (1-based)");
  sc->add_option("--rmax", o.rmax, "largest r");
  sc->add_option("--nr", o.nr, "number of r values");
  sc->add_option("--rgrid", o.rgrid, "explicit r values, comma separated");
  sc->add_option("--bandwidth", o.bandwidth, "kernel bandwidth");
  sc->add_option("--kernel", o.kernel, "epanechnikov|box|gaussian_truncated");
  sc->add_option("--min-pairs", o.min_pairs, "mask r values with fewer effective pairs");
  sc->add_option("--edge", o.edge, "none|translation (rho2 and K only)");
  sc->add_option("--beta-mode", o.beta_mode, "unit|variance_ratio|user");
  sc->add_option("--beta", o.beta, "beta for --beta-mode user");
  sc->add_option("--cross", o.cross, "mark sets of the two points, e.g. ab");
  sc->add_option("--types", o.types, "type filter p,q (* for any)");
  sc->add_option("--plot", o.plot, "SVG output");
  sc->add_option("--r-units", o.r_units, "unit label of r in plots");
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Summary characteristics and permutation tests for composition-marked point patterns", "compmark"};
  app.require_subcommand(1, 1);

  auto* tr = app.add_subcommand("transform", "write transformed mark coordinates");
  add_io(tr, o);
  auto* su = app.add_subcommand("summary", "center, variation matrix and metric variance");
  add_io(su, o);
  auto* es = app.add_subcommand("estimate", "estimate one characteristic curve");
  add_estimation(es, o);
  auto* en = app.add_subcommand("envelope", "random-labeling global envelope test");
  add_estimation(en, o);
  en->add_option("--nperm", o.nperm, "number of permutations s");
  en->add_option("--alpha", o.alpha, "test level");
  en->add_option("--seed", o.seed, "RNG seed (required)");
  en->add_flag("--combined", o.combined, "combined vector of all componentwise auto-characteristics");
  auto* si = app.add_subcommand("simulate", "write a synthetic pattern");
  si->add_option("--output,-o", o.output, "output file (default: stdout)");
  si->add_option("--points", o.points, "binomial:N or poisson:LAMBDA");
  si->add_option("--parts", o.parts, "number of parts D");
  si->add_option("--marks", o.marks, "iid or geo:RANGE");
  si->add_option("--mark-sd", o.mark_sd, "sd of the ilr coordinates");
  si->add_option("--window", o.window, "x_min,x_max,y_min,y_max");
  si->add_option("--totals", o.totals, "LOG_MEAN,LOG_SD of log-normal totals");
  si->add_option("--seed", o.seed, "RNG seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (tr->parsed()) return do_transform(o, out);
    if (su->parsed()) return do_summary(o, out);
    if (es->parsed()) return do_estimate(o, out, err);
    if (en->parsed()) return do_envelope(o, out, err);
    if (si->parsed()) return do_simulate(o, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const UnsupportedError& e) {
    err << "error: unsupported: " << e.what() << "\n";
    return 2;
  } catch (const DegeneracyError& e) {
    err << "error: degenerate: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace compmark::cli

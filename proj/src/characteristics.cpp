#include "compmark/characteristics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "compmark/errors.hpp"
#include "compmark/parallel.hpp"

namespace compmark {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
// Pair-table entries per accumulation chunk. Chunk partials are merged in
// chunk order, which keeps sums independent of the worker count.
constexpr std::size_t kChunk = 4096;

double component(TestFamily f, double a, double b, double ca, double cb) {
  switch (f) {
    case TestFamily::t1: return a * b;
    case TestFamily::t2: return a;
    case TestFamily::t3: return b;
    case TestFamily::t4: return 0.5 * (a - b) * (a - b);
    case TestFamily::t5:
    case TestFamily::t6: return (a - ca) * (b - cb);
  }
  return kNaN;
}

bool centred(TestFamily f) { return f == TestFamily::t5 || f == TestFamily::t6; }

std::string family_symbol(TestFamily f) {
  switch (f) {
    case TestFamily::t1: return "tau";
    case TestFamily::t2: return "tau_first";
    case TestFamily::t3: return "tau_second";
    case TestFamily::t4: return "gamma";
    case TestFamily::t5: return "iota_shi";
    case TestFamily::t6: return "iota_sch";
  }
  return "?";
}

void check_spec(const TestFunctionSpec& spec, std::size_t parts) {
  const std::size_t dim = spec.transform.output_dim(parts);
  if (spec.scope == Scope::componentwise) {
    if (spec.j >= dim || spec.l >= dim) {
      throw ValidationError("coordinate index out of range: (" + std::to_string(spec.j + 1) + "," +
                            std::to_string(spec.l + 1) + ") with " + std::to_string(dim) + " coordinates");
    }
    return;
  }
  if (!spec.transform.is_aitchison()) {
    throw ValidationError("compositional scope needs lr, clr, ilr or an alpha transform, got " +
                          spec.transform.name());
  }
  if (spec.family == TestFamily::t2 || spec.family == TestFamily::t3) {
    throw ValidationError("t2/t3 are componentwise only");
  }
}

TermSpec term_of(const TestFunctionSpec& spec, std::size_t parts) {
  return {spec.family, spec.scope, spec.j, spec.l, spec.transform.aitchison_weight(parts)};
}

std::vector<double> means_over(const CoordinateTable& t, std::span<const std::size_t> rows) {
  std::vector<double> m(t.cols(), 0.0);
  for (auto i : rows) {
    for (std::size_t c = 0; c < t.cols(); ++c) m[c] += t.at(i, c);
  }
  for (auto& v : m) v /= static_cast<double>(rows.size());
  return m;
}

double mean_square(const CoordinateTable& t, std::span<const std::size_t> rows, std::size_t c) {
  double s = 0.0;
  for (auto i : rows) s += t.at(i, c) * t.at(i, c);
  return s / static_cast<double>(rows.size());
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  std::iota(r.begin(), r.end(), std::size_t{0});
  return r;
}

// Moment-form normalizer and a magnitude scale for the degeneracy check.
// Covariances pair row i of `first` with row i of `second`.
std::pair<double, double> moment_normalizer(const TermSpec& term, const CoordinateTable& first,
                                            const CoordinateTable& second,
                                            std::span<const std::size_t> rows1,
                                            std::span<const std::size_t> rows2) {
  if (rows1.empty() || rows2.empty()) return {kNaN, 0.0};
  const auto mu1 = means_over(first, rows1);
  const auto mu2 = means_over(second, rows2);
  auto var = [](const CoordinateTable& t, std::span<const std::size_t> rows, std::size_t c, double mu) {
    double s = 0.0;
    for (auto i : rows) s += (t.at(i, c) - mu) * (t.at(i, c) - mu);
    return s / static_cast<double>(rows.size());
  };
  auto cov = [&](std::size_t j, std::size_t l) {
    double s = 0.0;
    for (auto i : rows1) s += (first.at(i, j) - mu1[j]) * (second.at(i, l) - mu2[l]);
    return s / static_cast<double>(rows1.size());
  };

  if (term.scope == Scope::compositional) {
    double v = 0.0, scale = 0.0;
    for (std::size_t c = 0; c < first.cols(); ++c) {
      scale += mean_square(first, rows1, c);
      v += term.family == TestFamily::t1 ? mu1[c] * mu1[c] : var(first, rows1, c, mu1[c]);
    }
    return {term.weight * v, term.weight * scale};
  }
  const std::size_t j = term.j, l = term.l;
  const double scale = 0.5 * (mean_square(first, rows1, j) + mean_square(second, rows2, l));
  switch (term.family) {
    case TestFamily::t1: return {mu1[j] * mu2[l], scale};
    case TestFamily::t2: return {mu1[j], std::sqrt(mean_square(first, rows1, j))};
    case TestFamily::t3: return {mu2[l], std::sqrt(mean_square(second, rows2, l))};
    case TestFamily::t4: {
      const double dm = mu1[j] - mu2[l];
      return {0.5 * (var(first, rows1, j, mu1[j]) + var(second, rows2, l, mu2[l]) + dm * dm), scale};
    }
    case TestFamily::t5:
    case TestFamily::t6: return {cov(j, l), scale};
  }
  return {kNaN, 0.0};
}

// Everything needed to evaluate one TestFunctionSpec on one pattern.
struct Prepared {
  CoordinateTable first;
  CoordinateTable second;
  TermSpec term;
  PairFilter filter;
  std::vector<std::size_t> rows_first;
  std::vector<std::size_t> rows_second;
  std::string label;
  std::vector<std::string> warnings;
};

Prepared prepare(const MarkedPattern& p, const TestFunctionSpec& spec) {
  if (p.size() < 2) throw ValidationError("need at least two points, got " + std::to_string(p.size()));
  if (p.marks.size() != p.size()) throw ValidationError("marks and points differ in length");
  const std::size_t parts = p.parts();
  check_spec(spec, parts);

  const std::vector<Composition>* marks_first = &p.marks;
  const std::vector<Composition>* marks_second = &p.marks;
  PairFilter filter;
  std::vector<std::string> warnings;
  if (spec.cross) {
    const CrossFilter& cf = *spec.cross;
    if (spec.scope == Scope::compositional) {
      throw UnsupportedError("cross characteristics are componentwise only");
    }
    if (spec.family == TestFamily::t6) {
      throw UnsupportedError("t6 has no cross version");
    }
    if (cf.first_from_b || cf.second_from_b) {
      if (!p.marks_b) throw ValidationError("cross characteristic needs a second mark set (b)");
      if (p.marks_b->size() != p.size()) throw ValidationError("mark set b and points differ in length");
      if (!p.marks_b->empty() && p.marks_b->front().size() != parts) {
        throw ValidationError("mark sets a and b differ in dimension");
      }
      if (cf.first_from_b) marks_first = &*p.marks_b;
      if (cf.second_from_b) marks_second = &*p.marks_b;
    }
    if (cf.first_type || cf.second_type) {
      if (!p.types) throw ValidationError("type filter needs type labels");
      if (spec.family == TestFamily::t5) throw UnsupportedError("t5 cross-type characteristic");
      filter = {&*p.types, cf.first_type, cf.second_type};
    }
  }

  Prepared out{CoordinateTable::from_marks(*marks_first, spec.transform),
               CoordinateTable::from_marks(*marks_second, spec.transform),
               term_of(spec, parts),
               filter,
               {},
               {},
               spec.label(),
               std::move(warnings)};
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!filter.active() || !filter.first || (*p.types)[i] == *filter.first) out.rows_first.push_back(i);
    if (!filter.active() || !filter.second || (*p.types)[i] == *filter.second) out.rows_second.push_back(i);
  }
  if (out.rows_first.empty() || out.rows_second.empty()) {
    out.warnings.push_back("empty type stratum: no " +
                           std::string(out.rows_first.empty() ? "first" : "second") + "-type points");
  }
  return out;
}

}  // namespace

// --- parsing and labels -------------------------------------------------

TestFamily parse_test_family(const std::string& name) {
  static const char* names[] = {"t1", "t2", "t3", "t4", "t5", "t6"};
  for (int i = 0; i < 6; ++i) {
    if (name == names[i]) return static_cast<TestFamily>(i);
  }
  throw ValidationError("unknown test function '" + name + "' (t1..t6)");
}

std::string to_string(TestFamily family) { return "t" + std::to_string(static_cast<int>(family) + 1); }

KernelKind parse_kernel(const std::string& name) {
  if (name == "epanechnikov") return KernelKind::epanechnikov;
  if (name == "box") return KernelKind::box;
  if (name == "gaussian_truncated" || name == "gaussian") return KernelKind::gaussian_truncated;
  throw ValidationError("unknown kernel '" + name + "'");
}

std::string to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::epanechnikov: return "epanechnikov";
    case KernelKind::box: return "box";
    case KernelKind::gaussian_truncated: return "gaussian_truncated";
  }
  return "?";
}

EdgeCorrection parse_edge_correction(const std::string& name) {
  if (name == "none") return EdgeCorrection::none;
  if (name == "translation") return EdgeCorrection::translation;
  throw ValidationError("unknown edge correction '" + name + "'");
}

TestFunctionSpec TestFunctionSpec::compositional(TestFamily family, TransformSpec transform) {
  TestFunctionSpec s;
  s.family = family;
  s.scope = Scope::compositional;
  s.transform = std::move(transform);
  return s;
}

TestFunctionSpec TestFunctionSpec::componentwise(TestFamily family, std::size_t j, std::size_t l,
                                                 TransformSpec transform) {
  TestFunctionSpec s;
  s.family = family;
  s.scope = Scope::componentwise;
  s.j = j;
  s.l = l;
  s.transform = std::move(transform);
  return s;
}

std::string TestFunctionSpec::label() const {
  std::string s = family_symbol(family) + "_";
  if (scope == Scope::compositional) {
    s += "cc";
  } else {
    s += std::to_string(j + 1) + "," + std::to_string(l + 1);
  }
  s += "^" + transform.name();
  if (cross) {
    s += std::string("[") + (cross->first_from_b ? "b" : "a") + (cross->second_from_b ? "b" : "a");
    if (cross->first_type || cross->second_type) {
      s += ";" + (cross->first_type ? std::to_string(*cross->first_type) : std::string("*")) + "," +
           (cross->second_type ? std::to_string(*cross->second_type) : std::string("*"));
    }
    s += "]";
  }
  return s;
}

// --- kernel and configuration -------------------------------------------

Kernel::Kernel(KernelKind kind, double bandwidth) : kind_(kind), bandwidth_(bandwidth) {
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) {
    throw ValidationError("bandwidth must be positive, got " + std::to_string(bandwidth));
  }
  switch (kind) {
    case KernelKind::epanechnikov:
      support_ = bandwidth;
      scale_ = 0.75 / bandwidth;
      break;
    case KernelKind::box:
      support_ = bandwidth;
      scale_ = 0.5 / bandwidth;
      break;
    case KernelKind::gaussian_truncated:
      // renormalised so the truncated density still integrates to one
      support_ = 3.0 * bandwidth;
      scale_ = 1.0 / (bandwidth * std::sqrt(2.0 * std::numbers::pi) * std::erf(3.0 / std::numbers::sqrt2));
      break;
  }
}

double Kernel::operator()(double u) const noexcept {
  const double a = std::abs(u);
  if (a > support_) return 0.0;
  switch (kind_) {
    case KernelKind::epanechnikov: {
      const double v = u / bandwidth_;
      return scale_ * (1.0 - v * v);
    }
    case KernelKind::box: return scale_;
    case KernelKind::gaussian_truncated: {
      const double v = u / bandwidth_;
      return scale_ * std::exp(-0.5 * v * v);
    }
  }
  return 0.0;
}

EstimatorConfig EstimatorConfig::defaults(const MarkedPattern& p, std::size_t grid_points,
                                          std::optional<double> bandwidth, std::optional<double> r_max) {
  const double lambda = intensity(p);
  EstimatorConfig cfg;
  cfg.bandwidth = bandwidth ? *bandwidth : 0.15 / std::sqrt(lambda);
  const double hi = r_max ? *r_max : std::min(p.window.width(), p.window.height()) / 4.0;
  if (!(cfg.bandwidth > 0.0)) throw ValidationError("bandwidth must be positive");
  if (!(hi > cfg.bandwidth)) {
    throw ValidationError("default grid is empty: r_max " + std::to_string(hi) + " <= bandwidth " +
                          std::to_string(cfg.bandwidth));
  }
  cfg.rgrid = RGrid::linear(cfg.bandwidth, hi, grid_points);
  return cfg;
}

void EstimatorConfig::validate() const { Kernel(kernel, bandwidth); }

std::size_t CharacteristicCurve::unmasked_count() const noexcept {
  return static_cast<std::size_t>(std::count(masked.begin(), masked.end(), false));
}

// --- coordinate tables --------------------------------------------------

CoordinateTable::CoordinateTable(std::size_t rows, std::size_t cols, std::vector<double> data,
                                 std::size_t parts, double weight)
    : rows_(rows), cols_(cols), parts_(parts), weight_(weight), data_(std::move(data)) {
  if (data_.size() != rows * cols) throw ValidationError("coordinate table size mismatch");
}

CoordinateTable CoordinateTable::from_marks(std::span<const Composition> marks, const TransformSpec& transform) {
  if (marks.empty()) return CoordinateTable(0, 0, {}, 0);
  const std::size_t parts = marks.front().size();
  const std::size_t cols = transform.output_dim(parts);
  std::vector<double> data;
  data.reserve(marks.size() * cols);
  for (const auto& m : marks) {
    if (m.size() != parts) throw ValidationError("marks differ in dimension");
    const auto z = compmark::transform(m, transform);
    data.insert(data.end(), z.values.begin(), z.values.end());
  }
  return CoordinateTable(marks.size(), cols, std::move(data), parts, transform.aitchison_weight(parts));
}

CoordinateTable CoordinateTable::from_scalars(std::span<const double> values) {
  return CoordinateTable(values.size(), 1, std::vector<double>(values.begin(), values.end()), 1);
}

CoordinateTable CoordinateTable::with_column(std::span<const double> column, double factor) const {
  if (column.size() != rows_) throw ValidationError("appended column has wrong length");
  std::vector<double> data;
  data.reserve(rows_ * (cols_ + 1));
  for (std::size_t i = 0; i < rows_; ++i) {
    const auto r = row(i);
    data.insert(data.end(), r.begin(), r.end());
    data.push_back(factor * column[i]);
  }
  return CoordinateTable(rows_, cols_ + 1, std::move(data), parts_, weight_);
}

CoordinateTable CoordinateTable::select_rows(std::span<const std::size_t> rows) const {
  std::vector<double> data;
  data.reserve(rows.size() * cols_);
  for (auto i : rows) {
    const auto r = row(i);
    data.insert(data.end(), r.begin(), r.end());
  }
  return CoordinateTable(rows.size(), cols_, std::move(data), parts_, weight_);
}

std::vector<double> CoordinateTable::column_means() const {
  if (rows_ == 0) return std::vector<double>(cols_, kNaN);
  return means_over(*this, all_rows(rows_));
}

Eigen::MatrixXd CoordinateTable::covariance() const {
  if (rows_ == 0) throw ValidationError("covariance of an empty table");
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
      data_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_));
  const Eigen::MatrixXd centred = m.rowwise() - m.colwise().mean();
  return centred.transpose() * centred / static_cast<double>(rows_);
}

// --- test functions -----------------------------------------------------

double eval_term(const TermSpec& term, std::span<const double> z1, std::span<const double> z2,
                 std::span<const double> center_first, std::span<const double> center_second) {
  const bool needs_center = centred(term.family);
  if (needs_center && (center_first.size() != z1.size() || center_second.size() != z2.size())) {
    throw ValidationError(to_string(term.family) + " needs centring moments");
  }
  if (term.scope == Scope::componentwise) {
    if (term.j >= z1.size() || term.l >= z2.size()) throw ValidationError("coordinate index out of range");
    return component(term.family, z1[term.j], z2[term.l], needs_center ? center_first[term.j] : 0.0,
                     needs_center ? center_second[term.l] : 0.0);
  }
  if (z1.size() != z2.size()) throw ValidationError("coordinate lengths differ");
  double s = 0.0;
  for (std::size_t c = 0; c < z1.size(); ++c) {
    s += component(term.family, z1[c], z2[c], needs_center ? center_first[c] : 0.0,
                   needs_center ? center_second[c] : 0.0);
  }
  return term.weight * s;
}

double eval_test_function(const TestFunctionSpec& spec, const Coordinates& z1, const Coordinates& z2,
                          std::span<const double> center_first, std::span<const double> center_second) {
  if (z1.source_dim != z2.source_dim || z1.values.size() != z2.values.size()) {
    throw ValidationError("coordinates differ in dimension");
  }
  if (z1.transform.kind() != spec.transform.kind() || z2.transform.kind() != spec.transform.kind()) {
    throw ValidationError("coordinates were not produced by " + spec.transform.name());
  }
  check_spec(spec, z1.source_dim);
  return eval_term(term_of(spec, z1.source_dim), z1.values, z2.values, center_first, center_second);
}

bool PairFilter::accepts(std::size_t i, std::size_t h) const noexcept {
  if (!active()) return true;
  if (first && (*types)[i] != *first) return false;
  if (second && (*types)[h] != *second) return false;
  return true;
}

// --- kernel estimator ---------------------------------------------------

KernelEstimator::KernelEstimator(const MarkedPattern& p, EstimatorConfig config)
    : KernelEstimator(p.window, p.points, std::move(config)) {}

KernelEstimator::KernelEstimator(const Window& window, std::span<const Point> points, EstimatorConfig config)
    : window_(window), n_(points.size()), config_(std::move(config)), kernel_(config_.kernel, config_.bandwidth) {
  if (n_ < 2) throw ValidationError("need at least two points, got " + std::to_string(n_));
  const auto& r = config_.rgrid.values();
  const double reach = r.back() + kernel_.support();
  const double area = window_.area();
  for (std::size_t i = 0; i + 1 < n_; ++i) {
    for (std::size_t h = i + 1; h < n_; ++h) {
      const double dx = points[i].x - points[h].x;
      const double dy = points[i].y - points[h].y;
      const double d = std::hypot(dx, dy);
      if (d > reach) continue;
      const auto lo = std::lower_bound(r.begin(), r.end(), d - kernel_.support());
      const auto hi = std::upper_bound(lo, r.end(), d + kernel_.support());
      if (lo == hi) continue;
      const double ox = window_.width() - std::abs(dx);
      const double oy = window_.height() - std::abs(dy);
      Entry e{static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(h),
              static_cast<std::uint32_t>(lo - r.begin()), static_cast<std::uint32_t>(hi - lo), weights_.size(),
              (ox > 0.0 && oy > 0.0) ? area / (ox * oy) : 0.0};
      for (auto it = lo; it != hi; ++it) weights_.push_back(kernel_(d - *it));
      entries_.push_back(e);
    }
  }
}

KernelEstimator::Sums KernelEstimator::kernel_sums(const CoordinateTable& first, const CoordinateTable& second,
                                                   const TermSpec& term, std::span<const double> center_first,
                                                   std::span<const double> center_second,
                                                   const ConditionalMoments* conditional,
                                                   const PairFilter& filter) const {
  if (first.rows() != n_ || second.rows() != n_) {
    throw ValidationError("coordinate table does not match the point count");
  }
  const std::size_t d = config_.rgrid.size();
  if (conditional && conditional->r.size() != d) throw ValidationError("conditional moments on another grid");
  const std::size_t chunks = (entries_.size() + kChunk - 1) / kChunk;
  std::vector<double> partial(chunks * 3 * d, 0.0);
  const double inv_peak = 1.0 / kernel_.peak();

  parallel_for(chunks, [&](std::size_t c) {
    double* num = partial.data() + c * 3 * d;
    double* den = num + d;
    double* eff = den + d;
    const std::size_t end = std::min(entries_.size(), (c + 1) * kChunk);
    for (std::size_t e = c * kChunk; e < end; ++e) {
      const Entry& en = entries_[e];
      const bool fwd = filter.accepts(en.i, en.h);
      const bool bwd = filter.accepts(en.h, en.i);
      if (!fwd && !bwd) continue;
      const double cnt = static_cast<double>(fwd) + static_cast<double>(bwd);
      const double* w = weights_.data() + en.offset;
      const auto zi1 = first.row(en.i), zh1 = first.row(en.h);
      const auto zi2 = second.row(en.i), zh2 = second.row(en.h);
      if (!conditional) {
        double t = 0.0;
        if (fwd) t += eval_term(term, zi1, zh2, center_first, center_second);
        if (bwd) t += eval_term(term, zh1, zi2, center_first, center_second);
        for (std::uint32_t q = 0; q < en.k_count; ++q) {
          const std::size_t k = en.k_first + q;
          num[k] += w[q] * t;
          den[k] += w[q] * cnt;
          eff[k] += w[q] * cnt * inv_peak;
        }
      } else {
        for (std::uint32_t q = 0; q < en.k_count; ++q) {
          const std::size_t k = en.k_first + q;
          const auto ck = conditional->at(k);
          double t = 0.0;
          if (fwd) t += eval_term(term, zi1, zh2, ck, ck);
          if (bwd) t += eval_term(term, zh1, zi2, ck, ck);
          num[k] += w[q] * t;
          den[k] += w[q] * cnt;
          eff[k] += w[q] * cnt * inv_peak;
        }
      }
    }
  });

  Sums s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (std::size_t c = 0; c < chunks; ++c) {
    const double* part = partial.data() + c * 3 * d;
    for (std::size_t k = 0; k < d; ++k) {
      s.numerator[k] += part[k];
      s.denominator[k] += part[d + k];
      s.effective_pairs[k] += part[2 * d + k];
    }
  }
  return s;
}

CharacteristicCurve KernelEstimator::masked_ratio(const Sums& sums, std::string label) const {
  const std::size_t d = config_.rgrid.size();
  CharacteristicCurve out;
  out.r = config_.rgrid.values();
  out.values.assign(d, kNaN);
  out.masked.assign(d, true);
  out.label = std::move(label);
  const double need = static_cast<double>(config_.min_pairs) - 1e-9;
  for (std::size_t k = 0; k < d; ++k) {
    if (sums.denominator[k] > 0.0 && sums.effective_pairs[k] >= need) {
      out.values[k] = sums.numerator[k] / sums.denominator[k];
      out.masked[k] = false;
    }
  }
  if (out.all_masked()) out.warnings.push_back("all r values masked: bandwidth too small for the grid or too few pairs");
  return out;
}

CharacteristicCurve KernelEstimator::rho2() const {
  const std::size_t d = config_.rgrid.size();
  std::vector<double> mass(d, 0.0), weighted(d, 0.0);
  const bool translate = config_.edge == EdgeCorrection::translation;
  for (const Entry& en : entries_) {
    const double* w = weights_.data() + en.offset;
    for (std::uint32_t q = 0; q < en.k_count; ++q) {
      mass[en.k_first + q] += 2.0 * w[q];
      weighted[en.k_first + q] += 2.0 * w[q] * (translate ? en.edge_weight : 1.0);
    }
  }
  CharacteristicCurve out;
  out.r = config_.rgrid.values();
  out.values.assign(d, kNaN);
  out.masked.assign(d, true);
  out.label = "rho2";
  for (std::size_t k = 0; k < d; ++k) {
    if (mass[k] > 0.0) {
      out.values[k] = weighted[k] / (2.0 * std::numbers::pi * out.r[k] * window_.area());
      out.masked[k] = false;
    }
  }
  if (out.all_masked()) out.warnings.push_back("all r values masked: no pair distances near the grid");
  return out;
}

ConditionalMoments KernelEstimator::conditional_means(const CoordinateTable& table) const {
  if (table.rows() != n_) throw ValidationError("coordinate table does not match the point count");
  const std::size_t d = config_.rgrid.size();
  const std::size_t cols = table.cols();
  std::vector<double> sum(d * cols, 0.0), den(d, 0.0), eff(d, 0.0);
  const double inv_peak = 1.0 / kernel_.peak();
  for (const Entry& en : entries_) {
    const double* w = weights_.data() + en.offset;
    const auto zi = table.row(en.i), zh = table.row(en.h);
    for (std::uint32_t q = 0; q < en.k_count; ++q) {
      const std::size_t k = en.k_first + q;
      for (std::size_t c = 0; c < cols; ++c) sum[k * cols + c] += w[q] * (zi[c] + zh[c]);
      den[k] += 2.0 * w[q];
      eff[k] += 2.0 * w[q] * inv_peak;
    }
  }
  ConditionalMoments out{config_.rgrid.values(), cols, std::vector<double>(d * cols, kNaN),
                         std::vector<bool>(d, true)};
  const double need = static_cast<double>(config_.min_pairs) - 1e-9;
  for (std::size_t k = 0; k < d; ++k) {
    if (den[k] > 0.0 && eff[k] >= need) {
      out.masked[k] = false;
      for (std::size_t c = 0; c < cols; ++c) out.means[k * cols + c] = sum[k * cols + c] / den[k];
    }
  }
  return out;
}

CharacteristicCurve KernelEstimator::nabla_on(const CoordinateTable& first, const CoordinateTable& second,
                                              const TermSpec& term, const PairFilter& filter,
                                              std::string label) const {
  std::vector<double> cf, cs;
  std::optional<ConditionalMoments> cond;
  if (term.family == TestFamily::t5) {
    cf = first.column_means();
    cs = second.column_means();
  } else if (term.family == TestFamily::t6) {
    if (filter.active()) throw UnsupportedError("t6 with a type filter");
    cond = conditional_means(first);
  }
  const Sums s = kernel_sums(first, second, term, cf, cs, cond ? &*cond : nullptr, filter);
  return masked_ratio(s, std::move(label));
}

CharacteristicCurve KernelEstimator::nabla(const MarkedPattern& p, const TestFunctionSpec& spec) const {
  if (p.size() != n_) throw ValidationError("pattern does not match the estimator's points");
  Prepared prep = prepare(p, spec);
  CharacteristicCurve out = nabla_on(prep.first, prep.second, prep.term, prep.filter, prep.label);
  out.warnings.insert(out.warnings.begin(), prep.warnings.begin(), prep.warnings.end());
  return out;
}

CharacteristicCurve KernelEstimator::kappa(const MarkedPattern& p, const TestFunctionSpec& spec) const {
  if (p.size() != n_) throw ValidationError("pattern does not match the estimator's points");
  Prepared prep = prepare(p, spec);
  const auto [norm, scale] = moment_normalizer(prep.term, prep.first, prep.second, prep.rows_first, prep.rows_second);
  require_nondegenerate(norm, scale, "normalizer of " + prep.label);
  CharacteristicCurve out = nabla_on(prep.first, prep.second, prep.term, prep.filter, "kappa_" + prep.label);
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (!out.masked[k]) out.values[k] /= norm;
  }
  out.normalizer = norm;
  out.warnings.insert(out.warnings.begin(), prep.warnings.begin(), prep.warnings.end());
  return out;
}

// --- free functions -----------------------------------------------------

CharacteristicCurve estimate_rho2(const MarkedPattern& p, const EstimatorConfig& cfg) {
  return KernelEstimator(p, cfg).rho2();
}

CharacteristicCurve estimate_nabla(const MarkedPattern& p, const TestFunctionSpec& spec,
                                   const EstimatorConfig& cfg) {
  prepare(p, spec);  // validate before paying for the pair table
  return KernelEstimator(p, cfg).nabla(p, spec);
}

CharacteristicCurve estimate_kappa(const MarkedPattern& p, const TestFunctionSpec& spec,
                                   const EstimatorConfig& cfg) {
  prepare(p, spec);
  return KernelEstimator(p, cfg).kappa(p, spec);
}

CharacteristicCurve estimate_cross(const MarkedPattern& p, const TestFunctionSpec& spec,
                                   const EstimatorConfig& cfg) {
  if (!spec.cross) throw ValidationError("estimate_cross needs a cross filter");
  return estimate_nabla(p, spec, cfg);
}

double normalizer(const TestFunctionSpec& spec, const MarkedPattern& p) {
  Prepared prep = prepare(p, spec);
  return moment_normalizer(prep.term, prep.first, prep.second, prep.rows_first, prep.rows_second).first;
}

double normalizer_on(const TermSpec& term, const CoordinateTable& table) {
  if (table.rows() == 0) throw ValidationError("normalizer of an empty table");
  const auto rows = all_rows(table.rows());
  return moment_normalizer(term, table, table, rows, rows).first;
}

double normalizer_double_sum(const TestFunctionSpec& spec, const MarkedPattern& p) {
  if (centred(spec.family)) throw ValidationError("double-sum normalizer is defined for t1-t4");
  Prepared prep = prepare(p, spec);
  double s = 0.0;
  for (auto i : prep.rows_first) {
    for (auto h : prep.rows_second) s += eval_term(prep.term, prep.first.row(i), prep.second.row(h));
  }
  return s / (static_cast<double>(prep.rows_first.size()) * static_cast<double>(prep.rows_second.size()));
}

void require_nondegenerate(double value, double scale, const std::string& what) {
  if (!std::isfinite(value) || value == 0.0 || std::abs(value) <= 1e-12 * std::abs(scale)) {
    throw DegeneracyError(what + " is zero (degenerate marks); kappa is undefined");
  }
}

ConditionalMoments conditional_moments_at_r(const MarkedPattern& p, const TestFunctionSpec& spec,
                                             const EstimatorConfig& cfg) {
  Prepared prep = prepare(p, spec);
  return KernelEstimator(p, cfg).conditional_means(prep.first);
}

std::vector<std::optional<Composition>> conditional_center(const MarkedPattern& p, const EstimatorConfig& cfg) {
  const auto table = CoordinateTable::from_marks(p.marks, TransformSpec::clr());
  const auto m = KernelEstimator(p, cfg).conditional_means(table);
  const double total = p.marks.front().total();
  std::vector<std::optional<Composition>> out(m.r.size());
  for (std::size_t k = 0; k < m.r.size(); ++k) {
    if (m.masked[k]) continue;
    const auto row = m.at(k);
    Coordinates z{std::vector<double>(row.begin(), row.end()), TransformSpec::clr(), p.parts(), total};
    out[k] = transform_inverse(z);
  }
  return out;
}

CharacteristicCurve estimate_mark_weighted_K(const MarkedPattern& p, const TestFunctionSpec& spec,
                                             const EstimatorConfig& cfg) {
  if (spec.family == TestFamily::t6) throw UnsupportedError("mark-weighted K with t6");
  if (spec.cross) throw UnsupportedError("mark-weighted K for cross characteristics");
  Prepared prep = prepare(p, spec);
  const auto rows = all_rows(p.size());
  const auto [norm, scale] = moment_normalizer(prep.term, prep.first, prep.second, rows, rows);
  require_nondegenerate(norm, scale, "normalizer of " + prep.label);
  std::vector<double> cf, cs;
  if (spec.family == TestFamily::t5) {
    cf = prep.first.column_means();
    cs = prep.second.column_means();
  }

  const auto& r = cfg.rgrid.values();
  const double ww = p.window.width(), wh = p.window.height(), area = p.window.area();
  std::vector<std::pair<double, double>> contrib;  // (distance, weighted t over both orders)
  for (std::size_t i = 0; i + 1 < p.size(); ++i) {
    for (std::size_t h = i + 1; h < p.size(); ++h) {
      const double dx = p.points[i].x - p.points[h].x, dy = p.points[i].y - p.points[h].y;
      const double d = std::hypot(dx, dy);
      if (d > r.back()) continue;
      double e = 1.0;
      if (cfg.edge == EdgeCorrection::translation) e = area / ((ww - std::abs(dx)) * (wh - std::abs(dy)));
      const double t = eval_term(prep.term, prep.first.row(i), prep.second.row(h), cf, cs) +
                       eval_term(prep.term, prep.first.row(h), prep.second.row(i), cf, cs);
      contrib.emplace_back(d, t * e);
    }
  }
  std::sort(contrib.begin(), contrib.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  const double n = static_cast<double>(p.size());
  const double factor = area / (n * (n - 1.0) * norm);
  CharacteristicCurve out;
  out.r = r;
  out.values.resize(r.size());
  out.masked.assign(r.size(), false);
  out.label = "K_" + prep.label;
  out.normalizer = norm;
  double acc = 0.0;
  std::size_t next = 0;
  for (std::size_t k = 0; k < r.size(); ++k) {
    while (next < contrib.size() && contrib[next].first <= r[k]) acc += contrib[next++].second;
    out.values[k] = factor * acc;
  }
  return out;
}

CharacteristicCurve ripley_k(const MarkedPattern& p, const RGrid& grid, EdgeCorrection edge) {
  const auto& r = grid.values();
  std::vector<double> sums(r.size(), 0.0);
  const double ww = p.window.width(), wh = p.window.height(), area = p.window.area();
  for_each_pair(p, [&](const PairDistance& pd) {
    double e = 1.0;
    if (edge == EdgeCorrection::translation) {
      e = area / ((ww - std::abs(p.points[pd.i].x - p.points[pd.j].x)) *
                  (wh - std::abs(p.points[pd.i].y - p.points[pd.j].y)));
    }
    for (std::size_t k = 0; k < r.size(); ++k) {
      if (pd.dist <= r[k]) sums[k] += e;
    }
  });
  const double n = static_cast<double>(p.size());
  CharacteristicCurve out;
  out.r = r;
  out.masked.assign(r.size(), false);
  out.label = "K";
  out.normalizer = 1.0;
  for (double s : sums) out.values.push_back(area / (n * (n - 1.0)) * s);
  return out;
}

CharacteristicCurve l_transform(const CharacteristicCurve& k) {
  CharacteristicCurve out = k;
  out.label = k.label.starts_with("K") ? "L" + k.label.substr(1) : "L(" + k.label + ")";
  bool negative = false;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out.masked[i]) continue;
    if (k.values[i] < 0.0) {
      out.values[i] = kNaN;
      out.masked[i] = true;
      negative = true;
    } else {
      out.values[i] = std::sqrt(k.values[i] / std::numbers::pi);
    }
  }
  if (negative) out.warnings.push_back("negative K entries masked in L");
  return out;
}

}  // namespace compmark

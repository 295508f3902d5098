#include "compmark/mixed.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "compmark/errors.hpp"

namespace compmark {

namespace {

void require_positive_total(double y) {
  if (!(y > 0.0) || !std::isfinite(y)) throw ValidationError("mixed mark: total must be positive, got " + std::to_string(y));
}

void check_family(TestFamily family) {
  if (family == TestFamily::t2 || family == TestFamily::t3) {
    throw ValidationError("mixed characteristics are defined for t1, t4, t5 and t6");
  }
}

std::vector<double> log_totals(const MarkedPattern& p) {
  if (!p.totals) throw ValidationError("mixed characteristic needs totals");
  if (p.totals->size() != p.size()) throw ValidationError("totals and points differ in length");
  std::vector<double> out;
  out.reserve(p.size());
  for (double y : *p.totals) {
    require_positive_total(y);
    out.push_back(std::log(y));
  }
  return out;
}

std::string mixed_label(TestFamily family, const TransformSpec& transform) {
  auto spec = TestFunctionSpec::compositional(family, transform);
  auto base = spec.label();
  const auto hat = base.find('^');
  return base.substr(0, hat) + ",y" + base.substr(hat);
}

}  // namespace

MixedMark::MixedMark(double total, Composition composition) : total_(total), composition_(std::move(composition)) {
  require_positive_total(total);
}

MixedMark MixedMark::from_raw(std::span<const double> raw) {
  const double sum = std::accumulate(raw.begin(), raw.end(), 0.0);
  return MixedMark(sum, closure(raw));
}

MixedMark t_perturb(const MixedMark& a, const MixedMark& b) {
  return MixedMark(a.total() * b.total(), perturb(a.composition(), b.composition()));
}

MixedMark t_power(double xi, const MixedMark& a) {
  return MixedMark(std::pow(a.total(), xi), power(xi, a.composition()));
}

double t_inner(const MixedMark& a, const MixedMark& b, double beta) {
  if (beta < 0.0) throw ValidationError("beta must be nonnegative");
  return ait_inner(a.composition(), b.composition()) + beta * std::log(a.total()) * std::log(b.total());
}

double t_dist_sq(const MixedMark& a, const MixedMark& b, double beta) {
  if (beta < 0.0) throw ValidationError("beta must be nonnegative");
  const double d = ait_dist(a.composition(), b.composition());
  const double dl = std::log(a.total()) - std::log(b.total());
  return d * d + beta * dl * dl;
}

BetaWeight BetaWeight::parse(const std::string& mode, double value) {
  if (mode == "unit") return {Mode::unit, 1.0};
  if (mode == "variance_ratio") return {Mode::variance_ratio, 1.0};
  if (mode == "user") {
    if (!(value >= 0.0)) throw ValidationError("beta must be nonnegative");
    return {Mode::user, value};
  }
  throw ValidationError("unknown beta mode '" + mode + "' (unit, variance_ratio, user)");
}

double resolve_beta(const BetaWeight& weight, const MarkedPattern& p) {
  switch (weight.mode) {
    case BetaWeight::Mode::unit: return 1.0;
    case BetaWeight::Mode::user:
      if (!(weight.value >= 0.0)) throw ValidationError("beta must be nonnegative");
      return weight.value;
    case BetaWeight::Mode::variance_ratio: break;
  }
  const auto ly = log_totals(p);
  if (ly.size() < 2) throw ValidationError("variance-ratio beta needs at least two points");
  const double mean = std::accumulate(ly.begin(), ly.end(), 0.0) / static_cast<double>(ly.size());
  double var = 0.0;
  for (double v : ly) var += (v - mean) * (v - mean);
  var /= static_cast<double>(ly.size() - 1);
  const auto [lo, hi] = std::minmax_element(ly.begin(), ly.end());
  if (*lo == *hi || !(var > 0.0)) throw DegeneracyError("variance-ratio beta: log totals have zero variance");
  return metric_variance(CompositionSample(p.marks)) / var;
}

CoordinateTable mixed_table(const MarkedPattern& p, double beta, const TransformSpec& transform) {
  if (!(beta >= 0.0)) throw ValidationError("beta must be nonnegative");
  if (!transform.is_aitchison()) {
    throw ValidationError("mixed characteristics need lr, clr, ilr or an alpha transform");
  }
  const auto ly = log_totals(p);
  const auto table = CoordinateTable::from_marks(p.marks, transform);
  return table.with_column(ly, std::sqrt(beta / table.weight()));
}

CharacteristicCurve mixed_characteristic(const MarkedPattern& p, TestFamily family, double beta,
                                         const EstimatorConfig& cfg, const TransformSpec& transform) {
  check_family(family);
  log_totals(p);
  return mixed_characteristic(KernelEstimator(p, cfg), p, family, beta, transform);
}

CharacteristicCurve mixed_characteristic(const KernelEstimator& est, const MarkedPattern& p, TestFamily family,
                                         double beta, const TransformSpec& transform) {
  check_family(family);
  const auto table = mixed_table(p, beta, transform);
  const TermSpec term{family, Scope::compositional, 0, 0, table.weight()};
  return est.nabla_on(table, table, term, {}, mixed_label(family, transform));
}

CharacteristicCurve mixed_kappa(const KernelEstimator& est, const MarkedPattern& p, TestFamily family,
                                double beta, const TransformSpec& transform) {
  check_family(family);
  const auto table = mixed_table(p, beta, transform);
  const TermSpec term{family, Scope::compositional, 0, 0, table.weight()};
  const double norm = normalizer_on(term, table);
  double scale = 0.0;
  for (std::size_t i = 0; i < table.rows(); ++i) {
    for (double v : table.row(i)) scale += v * v;
  }
  require_nondegenerate(norm, table.weight() * scale / static_cast<double>(table.rows()), "mixed normalizer");
  auto out = est.nabla_on(table, table, term, {}, "kappa_" + mixed_label(family, transform));
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (!out.masked[k]) out.values[k] /= norm;
  }
  out.normalizer = norm;
  return out;
}

}  // namespace compmark

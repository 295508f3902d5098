#pragma once

#include <span>
#include <string>

#include "compmark/characteristics.hpp"
#include "compmark/coda.hpp"
#include "compmark/pattern.hpp"

namespace compmark {

/// A positive total y together with its composition.
class MixedMark {
 public:
  MixedMark(double total, Composition composition);
  /// total = sum of the raw parts, composition = closure(raw).
  static MixedMark from_raw(std::span<const double> raw);

  double total() const noexcept { return total_; }
  const Composition& composition() const noexcept { return composition_; }

 private:
  double total_;
  Composition composition_;
};

MixedMark t_perturb(const MixedMark& a, const MixedMark& b);
MixedMark t_power(double xi, const MixedMark& a);
/// <c, c'>_A + beta log(y) log(y')
double t_inner(const MixedMark& a, const MixedMark& b, double beta);
/// d_A(c, c')^2 + beta (log y - log y')^2
double t_dist_sq(const MixedMark& a, const MixedMark& b, double beta);

/// Weight of the log-total part in the mixed geometry.
struct BetaWeight {
  enum class Mode { unit, variance_ratio, user };
  Mode mode = Mode::variance_ratio;
  double value = 1.0;  ///< user mode

  static BetaWeight parse(const std::string& mode, double value = 1.0);
};

/// unit: 1; user: the given value; variance_ratio: mvar(marks) / var(log y),
/// both with divisor n - 1.
double resolve_beta(const BetaWeight& weight, const MarkedPattern& p);

/// Coordinates of the mixed marks: the composition under `transform` and the
/// column sqrt(beta / weight) log y, so the compositional test function of the
/// table is the T-space one.
CoordinateTable mixed_table(const MarkedPattern& p, double beta, const TransformSpec& transform = TransformSpec::clr());

/// Compositional characteristic of (y, c) for t1, t4, t5 or t6, e.g. the
/// variogram gamma_cc + beta gamma_logy.
CharacteristicCurve mixed_characteristic(const MarkedPattern& p, TestFamily family, double beta,
                                         const EstimatorConfig& cfg,
                                         const TransformSpec& transform = TransformSpec::clr());
/// Same, reusing a pair table built on p's points.
CharacteristicCurve mixed_characteristic(const KernelEstimator& est, const MarkedPattern& p, TestFamily family,
                                         double beta, const TransformSpec& transform = TransformSpec::clr());
/// Normalized version (divided by the moment normalizer of the mixed marks).
CharacteristicCurve mixed_kappa(const KernelEstimator& est, const MarkedPattern& p, TestFamily family,
                                double beta, const TransformSpec& transform = TransformSpec::clr());

}  // namespace compmark

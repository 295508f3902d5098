#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace compmark {

/// How zero parts are handled when a raw vector is closed.
enum class ZeroPolicy {
  strict,   ///< zero parts are rejected
  replace,  ///< multiplicative replacement, delta = 0.65 * smallest positive part
  keep,     ///< zeros kept; only the alpha-family transforms accept them
};

ZeroPolicy parse_zero_policy(const std::string& name);
std::string to_string(ZeroPolicy policy);

/// A D-part composition with parts summing to a fixed total (1, 100, ...).
///
/// Parts are nonnegative; log-ratio operations additionally require them to
/// be strictly positive and throw otherwise.
class Composition {
 public:
  /// Takes already-closed parts. Throws ValidationError when the parts do not
  /// sum to `total` within 1e-9 * total, when D < 2, or on a negative part.
  explicit Composition(std::vector<double> parts, double total = 1.0);

  std::size_t size() const noexcept { return parts_.size(); }
  double total() const noexcept { return total_; }
  std::span<const double> parts() const noexcept { return parts_; }
  double operator[](std::size_t j) const { return parts_[j]; }
  bool strictly_positive() const noexcept;

  bool operator==(const Composition&) const = default;

 private:
  std::vector<double> parts_;
  double total_;
};

/// Rescales `raw` so that its parts sum to `total`.
Composition closure(std::span<const double> raw, double total = 1.0,
                    ZeroPolicy policy = ZeroPolicy::strict);

/// closure(1, ..., 1), the neutral element of perturbation.
Composition neutral(std::size_t parts, double total = 1.0);

Composition perturb(const Composition& a, const Composition& b);
Composition power(double xi, const Composition& c);
/// a (-) b = a (+) ((-1) . b)
Composition difference(const Composition& a, const Composition& b);

double ait_inner(const Composition& a, const Composition& b);
double ait_norm(const Composition& c);
double ait_dist(const Composition& a, const Composition& b);

enum class TransformKind { identity, lr, alr, clr, ilr_pivot, ilr_basis, alpha_clr, alpha_ilr };

/// Selects the map from compositions to real coordinates.
class TransformSpec {
 public:
  static TransformSpec identity() { return TransformSpec(TransformKind::identity); }
  static TransformSpec lr() { return TransformSpec(TransformKind::lr); }
  static TransformSpec alr() { return TransformSpec(TransformKind::alr); }
  static TransformSpec clr() { return TransformSpec(TransformKind::clr); }
  static TransformSpec ilr() { return TransformSpec(TransformKind::ilr_pivot); }
  /// Rows of `basis` are clr images of an orthonormal basis: (D-1) x D,
  /// B * B^T = I and zero row sums, both within 1e-10.
  static TransformSpec ilr_basis(Eigen::MatrixXd basis);
  static TransformSpec alpha_clr(double alpha);
  static TransformSpec alpha_ilr(double alpha);

  /// Parses "clr", "ilr", "alpha_ilr:0.5", ... (see README for the list).
  static TransformSpec parse(const std::string& text);

  TransformKind kind() const noexcept { return kind_; }
  double alpha() const noexcept { return alpha_; }
  /// Custom basis for ilr_basis, nullptr otherwise.
  const Eigen::MatrixXd* basis() const noexcept { return basis_.get(); }

  /// Number of coordinates produced for a D-part composition.
  std::size_t output_dim(std::size_t parts) const;
  /// Weight turning the Euclidean inner product of the coordinates into the
  /// Aitchison inner product: 1/(2D) for lr, 1 otherwise.
  double aitchison_weight(std::size_t parts) const;
  /// True for the transforms whose coordinates reproduce Aitchison geometry.
  bool is_aitchison() const noexcept;
  bool accepts_zeros() const noexcept;
  std::string name() const;

 private:
  explicit TransformSpec(TransformKind kind) : kind_(kind) {}

  TransformKind kind_;
  double alpha_ = 0.0;
  std::shared_ptr<const Eigen::MatrixXd> basis_;
};

/// Transformed composition.
struct Coordinates {
  std::vector<double> values;
  TransformSpec transform = TransformSpec::clr();
  std::size_t source_dim = 0;
  double total_constant = 1.0;
};

/// (D-1) x D matrix of pivot contrasts, obtained by Gram-Schmidt on the
/// centred unit vectors. Rows are orthonormal and sum to zero.
Eigen::MatrixXd helmert_matrix(std::size_t parts);

/// Throws ValidationError unless `basis` is a valid (D-1) x D contrast matrix.
void validate_contrast_basis(const Eigen::MatrixXd& basis, double tol = 1e-10);

Coordinates transform(const Composition& c, const TransformSpec& spec);
/// Supported for identity, alr, clr, ilr_pivot and ilr_basis; throws
/// UnsupportedError otherwise.
Composition transform_inverse(const Coordinates& z);

/// alpha-clr (centered) or alpha-ilr; tolerates zero parts. Parts are taken
/// relative to the total, so the result does not depend on it.
Coordinates alpha_transform(const Composition& c, double alpha, bool centered);

/// Non-empty list of compositions with one dimension and one total.
class CompositionSample {
 public:
  explicit CompositionSample(std::vector<Composition> items);

  std::size_t size() const noexcept { return items_.size(); }
  std::size_t parts() const noexcept { return items_.front().size(); }
  double total() const noexcept { return items_.front().total(); }
  const std::vector<Composition>& items() const noexcept { return items_; }

 private:
  std::vector<Composition> items_;
};

/// Closed geometric mean.
Composition center(const CompositionSample& sample);
/// t_jl = sample variance (divisor n-1) of log(c_j / c_l); halved when normalized.
Eigen::MatrixXd variation_matrix(const CompositionSample& sample, bool normalized = false);
double metric_variance(const CompositionSample& sample);

}  // namespace compmark

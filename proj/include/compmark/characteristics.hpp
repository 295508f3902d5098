#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "compmark/coda.hpp"
#include "compmark/pattern.hpp"

namespace compmark {

/// Test functions on a pair of (transformed) marks m1 at the origin and m2 at
/// distance r:
///   t1  m1 * m2                       t4  0.5 (m1 - m2)^2
///   t2  m1                            t5  (m1 - mu)(m2 - mu)
///   t3  m2                            t6  (m1 - mu(r))(m2 - mu(r))
enum class TestFamily { t1, t2, t3, t4, t5, t6 };

TestFamily parse_test_family(const std::string& name);
std::string to_string(TestFamily family);

enum class Scope {
  componentwise,  ///< coordinate j at the first point, coordinate l at the second
  compositional,  ///< whole composition through the Aitchison inner product
};

/// Cross characteristics: which mark set feeds each point of the pair and an
/// optional type restriction (first point of type `first_type`, second of
/// type `second_type`).
struct CrossFilter {
  bool first_from_b = false;
  bool second_from_b = true;
  std::optional<int> first_type;
  std::optional<int> second_type;
};

struct TestFunctionSpec {
  TestFamily family = TestFamily::t1;
  Scope scope = Scope::compositional;
  std::size_t j = 0;  ///< 0-based coordinate index, componentwise scope
  std::size_t l = 0;
  TransformSpec transform = TransformSpec::clr();
  std::optional<CrossFilter> cross;

  static TestFunctionSpec compositional(TestFamily family, TransformSpec transform = TransformSpec::clr());
  static TestFunctionSpec componentwise(TestFamily family, std::size_t j, std::size_t l,
                                        TransformSpec transform = TransformSpec::clr());

  std::string label() const;
};

enum class KernelKind { epanechnikov, box, gaussian_truncated };
KernelKind parse_kernel(const std::string& name);
std::string to_string(KernelKind kind);

/// Smoothing kernel of bandwidth b; each integrates to 1 over its support.
/// The truncated Gaussian has sd b and support [-3b, 3b].
class Kernel {
 public:
  Kernel(KernelKind kind, double bandwidth);

  double operator()(double u) const noexcept;
  double support() const noexcept { return support_; }
  double peak() const noexcept { return (*this)(0.0); }
  KernelKind kind() const noexcept { return kind_; }
  double bandwidth() const noexcept { return bandwidth_; }

 private:
  KernelKind kind_;
  double bandwidth_;
  double support_;
  double scale_;
};

enum class EdgeCorrection { none, translation };
EdgeCorrection parse_edge_correction(const std::string& name);

struct EstimatorConfig {
  RGrid rgrid = RGrid({0.01, 0.02});
  double bandwidth = 0.01;
  KernelKind kernel = KernelKind::epanechnikov;
  /// An r-entry is masked when its kernel mass corresponds to fewer than
  /// this many ordered pairs (mass / kernel peak).
  std::size_t min_pairs = 5;
  /// Applies to the product-density and K estimators only; the ratio
  /// estimators never weight pairs.
  EdgeCorrection edge = EdgeCorrection::none;

  /// b = 0.15 / sqrt(intensity), grid of `grid_points` values from b to the
  /// smaller window side / 4. Either may be overridden.
  static EstimatorConfig defaults(const MarkedPattern& p, std::size_t grid_points = 128,
                                  std::optional<double> bandwidth = std::nullopt,
                                  std::optional<double> r_max = std::nullopt);
  void validate() const;
};

/// A summary function on an r-grid. Masked entries hold NaN.
struct CharacteristicCurve {
  std::vector<double> r;
  std::vector<double> values;
  std::vector<bool> masked;
  std::string label;
  double normalizer = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> warnings;

  std::size_t size() const noexcept { return values.size(); }
  std::size_t unmasked_count() const noexcept;
  bool all_masked() const noexcept { return unmasked_count() == 0; }
};

/// Coordinates of one mark per point, row-major. `weight` turns the row inner
/// product into the Aitchison one (1/(2D) for lr, otherwise 1).
class CoordinateTable {
 public:
  CoordinateTable(std::size_t rows, std::size_t cols, std::vector<double> data, std::size_t parts,
                  double weight = 1.0);

  static CoordinateTable from_marks(std::span<const Composition> marks, const TransformSpec& transform);
  /// One column; used for scalar marks such as log totals.
  static CoordinateTable from_scalars(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t parts() const noexcept { return parts_; }
  double weight() const noexcept { return weight_; }
  std::span<const double> row(std::size_t i) const noexcept { return {data_.data() + i * cols_, cols_}; }
  double at(std::size_t i, std::size_t c) const noexcept { return data_[i * cols_ + c]; }

  /// Copy with `column` scaled by `factor` appended.
  CoordinateTable with_column(std::span<const double> column, double factor) const;
  /// Copy keeping the listed rows in order.
  CoordinateTable select_rows(std::span<const std::size_t> rows) const;

  std::vector<double> column_means() const;
  /// Covariance with divisor n.
  Eigen::MatrixXd covariance() const;

 private:
  std::size_t rows_, cols_, parts_;
  double weight_;
  std::vector<double> data_;
};

/// A test function evaluated directly on coordinate rows.
struct TermSpec {
  TestFamily family = TestFamily::t1;
  Scope scope = Scope::compositional;
  std::size_t j = 0;
  std::size_t l = 0;
  double weight = 1.0;  ///< compositional scope: factor on the coordinate sum
};

/// `center_first` / `center_second` are the centring vectors of t5 (global
/// means) and t6 (conditional means), indexed like the coordinate rows.
double eval_term(const TermSpec& term, std::span<const double> z1, std::span<const double> z2,
                 std::span<const double> center_first = {}, std::span<const double> center_second = {});

double eval_test_function(const TestFunctionSpec& spec, const Coordinates& z1, const Coordinates& z2,
                          std::span<const double> center_first = {},
                          std::span<const double> center_second = {});

/// Kernel-weighted means of each coordinate at the second point of ordered
/// pairs at distance ~ r (Schlather centring).
struct ConditionalMoments {
  std::vector<double> r;
  std::size_t cols = 0;
  std::vector<double> means;  ///< r.size() x cols, NaN where masked
  std::vector<bool> masked;

  std::span<const double> at(std::size_t k) const noexcept { return {means.data() + k * cols, cols}; }
};

/// Restricts ordered pairs (i, h) to type(i) == first and type(h) == second.
struct PairFilter {
  const std::vector<int>* types = nullptr;
  std::optional<int> first;
  std::optional<int> second;

  bool active() const noexcept { return types != nullptr && (first || second); }
  bool accepts(std::size_t i, std::size_t h) const noexcept;
};

/// Kernel estimator bound to a fixed set of locations. Pair distances and
/// kernel weights are computed once, so the same instance can evaluate many
/// mark configurations (permutation replicates) over unchanged points.
/// Immutable after construction; safe to share between threads.
class KernelEstimator {
 public:
  KernelEstimator(const Window& window, std::span<const Point> points, EstimatorConfig config);
  KernelEstimator(const MarkedPattern& p, EstimatorConfig config);

  struct Sums {
    std::vector<double> numerator;        ///< sum of t * K over ordered pairs
    std::vector<double> denominator;      ///< sum of K
    std::vector<double> effective_pairs;  ///< sum of K / K(0)
  };

  const EstimatorConfig& config() const noexcept { return config_; }
  const Window& window() const noexcept { return window_; }
  std::size_t points() const noexcept { return n_; }
  std::size_t cached_pairs() const noexcept { return entries_.size(); }

  /// Raw ordered-pair kernel sums; `conditional` supplies t6 centring per r.
  Sums kernel_sums(const CoordinateTable& first, const CoordinateTable& second, const TermSpec& term,
                   std::span<const double> center_first, std::span<const double> center_second,
                   const ConditionalMoments* conditional, const PairFilter& filter) const;

  CharacteristicCurve rho2() const;
  ConditionalMoments conditional_means(const CoordinateTable& table) const;

  /// Ratio estimator on precomputed coordinates.
  CharacteristicCurve nabla_on(const CoordinateTable& first, const CoordinateTable& second,
                               const TermSpec& term, const PairFilter& filter, std::string label) const;

  CharacteristicCurve nabla(const MarkedPattern& p, const TestFunctionSpec& spec) const;
  CharacteristicCurve kappa(const MarkedPattern& p, const TestFunctionSpec& spec) const;

 private:
  struct Entry {
    std::uint32_t i, h;
    std::uint32_t k_first, k_count;
    std::size_t offset;
    double edge_weight;
  };

  CharacteristicCurve masked_ratio(const Sums& sums, std::string label) const;

  Window window_;
  std::size_t n_;
  EstimatorConfig config_;
  Kernel kernel_;
  std::vector<Entry> entries_;
  std::vector<double> weights_;
};

CharacteristicCurve estimate_rho2(const MarkedPattern& p, const EstimatorConfig& cfg);
CharacteristicCurve estimate_nabla(const MarkedPattern& p, const TestFunctionSpec& spec,
                                   const EstimatorConfig& cfg);
CharacteristicCurve estimate_kappa(const MarkedPattern& p, const TestFunctionSpec& spec,
                                   const EstimatorConfig& cfg);
/// Same estimator; `spec.cross` must be set.
CharacteristicCurve estimate_cross(const MarkedPattern& p, const TestFunctionSpec& spec,
                                   const EstimatorConfig& cfg);

/// Independent-mark limit of the test function, estimated from the n marks
/// (moment form): t1 mu_j mu_l, t2 mu_j, t3 mu_l, t4 zeta_jl, t5/t6 sigma_jl;
/// compositional scope sums the diagonal terms with the Aitchison weight.
double normalizer(const TestFunctionSpec& spec, const MarkedPattern& p);
/// (1 / n^2) sum_i sum_h t(z_i, z_h); defined for t1-t4.
double normalizer_double_sum(const TestFunctionSpec& spec, const MarkedPattern& p);
/// Moment-form normalizer on one coordinate table.
double normalizer_on(const TermSpec& term, const CoordinateTable& table);

/// Throws DegeneracyError when `value` vanishes relative to `scale`.
void require_nondegenerate(double value, double scale, const std::string& what);

ConditionalMoments conditional_moments_at_r(const MarkedPattern& p, const TestFunctionSpec& spec,
                                             const EstimatorConfig& cfg);
/// clr^{-1} of the kernel-weighted clr mean; nullopt where masked.
std::vector<std::optional<Composition>> conditional_center(const MarkedPattern& p, const EstimatorConfig& cfg);

/// Mark-weighted K: area / (n (n-1) normalizer) * sum t * 1(d <= r) * edge weight.
CharacteristicCurve estimate_mark_weighted_K(const MarkedPattern& p, const TestFunctionSpec& spec,
                                             const EstimatorConfig& cfg);
/// Unmarked Ripley K on the same grid and edge correction.
CharacteristicCurve ripley_k(const MarkedPattern& p, const RGrid& grid, EdgeCorrection edge);
/// L = sqrt(K / pi); negative K entries are masked with a warning.
CharacteristicCurve l_transform(const CharacteristicCurve& k);

}  // namespace compmark

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "compmark/coda.hpp"

namespace compmark {

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

/// Axis-aligned rectangular observation window.
class Window {
 public:
  Window(double x_min, double x_max, double y_min, double y_max);
  static Window unit_square() { return Window(0.0, 1.0, 0.0, 1.0); }

  double x_min() const noexcept { return x_min_; }
  double x_max() const noexcept { return x_max_; }
  double y_min() const noexcept { return y_min_; }
  double y_max() const noexcept { return y_max_; }
  double width() const noexcept { return x_max_ - x_min_; }
  double height() const noexcept { return y_max_ - y_min_; }
  double area() const noexcept { return width() * height(); }
  bool contains(const Point& p) const noexcept;

  bool operator==(const Window&) const = default;

 private:
  double x_min_, x_max_, y_min_, y_max_;
};

/// Points in a window with one composition per point, plus optional totals,
/// integer type labels and a second composition set (cross characteristics).
struct MarkedPattern {
  Window window = Window::unit_square();
  std::vector<Point> points;
  std::vector<Composition> marks;
  std::optional<std::vector<double>> totals;
  std::optional<std::vector<int>> types;
  std::optional<std::vector<Composition>> marks_b;

  std::size_t size() const noexcept { return points.size(); }
  /// Number of parts of the primary marks, 0 for an empty pattern.
  std::size_t parts() const noexcept { return marks.empty() ? 0 : marks.front().size(); }
};

struct ValidationReport {
  bool ok = true;
  std::optional<std::size_t> index;  ///< first offending point
  std::string message;

  explicit operator bool() const noexcept { return ok; }
};

ValidationReport validate_pattern(const MarkedPattern& p, ZeroPolicy policy = ZeroPolicy::strict);
/// Throws ValidationError carrying the report message when validation fails.
void require_valid(const MarkedPattern& p, ZeroPolicy policy = ZeroPolicy::strict);

/// n / area(W).
double intensity(const MarkedPattern& p);

/// Strictly increasing positive distances, at least two of them.
class RGrid {
 public:
  explicit RGrid(std::vector<double> values);
  /// `count` equally spaced values from r_first to r_last inclusive.
  static RGrid linear(double r_first, double r_last, std::size_t count);

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t k) const { return values_[k]; }
  const std::vector<double>& values() const noexcept { return values_; }
  double front() const { return values_.front(); }
  double back() const { return values_.back(); }

  bool operator==(const RGrid&) const = default;

 private:
  std::vector<double> values_;
};

struct PairDistance {
  std::size_t i = 0;
  std::size_t j = 0;
  double dist = 0.0;
};

double distance(const Point& a, const Point& b) noexcept;

/// All n(n-1) ordered pairs, i ascending then j ascending.
std::vector<PairDistance> pair_distances(const MarkedPattern& p);
/// Streams the same sequence without materialising it.
void for_each_pair(const MarkedPattern& p, const std::function<void(const PairDistance&)>& fn);

// --- synthetic patterns -------------------------------------------------

struct PointModel {
  enum class Kind { binomial, poisson };
  Kind kind = Kind::poisson;
  std::size_t count = 0;  ///< binomial
  double lambda = 0.0;    ///< poisson intensity

  static PointModel binomial(std::size_t n) { return {Kind::binomial, n, 0.0}; }
  static PointModel poisson(double lambda) { return {Kind::poisson, 0, lambda}; }
};

/// Marks are ilr^{-1} of Gaussian draws (pivot basis).
struct MarkModel {
  enum class Kind { iid_logistic_normal, geostatistical_ilr };
  Kind kind = Kind::iid_logistic_normal;
  std::size_t parts = 3;
  std::vector<double> mean;    ///< ilr mean, D-1 entries
  Eigen::MatrixXd covariance;  ///< iid: (D-1) x (D-1) ilr covariance
  /// geostatistical: exponential covariance sill * exp(-h / range) for the
  /// coordinates flagged in `spatial`; the other coordinates are iid with
  /// variance `sill`.
  double range = 0.1;
  std::vector<double> sill;
  std::vector<bool> spatial;
  double total_constant = 1.0;

  static MarkModel iid(std::vector<double> mean, Eigen::MatrixXd covariance);
  static MarkModel geostatistical(std::vector<double> mean, std::vector<double> sill, double range,
                                  std::vector<bool> spatial = {});
};

/// log(y) ~ N(log_mean, log_sd^2).
struct TotalsModel {
  double log_mean = 0.0;
  double log_sd = 1.0;
};

struct SimulationSpec {
  Window window = Window::unit_square();
  PointModel points;
  MarkModel marks;
  std::optional<TotalsModel> totals;
};

/// Seeded runs are bit-reproducible on a given platform.
MarkedPattern simulate_pattern(const SimulationSpec& spec, std::uint64_t seed);

}  // namespace compmark

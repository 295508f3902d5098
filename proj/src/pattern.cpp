#include "compmark/pattern.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "compmark/errors.hpp"

namespace compmark {

namespace {

constexpr double kDuplicateTol = 1e-12;

ValidationReport fail(std::size_t index, std::string message) {
  return {false, index, std::move(message)};
}

}  // namespace

Window::Window(double x_min, double x_max, double y_min, double y_max)
    : x_min_(x_min), x_max_(x_max), y_min_(y_min), y_max_(y_max) {
  if (!(x_max > x_min) || !(y_max > y_min) || !std::isfinite(x_min) || !std::isfinite(x_max) ||
      !std::isfinite(y_min) || !std::isfinite(y_max)) {
    throw ValidationError("window: need x_max > x_min and y_max > y_min");
  }
}

bool Window::contains(const Point& p) const noexcept {
  return p.x >= x_min_ && p.x <= x_max_ && p.y >= y_min_ && p.y <= y_max_;
}

ValidationReport validate_pattern(const MarkedPattern& p, ZeroPolicy policy) {
  const std::size_t n = p.points.size();
  if (p.marks.size() != n) {
    return fail(std::min(n, p.marks.size()), "marks: expected " + std::to_string(n) + " marks, got " +
                                                  std::to_string(p.marks.size()));
  }
  if (p.totals && p.totals->size() != n) {
    return fail(std::min(n, p.totals->size()), "totals: length differs from number of points");
  }
  if (p.types && p.types->size() != n) {
    return fail(std::min(n, p.types->size()), "types: length differs from number of points");
  }
  if (p.marks_b && p.marks_b->size() != n) {
    return fail(std::min(n, p.marks_b->size()), "second mark set: length differs from number of points");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& pt = p.points[i];
    if (!std::isfinite(pt.x) || !std::isfinite(pt.y) || !p.window.contains(pt)) {
      return fail(i, "point " + std::to_string(i) + " is out of window");
    }
    const auto& m = p.marks[i];
    if (m.size() != p.marks[0].size() || m.total() != p.marks[0].total()) {
      return fail(i, "mark " + std::to_string(i) + ": dimension mismatch");
    }
    if (policy == ZeroPolicy::strict && !m.strictly_positive()) {
      return fail(i, "mark " + std::to_string(i) + ": zero part under strict zero policy");
    }
    if (p.totals && !((*p.totals)[i] > 0.0 && std::isfinite((*p.totals)[i]))) {
      return fail(i, "total " + std::to_string(i) + " must be positive");
    }
    if (p.marks_b) {
      const auto& b = (*p.marks_b)[i];
      if (b.size() != (*p.marks_b)[0].size() || b.total() != (*p.marks_b)[0].total()) {
        return fail(i, "second mark " + std::to_string(i) + ": dimension mismatch");
      }
      if (policy == ZeroPolicy::strict && !b.strictly_positive()) {
        return fail(i, "second mark " + std::to_string(i) + ": zero part under strict zero policy");
      }
    }
  }
  // Simplicity: sort by x and scan the neighbourhood of each point.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& pa = p.points[a];
    const auto& pb = p.points[b];
    return pa.x != pb.x ? pa.x < pb.x : (pa.y != pb.y ? pa.y < pb.y : a < b);
  });
  for (std::size_t k = 0; k < n; ++k) {
    const auto& a = p.points[order[k]];
    for (std::size_t m = k + 1; m < n; ++m) {
      const auto& b = p.points[order[m]];
      if (b.x - a.x > kDuplicateTol) break;
      if (distance(a, b) <= kDuplicateTol) {
        const std::size_t idx = std::max(order[k], order[m]);
        return fail(idx, "pattern is not simple: point " + std::to_string(idx) + " duplicates point " +
                             std::to_string(std::min(order[k], order[m])));
      }
    }
  }
  return {};
}

void require_valid(const MarkedPattern& p, ZeroPolicy policy) {
  const auto report = validate_pattern(p, policy);
  if (!report) throw ValidationError(report.message);
}

double intensity(const MarkedPattern& p) {
  if (p.size() == 0) throw ValidationError("intensity: empty pattern");
  return static_cast<double>(p.size()) / p.window.area();
}

RGrid::RGrid(std::vector<double> values) : values_(std::move(values)) {
  if (values_.size() < 2) throw ValidationError("r-grid: need at least 2 values");
  if (!(values_.front() > 0.0)) throw ValidationError("r-grid: first value must be > 0");
  for (std::size_t k = 1; k < values_.size(); ++k) {
    if (!(values_[k] > values_[k - 1]) || !std::isfinite(values_[k])) {
      throw ValidationError("r-grid: values must be strictly increasing");
    }
  }
}

RGrid RGrid::linear(double r_first, double r_last, std::size_t count) {
  if (count < 2) throw ValidationError("r-grid: need at least 2 values");
  if (!(r_last > r_first)) throw ValidationError("r-grid: r_max must exceed the first grid value");
  std::vector<double> values(count);
  const double step = (r_last - r_first) / static_cast<double>(count - 1);
  for (std::size_t k = 0; k < count; ++k) values[k] = r_first + step * static_cast<double>(k);
  values.back() = r_last;
  return RGrid(std::move(values));
}

double distance(const Point& a, const Point& b) noexcept { return std::hypot(a.x - b.x, a.y - b.y); }

void for_each_pair(const MarkedPattern& p, const std::function<void(const PairDistance&)>& fn) {
  const std::size_t n = p.size();
  if (n < 2) throw ValidationError("pair_distances: need at least 2 points");
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      fn(PairDistance{i, j, distance(p.points[i], p.points[j])});
    }
  }
}

std::vector<PairDistance> pair_distances(const MarkedPattern& p) {
  std::vector<PairDistance> out;
  if (p.size() >= 2) out.reserve(p.size() * (p.size() - 1));
  for_each_pair(p, [&](const PairDistance& pd) { out.push_back(pd); });
  return out;
}

MarkModel MarkModel::iid(std::vector<double> mean, Eigen::MatrixXd covariance) {
  MarkModel m;
  m.kind = Kind::iid_logistic_normal;
  m.parts = mean.size() + 1;
  m.mean = std::move(mean);
  m.covariance = std::move(covariance);
  return m;
}

MarkModel MarkModel::geostatistical(std::vector<double> mean, std::vector<double> sill, double range,
                                    std::vector<bool> spatial) {
  MarkModel m;
  m.kind = Kind::geostatistical_ilr;
  m.parts = mean.size() + 1;
  m.mean = std::move(mean);
  m.sill = std::move(sill);
  m.range = range;
  m.spatial = spatial.empty() ? std::vector<bool>(m.mean.size(), true) : std::move(spatial);
  return m;
}

namespace {

std::vector<Point> draw_points(const SimulationSpec& spec, std::mt19937_64& rng) {
  const auto& w = spec.window;
  std::size_t n = 0;
  if (spec.points.kind == PointModel::Kind::binomial) {
    n = spec.points.count;
  } else {
    if (!(spec.points.lambda > 0.0) || !std::isfinite(spec.points.lambda)) {
      throw ValidationError("simulate: poisson intensity must be > 0");
    }
    std::poisson_distribution<long long> count(spec.points.lambda * w.area());
    n = static_cast<std::size_t>(count(rng));
  }
  std::uniform_real_distribution<double> ux(w.x_min(), w.x_max());
  std::uniform_real_distribution<double> uy(w.y_min(), w.y_max());
  std::vector<Point> pts(n);
  for (auto& p : pts) {
    p.x = ux(rng);
    p.y = uy(rng);
  }
  return pts;
}

// n x (D-1) matrix of ilr draws.
Eigen::MatrixXd draw_ilr(const MarkModel& model, const std::vector<Point>& pts, std::mt19937_64& rng) {
  const auto n = static_cast<Eigen::Index>(pts.size());
  const auto k = static_cast<Eigen::Index>(model.mean.size());
  if (model.parts < 2 || model.mean.size() + 1 != model.parts) {
    throw ValidationError("simulate: mark mean must have D-1 entries");
  }
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd z(n, k);
  if (model.kind == MarkModel::Kind::iid_logistic_normal) {
    if (model.covariance.rows() != k || model.covariance.cols() != k) {
      throw ValidationError("simulate: covariance must be (D-1) x (D-1)");
    }
    if (!model.covariance.isApprox(model.covariance.transpose(), 1e-12)) {
      throw ValidationError("simulate: covariance is not symmetric");
    }
    // symmetric square root, so singular (semidefinite) covariances work too
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(model.covariance);
    const double top = k > 0 ? std::max(0.0, eig.eigenvalues().maxCoeff()) : 0.0;
    if (k > 0 && eig.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, top)) {
      throw ValidationError("simulate: covariance is not positive semidefinite");
    }
    const Eigen::MatrixXd l = eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                              eig.eigenvectors().transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::VectorXd e(k);
      for (Eigen::Index c = 0; c < k; ++c) e(c) = gauss(rng);
      z.row(i) = (l * e).transpose();
    }
  } else {
    if (model.sill.size() != model.mean.size() || model.spatial.size() != model.mean.size()) {
      throw ValidationError("simulate: sill and spatial flags need D-1 entries");
    }
    if (!(model.range > 0.0)) throw ValidationError("simulate: range must be > 0");
    for (double s : model.sill) {
      if (!(s > 0.0)) throw ValidationError("simulate: sill must be > 0");
    }
    Eigen::MatrixXd chol;
    const bool any_spatial = std::find(model.spatial.begin(), model.spatial.end(), true) != model.spatial.end();
    if (any_spatial && n > 0) {
      Eigen::MatrixXd corr(n, n);
      for (Eigen::Index a = 0; a < n; ++a) {
        for (Eigen::Index b = 0; b < n; ++b) {
          corr(a, b) = std::exp(-distance(pts[static_cast<std::size_t>(a)], pts[static_cast<std::size_t>(b)]) /
                                model.range);
        }
        corr(a, a) += 1e-10;
      }
      Eigen::LLT<Eigen::MatrixXd> llt(corr);
      if (llt.info() != Eigen::Success) throw ValidationError("simulate: spatial covariance not positive definite");
      chol = llt.matrixL();
    }
    for (Eigen::Index c = 0; c < k; ++c) {
      Eigen::VectorXd e(n);
      for (Eigen::Index i = 0; i < n; ++i) e(i) = gauss(rng);
      const double sd = std::sqrt(model.sill[static_cast<std::size_t>(c)]);
      z.col(c) = model.spatial[static_cast<std::size_t>(c)] ? Eigen::VectorXd(sd * (chol * e)) : Eigen::VectorXd(sd * e);
    }
  }
  for (Eigen::Index c = 0; c < k; ++c) z.col(c).array() += model.mean[static_cast<std::size_t>(c)];
  return z;
}

}  // namespace

MarkedPattern simulate_pattern(const SimulationSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MarkedPattern p;
  p.window = spec.window;
  p.points = draw_points(spec, rng);
  const Eigen::MatrixXd z = draw_ilr(spec.marks, p.points, rng);
  const std::size_t d = spec.marks.parts;
  p.marks.reserve(p.points.size());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Coordinates c{std::vector<double>(d - 1), TransformSpec::ilr(), d, spec.marks.total_constant};
    for (std::size_t j = 0; j + 1 < d; ++j) c.values[j] = z(i, static_cast<Eigen::Index>(j));
    p.marks.push_back(transform_inverse(c));
  }
  if (spec.totals) {
    if (!(spec.totals->log_sd >= 0.0)) throw ValidationError("simulate: totals log_sd must be >= 0");
    std::normal_distribution<double> gauss(spec.totals->log_mean, spec.totals->log_sd);
    std::vector<double> totals(p.points.size());
    for (auto& y : totals) y = std::exp(gauss(rng));
    p.totals = std::move(totals);
  }
  return p;
}

}  // namespace compmark

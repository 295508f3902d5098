#include "compmark/coda.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>

#include "compmark/errors.hpp"

namespace compmark {

namespace {

constexpr double kClosureTol = 1e-9;

void require_same_dim(const Composition& a, const Composition& b, const char* op) {
  if (a.size() != b.size()) {
    throw ValidationError(std::string(op) + ": dimension mismatch (" + std::to_string(a.size()) +
                          " vs " + std::to_string(b.size()) + ")");
  }
}

std::vector<double> logs_of(const Composition& c, const char* op) {
  std::vector<double> out(c.size());
  for (std::size_t j = 0; j < c.size(); ++j) {
    if (!(c[j] > 0.0)) {
      throw ValidationError(std::string(op) + ": zero part at index " + std::to_string(j) +
                            " (log-ratio transforms need strictly positive parts)");
    }
    out[j] = std::log(c[j]);
  }
  return out;
}

std::vector<double> clr_values(const Composition& c) {
  auto lg = logs_of(c, "clr");
  const double mean = std::accumulate(lg.begin(), lg.end(), 0.0) / static_cast<double>(lg.size());
  for (auto& v : lg) v -= mean;
  return lg;
}

std::vector<double> times_transpose(std::span<const double> row, const Eigen::MatrixXd& m) {
  std::vector<double> out(static_cast<std::size_t>(m.rows()), 0.0);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    double acc = 0.0;
    for (Eigen::Index k = 0; k < m.cols(); ++k) acc += m(i, k) * row[static_cast<std::size_t>(k)];
    out[static_cast<std::size_t>(i)] = acc;
  }
  return out;
}

Composition clr_inverse(std::span<const double> clr, double total) {
  const double shift = *std::max_element(clr.begin(), clr.end());
  std::vector<double> raw(clr.size());
  for (std::size_t j = 0; j < clr.size(); ++j) raw[j] = std::exp(clr[j] - shift);
  return closure(raw, total);
}

double parse_alpha(const std::string& text, const std::string& full) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ValidationError("transform: cannot parse alpha in '" + full + "'");
  }
  return value;
}

}  // namespace

ZeroPolicy parse_zero_policy(const std::string& name) {
  if (name == "strict") return ZeroPolicy::strict;
  if (name == "replace") return ZeroPolicy::replace;
  if (name == "keep" || name == "alpha") return ZeroPolicy::keep;
  throw ValidationError("unknown zero policy '" + name + "' (expected strict, replace or keep)");
}

std::string to_string(ZeroPolicy policy) {
  switch (policy) {
    case ZeroPolicy::strict: return "strict";
    case ZeroPolicy::replace: return "replace";
    case ZeroPolicy::keep: return "keep";
  }
  return "?";
}

Composition::Composition(std::vector<double> parts, double total)
    : parts_(std::move(parts)), total_(total) {
  if (parts_.size() < 2) throw ValidationError("composition: need at least 2 parts");
  if (!(total_ > 0.0) || !std::isfinite(total_)) {
    throw ValidationError("composition: total must be a positive finite number");
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < parts_.size(); ++j) {
    if (!std::isfinite(parts_[j]) || parts_[j] < 0.0) {
      throw ValidationError("composition: part " + std::to_string(j) + " is negative or not finite");
    }
    sum += parts_[j];
  }
  if (std::abs(sum - total_) > kClosureTol * total_) {
    throw ValidationError("composition: parts sum to " + std::to_string(sum) + ", expected " +
                          std::to_string(total_));
  }
}

bool Composition::strictly_positive() const noexcept {
  return std::all_of(parts_.begin(), parts_.end(), [](double v) { return v > 0.0; });
}

Composition closure(std::span<const double> raw, double total, ZeroPolicy policy) {
  if (raw.size() < 2) throw ValidationError("closure: need at least 2 parts");
  double sum = 0.0;
  double min_positive = std::numeric_limits<double>::infinity();
  bool has_zero = false;
  for (std::size_t j = 0; j < raw.size(); ++j) {
    const double v = raw[j];
    if (!std::isfinite(v)) throw ValidationError("closure: part " + std::to_string(j) + " is not finite");
    if (v < 0.0) throw ValidationError("closure: negative part at index " + std::to_string(j));
    if (v == 0.0) {
      has_zero = true;
    } else {
      min_positive = std::min(min_positive, v);
    }
    sum += v;
  }
  if (!(sum > 0.0)) throw ValidationError("closure: all parts are zero");
  if (has_zero && policy == ZeroPolicy::strict) {
    throw ValidationError("closure: zero part under strict zero policy");
  }
  std::vector<double> parts(raw.begin(), raw.end());
  if (has_zero && policy == ZeroPolicy::replace) {
    const double delta = 0.65 * min_positive;
    sum = 0.0;
    for (auto& v : parts) {
      if (v == 0.0) v = delta;
      sum += v;
    }
  }
  for (auto& v : parts) v = total * (v / sum);
  // Fold the rounding residue into the largest part so the invariant holds exactly.
  const double residue = total - std::accumulate(parts.begin(), parts.end(), 0.0);
  *std::max_element(parts.begin(), parts.end()) += residue;
  return Composition(std::move(parts), total);
}

Composition neutral(std::size_t parts, double total) {
  std::vector<double> ones(parts, 1.0);
  return closure(ones, total);
}

Composition perturb(const Composition& a, const Composition& b) {
  require_same_dim(a, b, "perturb");
  std::vector<double> raw(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) raw[j] = a[j] * b[j];
  return closure(raw, a.total(), ZeroPolicy::keep);
}

Composition power(double xi, const Composition& c) {
  const auto lg = logs_of(c, "power");
  const double shift = *std::max_element(lg.begin(), lg.end());
  std::vector<double> raw(c.size());
  for (std::size_t j = 0; j < c.size(); ++j) raw[j] = std::exp(xi * (lg[j] - shift));
  return closure(raw, c.total());
}

Composition difference(const Composition& a, const Composition& b) {
  require_same_dim(a, b, "difference");
  return perturb(a, power(-1.0, b));
}

double ait_inner(const Composition& a, const Composition& b) {
  require_same_dim(a, b, "ait_inner");
  const std::size_t d = a.size();
  logs_of(a, "ait_inner");
  logs_of(b, "ait_inner");
  double acc = 0.0;
  for (std::size_t l = 0; l < d; ++l) {
    for (std::size_t j = 0; j < d; ++j) {
      acc += std::log(a[l] / a[j]) * std::log(b[l] / b[j]);
    }
  }
  return acc / (2.0 * static_cast<double>(d));
}

double ait_norm(const Composition& c) { return std::sqrt(std::max(0.0, ait_inner(c, c))); }

double ait_dist(const Composition& a, const Composition& b) { return ait_norm(difference(a, b)); }

TransformSpec TransformSpec::ilr_basis(Eigen::MatrixXd basis) {
  validate_contrast_basis(basis);
  TransformSpec spec(TransformKind::ilr_basis);
  spec.basis_ = std::make_shared<const Eigen::MatrixXd>(std::move(basis));
  return spec;
}

TransformSpec TransformSpec::alpha_clr(double alpha) {
  if (!(alpha > 0.0)) throw ValidationError("alpha transform: alpha must be > 0");
  TransformSpec spec(TransformKind::alpha_clr);
  spec.alpha_ = alpha;
  return spec;
}

TransformSpec TransformSpec::alpha_ilr(double alpha) {
  if (!(alpha > 0.0)) throw ValidationError("alpha transform: alpha must be > 0");
  TransformSpec spec(TransformKind::alpha_ilr);
  spec.alpha_ = alpha;
  return spec;
}

TransformSpec TransformSpec::parse(const std::string& text) {
  if (text == "identity") return identity();
  if (text == "lr") return lr();
  if (text == "alr") return alr();
  if (text == "clr") return clr();
  if (text == "ilr" || text == "ilr_pivot") return ilr();
  const auto colon = text.find(':');
  if (colon != std::string::npos) {
    const std::string head = text.substr(0, colon);
    const std::string tail = text.substr(colon + 1);
    if (head == "alpha_clr") return alpha_clr(parse_alpha(tail, text));
    if (head == "alpha_ilr") return alpha_ilr(parse_alpha(tail, text));
  }
  throw ValidationError("unknown transform '" + text + "'");
}

std::size_t TransformSpec::output_dim(std::size_t parts) const {
  switch (kind_) {
    case TransformKind::identity:
    case TransformKind::clr:
    case TransformKind::alpha_clr: return parts;
    case TransformKind::lr: return parts * parts;
    case TransformKind::alr:
    case TransformKind::ilr_pivot:
    case TransformKind::alpha_ilr: return parts - 1;
    case TransformKind::ilr_basis: return static_cast<std::size_t>(basis_->rows());
  }
  return 0;
}

double TransformSpec::aitchison_weight(std::size_t parts) const {
  return kind_ == TransformKind::lr ? 1.0 / (2.0 * static_cast<double>(parts)) : 1.0;
}

bool TransformSpec::is_aitchison() const noexcept {
  return kind_ == TransformKind::lr || kind_ == TransformKind::clr ||
         kind_ == TransformKind::ilr_pivot || kind_ == TransformKind::ilr_basis ||
         kind_ == TransformKind::alpha_clr || kind_ == TransformKind::alpha_ilr;
}

bool TransformSpec::accepts_zeros() const noexcept {
  return kind_ == TransformKind::identity || kind_ == TransformKind::alpha_clr ||
         kind_ == TransformKind::alpha_ilr;
}

std::string TransformSpec::name() const {
  switch (kind_) {
    case TransformKind::identity: return "identity";
    case TransformKind::lr: return "lr";
    case TransformKind::alr: return "alr";
    case TransformKind::clr: return "clr";
    case TransformKind::ilr_pivot: return "ilr";
    case TransformKind::ilr_basis: return "ilr_basis";
    case TransformKind::alpha_clr: return "alpha_clr:" + std::to_string(alpha_);
    case TransformKind::alpha_ilr: return "alpha_ilr:" + std::to_string(alpha_);
  }
  return "?";
}

Eigen::MatrixXd helmert_matrix(std::size_t parts) {
  if (parts < 2) throw ValidationError("helmert_matrix: need at least 2 parts");
  const auto d = static_cast<Eigen::Index>(parts);
  Eigen::MatrixXd h(d - 1, d);
  for (Eigen::Index k = 0; k < d - 1; ++k) {
    Eigen::VectorXd v = Eigen::VectorXd::Constant(d, -1.0 / static_cast<double>(d));
    v(k) += 1.0;
    for (Eigen::Index m = 0; m < k; ++m) v -= h.row(m).dot(v) * h.row(m).transpose();
    h.row(k) = v.normalized().transpose();
  }
  validate_contrast_basis(h);
  return h;
}

void validate_contrast_basis(const Eigen::MatrixXd& basis, double tol) {
  if (basis.cols() < 2 || basis.rows() != basis.cols() - 1) {
    throw ValidationError("ilr basis: expected a (D-1) x D matrix");
  }
  const Eigen::MatrixXd gram = basis * basis.transpose();
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(basis.rows(), basis.rows());
  if ((gram - eye).cwiseAbs().maxCoeff() > tol) {
    throw ValidationError("ilr basis: rows are not orthonormal");
  }
  if (basis.rowwise().sum().cwiseAbs().maxCoeff() > tol) {
    throw ValidationError("ilr basis: rows must sum to zero");
  }
}

Coordinates transform(const Composition& c, const TransformSpec& spec) {
  Coordinates out{{}, spec, c.size(), c.total()};
  const std::size_t d = c.size();
  switch (spec.kind()) {
    case TransformKind::identity:
      out.values.assign(c.parts().begin(), c.parts().end());
      break;
    case TransformKind::lr: {
      const auto lg = logs_of(c, "lr");
      out.values.resize(d * d);
      for (std::size_t j1 = 0; j1 < d; ++j1) {
        for (std::size_t j2 = 0; j2 < d; ++j2) out.values[j1 * d + j2] = lg[j1] - lg[j2];
      }
      break;
    }
    case TransformKind::alr: {
      const auto lg = logs_of(c, "alr");
      out.values.resize(d - 1);
      for (std::size_t j = 0; j + 1 < d; ++j) out.values[j] = lg[j] - lg[d - 1];
      break;
    }
    case TransformKind::clr:
      out.values = clr_values(c);
      break;
    case TransformKind::ilr_pivot:
      out.values = times_transpose(clr_values(c), helmert_matrix(d));
      break;
    case TransformKind::ilr_basis:
      if (static_cast<std::size_t>(spec.basis()->cols()) != d) {
        throw ValidationError("ilr basis: basis has " + std::to_string(spec.basis()->cols()) +
                              " columns but composition has " + std::to_string(d) + " parts");
      }
      out.values = times_transpose(clr_values(c), *spec.basis());
      break;
    case TransformKind::alpha_clr:
      return alpha_transform(c, spec.alpha(), true);
    case TransformKind::alpha_ilr:
      return alpha_transform(c, spec.alpha(), false);
  }
  return out;
}

Composition transform_inverse(const Coordinates& z) {
  const std::size_t d = z.source_dim;
  if (z.values.size() != z.transform.output_dim(d)) {
    throw ValidationError("transform_inverse: coordinate length does not match transform");
  }
  switch (z.transform.kind()) {
    case TransformKind::identity:
      return closure(z.values, z.total_constant, ZeroPolicy::keep);
    case TransformKind::alr: {
      std::vector<double> clr(d, 0.0);
      for (std::size_t j = 0; j + 1 < d; ++j) clr[j] = z.values[j];
      return clr_inverse(clr, z.total_constant);
    }
    case TransformKind::clr:
      return clr_inverse(z.values, z.total_constant);
    case TransformKind::ilr_pivot:
    case TransformKind::ilr_basis: {
      const Eigen::MatrixXd h =
          z.transform.kind() == TransformKind::ilr_pivot ? helmert_matrix(d) : *z.transform.basis();
      std::vector<double> clr(d, 0.0);
      for (std::size_t k = 0; k < d; ++k) {
        for (std::size_t i = 0; i + 1 < d; ++i) {
          clr[k] += z.values[i] * h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
        }
      }
      return clr_inverse(clr, z.total_constant);
    }
    case TransformKind::lr:
    case TransformKind::alpha_clr:
    case TransformKind::alpha_ilr:
      break;
  }
  throw UnsupportedError("transform_inverse: no inverse provided for transform " + z.transform.name());
}

Coordinates alpha_transform(const Composition& c, double alpha, bool centered) {
  if (!(alpha > 0.0)) throw ValidationError("alpha transform: alpha must be > 0");
  const std::size_t d = c.size();
  // (u_j - mean u) / alpha with u_j = (c_j / w)^alpha, written via expm1 to
  // keep precision for small alpha.
  std::vector<double> shifted(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double part = c[j] / c.total();
    shifted[j] = part > 0.0 ? std::expm1(alpha * std::log(part)) : -1.0;
  }
  const double mean = std::accumulate(shifted.begin(), shifted.end(), 0.0) / static_cast<double>(d);
  std::vector<double> aclr(d);
  for (std::size_t j = 0; j < d; ++j) aclr[j] = (shifted[j] - mean) / alpha;

  Coordinates out{{}, centered ? TransformSpec::alpha_clr(alpha) : TransformSpec::alpha_ilr(alpha), d,
                  c.total()};
  out.values = centered ? std::move(aclr) : times_transpose(aclr, helmert_matrix(d));
  return out;
}

CompositionSample::CompositionSample(std::vector<Composition> items) : items_(std::move(items)) {
  if (items_.empty()) throw ValidationError("composition sample: empty");
  for (std::size_t i = 1; i < items_.size(); ++i) {
    if (items_[i].size() != items_[0].size() || items_[i].total() != items_[0].total()) {
      throw ValidationError("composition sample: item " + std::to_string(i) +
                            " differs in dimension or total");
    }
  }
}

Composition center(const CompositionSample& sample) {
  const std::size_t d = sample.parts();
  std::vector<double> mean(d, 0.0);
  for (const auto& c : sample.items()) {
    const auto z = clr_values(c);
    for (std::size_t j = 0; j < d; ++j) mean[j] += z[j];
  }
  for (auto& v : mean) v /= static_cast<double>(sample.size());
  return clr_inverse(mean, sample.total());
}

Eigen::MatrixXd variation_matrix(const CompositionSample& sample, bool normalized) {
  const std::size_t n = sample.size();
  if (n < 2) throw ValidationError("variation_matrix: need at least 2 compositions");
  const auto d = static_cast<Eigen::Index>(sample.parts());
  Eigen::MatrixXd logs(static_cast<Eigen::Index>(n), d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto lg = logs_of(sample.items()[i], "variation_matrix");
    for (Eigen::Index j = 0; j < d; ++j) logs(static_cast<Eigen::Index>(i), j) = lg[static_cast<std::size_t>(j)];
  }
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index l = j + 1; l < d; ++l) {
      // shifted by the first observation, so constant ratios give exactly 0
      Eigen::VectorXd ratio = logs.col(j) - logs.col(l);
      ratio.array() -= ratio(0);
      const double mean = ratio.mean();
      const double var = (ratio.array() - mean).square().sum() / static_cast<double>(n - 1);
      t(j, l) = var;
      t(l, j) = var;
    }
  }
  return normalized ? Eigen::MatrixXd(0.5 * t) : t;
}

double metric_variance(const CompositionSample& sample) {
  const Eigen::MatrixXd t = variation_matrix(sample, false);
  return t.sum() / (2.0 * static_cast<double>(sample.parts()));
}

}  // namespace compmark

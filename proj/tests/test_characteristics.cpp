#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <functional>
#include <numbers>

#include "compmark/characteristics.hpp"
#include "compmark/errors.hpp"
#include "support.hpp"

using namespace compmark;
using testing::max_abs_diff;

namespace {

EstimatorConfig two_point_config(KernelKind kernel = KernelKind::box) {
  EstimatorConfig cfg;
  cfg.rgrid = RGrid({0.5, 0.6});
  cfg.bandwidth = 0.05;
  cfg.kernel = kernel;
  cfg.min_pairs = 1;
  return cfg;
}

EstimatorConfig grid_config(double b = 0.03, std::size_t count = 40) {
  EstimatorConfig cfg;
  cfg.rgrid = RGrid::linear(0.03, 0.25, count);
  cfg.bandwidth = b;
  return cfg;
}

double epanechnikov(double u, double b) { return std::abs(u) <= b ? 0.75 * (1 - (u / b) * (u / b)) / b : 0.0; }

// Direct ordered-pair double loop, sharing nothing with the pair table.
std::vector<double> brute_ratio(const MarkedPattern& p, const std::vector<double>& r, double b,
                                const std::function<double(std::size_t, std::size_t, std::size_t)>& t) {
  std::vector<double> out;
  for (std::size_t k = 0; k < r.size(); ++k) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      for (std::size_t h = 0; h < p.size(); ++h) {
        if (i == h) continue;
        const double w = epanechnikov(distance(p.points[i], p.points[h]) - r[k], b);
        num += t(i, h, k) * w;
        den += w;
      }
    }
    out.push_back(den > 0 ? num / den : std::nan(""));
  }
  return out;
}

std::vector<std::vector<double>> coords(const MarkedPattern& p, const TransformSpec& t) {
  std::vector<std::vector<double>> z;
  for (const auto& m : p.marks) z.push_back(transform(m, t).values);
  return z;
}

std::vector<double> sum_of(const std::vector<CharacteristicCurve>& curves, double scale = 1.0) {
  std::vector<double> s(curves.front().size(), 0.0);
  for (const auto& c : curves) {
    for (std::size_t k = 0; k < s.size(); ++k) s[k] += scale * c.values[k];
  }
  return s;
}

}  // namespace

TEST_CASE("kernels integrate to one") {
  for (auto kind : {KernelKind::epanechnikov, KernelKind::box, KernelKind::gaussian_truncated}) {
    const Kernel k(kind, 0.07);
    const int steps = 200000;
    const double h = 2 * k.support() / steps;
    double s = 0.0;
    for (int i = 0; i < steps; ++i) s += k(-k.support() + (i + 0.5) * h) * h;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(k(k.support() * 1.0001) == 0.0);
  }
  CHECK(Kernel(KernelKind::epanechnikov, 0.1).peak() == doctest::Approx(7.5));
  CHECK_THROWS_AS(Kernel(KernelKind::box, 0.0), ValidationError);
  CHECK(parse_kernel("gaussian_truncated") == KernelKind::gaussian_truncated);
}

TEST_CASE("test functions on hand-computed pairs") {
  const Composition a({0.2, 0.8}), b({0.8, 0.2});
  const auto za = transform(a, TransformSpec::ilr()), zb = transform(b, TransformSpec::ilr());
  const double z1 = std::sqrt(0.5) * std::log(0.25), z2 = -z1;
  const double gamma = 0.5 * (z1 - z2) * (z1 - z2);
  CHECK(gamma == doctest::Approx(1.92181).epsilon(1e-5));
  const auto t4 = TestFunctionSpec::componentwise(TestFamily::t4, 0, 0, TransformSpec::ilr());
  CHECK(eval_test_function(t4, za, zb) == doctest::Approx(gamma).epsilon(1e-13));
  const auto t4c = TestFunctionSpec::compositional(TestFamily::t4, TransformSpec::ilr());
  CHECK(eval_test_function(t4c, za, zb) == doctest::Approx(gamma).epsilon(1e-13));
  const auto t4lr = TestFunctionSpec::compositional(TestFamily::t4, TransformSpec::lr());
  CHECK(eval_test_function(t4lr, transform(a, TransformSpec::lr()), transform(b, TransformSpec::lr())) ==
        doctest::Approx(0.5 * ait_dist(a, b) * ait_dist(a, b)).epsilon(1e-13));

  const Composition c({0.1, 0.3, 0.6});
  const auto t1c = TestFunctionSpec::compositional(TestFamily::t1);
  const auto zc = transform(c, TransformSpec::clr());
  CHECK(eval_test_function(t1c, zc, zc) == doctest::Approx(ait_norm(c) * ait_norm(c)).epsilon(1e-13));

  const auto t5 = TestFunctionSpec::componentwise(TestFamily::t5, 0, 1);
  CHECK_THROWS_AS(eval_test_function(t5, zc, zc), ValidationError);
  const std::vector<double> mu{0.1, 0.2, -0.3};
  CHECK(eval_test_function(t5, zc, zc, mu, mu) == doctest::Approx((zc.values[0] - 0.1) * (zc.values[1] - 0.2)));
  CHECK_THROWS_AS(eval_test_function(TestFunctionSpec::componentwise(TestFamily::t1, 0, 3), zc, zc), ValidationError);
  CHECK_THROWS_AS(eval_test_function(TestFunctionSpec::compositional(TestFamily::t2), zc, zc), ValidationError);
  CHECK_THROWS_AS(eval_test_function(TestFunctionSpec::compositional(TestFamily::t1, TransformSpec::alr()),
                                     transform(c, TransformSpec::alr()), transform(c, TransformSpec::alr())),
                  ValidationError);
}

TEST_CASE("two-point fixtures") {
  const auto p = testing::two_point(0.6, {0.2, 0.8}, {0.8, 0.2});
  const auto rho = estimate_rho2(p, two_point_config());
  CHECK(rho.masked[0]);
  CHECK(std::isnan(rho.values[0]));
  CHECK(rho.values[1] == doctest::Approx(2 * 10.0 / (2 * std::numbers::pi * 0.6)).epsilon(1e-12));

  const double z = std::sqrt(0.5) * std::log(0.25);
  const auto t1 = TestFunctionSpec::componentwise(TestFamily::t1, 0, 0, TransformSpec::ilr());
  const auto nabla = estimate_nabla(p, t1, two_point_config(KernelKind::epanechnikov));
  CHECK(nabla.masked[0]);
  CHECK(nabla.values[1] == doctest::Approx(-z * z).epsilon(1e-12));
  CHECK(nabla.values[1] == doctest::Approx(-0.96091).epsilon(1e-5));

  const auto g = estimate_nabla(p, TestFunctionSpec::compositional(TestFamily::t4), two_point_config());
  CHECK(g.values[1] == doctest::Approx(2 * z * z).epsilon(1e-12));

  // symmetric pair: conditional mean is the average of the two coordinates
  const auto cm = conditional_moments_at_r(p, t1, two_point_config());
  CHECK(std::abs(cm.at(1)[0]) < 1e-15);
  CHECK(cm.masked[0]);

  const auto q = testing::two_point(0.6, {0.3, 0.7}, {0.6, 0.4});
  const double q1 = std::sqrt(0.5) * std::log(0.3 / 0.7), q2 = std::sqrt(0.5) * std::log(0.6 / 0.4);
  const auto kap = estimate_kappa(q, t1, two_point_config());
  CHECK(kap.values[1] == doctest::Approx(q1 * q2 / std::pow(0.5 * (q1 + q2), 2)).epsilon(1e-12));
  CHECK(conditional_moments_at_r(q, t1, two_point_config()).at(1)[0] == doctest::Approx(0.5 * (q1 + q2)).epsilon(1e-14));

  // default masking needs five effective pairs
  auto strict = two_point_config();
  strict.min_pairs = 5;
  const auto masked = estimate_nabla(p, t1, strict);
  CHECK(masked.all_masked());
  CHECK_FALSE(masked.warnings.empty());
  strict.min_pairs = 2;
  CHECK_FALSE(estimate_nabla(p, t1, strict).masked[1]);
  strict.min_pairs = 3;
  CHECK(estimate_nabla(p, t1, strict).masked[1]);

  MarkedPattern one;
  one.points = {{0.5, 0.5}};
  one.marks = {neutral(2)};
  CHECK_THROWS_AS(estimate_rho2(one, two_point_config()), ValidationError);
}

TEST_CASE("constant marks") {
  std::mt19937_64 rng(2);
  auto p = testing::random_pattern(rng, 150, 3);
  const auto c = closure(std::vector<double>{1, 2, 5});
  for (auto& m : p.marks) m = c;
  const auto cfg = grid_config();
  const auto g = estimate_nabla(p, TestFunctionSpec::compositional(TestFamily::t4), cfg);
  const auto t1 = estimate_nabla(p, TestFunctionSpec::componentwise(TestFamily::t1, 0, 1), cfg);
  const auto k = estimate_kappa(p, TestFunctionSpec::compositional(TestFamily::t1), cfg);
  const auto z = transform(c, TransformSpec::clr()).values;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.masked[i]) continue;
    CHECK(std::abs(g.values[i]) < 1e-14);
    CHECK(t1.values[i] == doctest::Approx(z[0] * z[1]).epsilon(1e-12));
    CHECK(k.values[i] == doctest::Approx(1.0).epsilon(1e-12));
  }
  for (auto fam : {TestFamily::t4, TestFamily::t5, TestFamily::t6}) {
    CHECK_THROWS_AS(estimate_kappa(p, TestFunctionSpec::compositional(fam), cfg), DegeneracyError);
  }
  const auto cm = conditional_moments_at_r(p, TestFunctionSpec::compositional(TestFamily::t6), cfg);
  const auto cen = conditional_center(p, cfg);
  for (std::size_t i = 0; i < cm.r.size(); ++i) {
    if (cm.masked[i]) continue;
    for (std::size_t j = 0; j < 3; ++j) CHECK(cm.at(i)[j] == doctest::Approx(z[j]).epsilon(1e-12));
    REQUIRE(cen[i]);
    for (std::size_t j = 0; j < 3; ++j) CHECK((*cen[i])[j] == doctest::Approx(c[j]).epsilon(1e-12));
  }
}

TEST_CASE("pair table agrees with a direct double loop") {
  std::mt19937_64 rng(3);
  const auto p = testing::random_pattern(rng, 120, 4);
  const auto cfg = grid_config(0.04, 25);
  const auto z = coords(p, TransformSpec::ilr());

  const auto spec = TestFunctionSpec::componentwise(TestFamily::t1, 0, 2, TransformSpec::ilr());
  const auto got = estimate_nabla(p, spec, cfg);
  const auto want = brute_ratio(p, cfg.rgrid.values(), 0.04, [&](auto i, auto h, auto) { return z[i][0] * z[h][2]; });
  CHECK(max_abs_diff(got.values, want, got.masked) < 1e-12);

  // Schlather: centre by the kernel-weighted mean of the second point
  const auto spec6 = TestFunctionSpec::componentwise(TestFamily::t6, 1, 1, TransformSpec::ilr());
  const auto mean_r = brute_ratio(p, cfg.rgrid.values(), 0.04, [&](auto, auto h, auto) { return z[h][1]; });
  const auto got6 = estimate_nabla(p, spec6, cfg);
  const auto want6 = brute_ratio(p, cfg.rgrid.values(), 0.04, [&](auto i, auto h, auto k) {
    return (z[i][1] - mean_r[k]) * (z[h][1] - mean_r[k]);
  });
  CHECK(max_abs_diff(got6.values, want6, got6.masked) < 1e-12);

  const auto rho = estimate_rho2(p, cfg);
  for (std::size_t k = 0; k < cfg.rgrid.size(); ++k) {
    double s = 0.0;
    for (const auto& pd : pair_distances(p)) s += epanechnikov(pd.dist - cfg.rgrid[k], 0.04);
    CHECK(rho.values[k] == doctest::Approx(s / (2 * std::numbers::pi * cfg.rgrid[k])).epsilon(1e-12));
  }
}

TEST_CASE("numerator and denominator evaluated separately") {
  std::mt19937_64 rng(4);
  auto p = testing::random_pattern(rng, 100, 3);
  const auto cfg = grid_config();
  const KernelEstimator est(p, cfg);
  const auto table = CoordinateTable::from_marks(p.marks, TransformSpec::clr());
  const TermSpec term{TestFamily::t4, Scope::compositional, 0, 0, 1.0};
  const auto sums = est.kernel_sums(table, table, term, {}, {}, nullptr, {});
  const auto fused = est.nabla(p, TestFunctionSpec::compositional(TestFamily::t4));
  const auto rho = est.rho2();
  for (std::size_t k = 0; k < fused.size(); ++k) {
    if (fused.masked[k]) continue;
    CHECK(fused.values[k] == sums.numerator[k] / sums.denominator[k]);
    // product-density normalisation (area, 2 pi r) cancels in the ratio
    const double num18 = sums.numerator[k] / (2 * std::numbers::pi * cfg.rgrid[k] * p.window.area());
    CHECK(num18 / rho.values[k] == doctest::Approx(fused.values[k]).epsilon(1e-12));
  }

  // same points in a larger window: area cancels
  auto wide = p;
  wide.window = Window(0, 3, 0, 2);
  const auto w = estimate_nabla(wide, TestFunctionSpec::compositional(TestFamily::t4), cfg);
  CHECK(w.values == fused.values);

  // permuting the marks leaves rho2 untouched and moves only the numerator
  auto perm = p;
  std::shuffle(perm.marks.begin(), perm.marks.end(), rng);
  CHECK(estimate_rho2(perm, cfg).values == rho.values);
  const auto ptable = CoordinateTable::from_marks(perm.marks, TransformSpec::clr());
  const auto psums = est.kernel_sums(ptable, ptable, term, {}, {}, nullptr, {});
  CHECK(psums.denominator == sums.denominator);
  CHECK(psums.numerator != sums.numerator);
}

TEST_CASE("decomposition of compositional characteristics") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 5; ++rep) {
    const auto p = testing::random_pattern(rng, 200, 4);
    const auto cfg = grid_config(0.03, 30);
    const KernelEstimator est(p, cfg);
    for (auto fam : {TestFamily::t1, TestFamily::t4, TestFamily::t5, TestFamily::t6}) {
      const auto cc = est.nabla(p, TestFunctionSpec::compositional(fam));
      std::vector<CharacteristicCurve> clr, ilr, lr;
      for (std::size_t j = 0; j < 4; ++j) clr.push_back(est.nabla(p, TestFunctionSpec::componentwise(fam, j, j)));
      for (std::size_t j = 0; j < 3; ++j) {
        ilr.push_back(est.nabla(p, TestFunctionSpec::componentwise(fam, j, j, TransformSpec::ilr())));
      }
      for (std::size_t j = 0; j < 16; ++j) {
        lr.push_back(est.nabla(p, TestFunctionSpec::componentwise(fam, j, j, TransformSpec::lr())));
      }
      CHECK(max_abs_diff(cc.values, sum_of(clr), cc.masked) < 1e-10);
      CHECK(max_abs_diff(cc.values, sum_of(ilr), cc.masked) < 1e-10);
      CHECK(max_abs_diff(cc.values, sum_of(lr, 1.0 / 8.0), cc.masked) < 1e-10);
      const auto cc_ilr = est.nabla(p, TestFunctionSpec::compositional(fam, TransformSpec::ilr()));
      const auto cc_lr = est.nabla(p, TestFunctionSpec::compositional(fam, TransformSpec::lr()));
      CHECK(max_abs_diff(cc.values, cc_ilr.values, cc.masked) < 1e-10);
      CHECK(max_abs_diff(cc.values, cc_lr.values, cc.masked) < 1e-10);
    }
  }
}

TEST_CASE("compositional curves do not depend on the ilr basis") {
  std::mt19937_64 rng(6);
  const auto p = testing::random_pattern(rng, 150, 5);
  Eigen::MatrixXd q(4, 4);
  std::normal_distribution<double> n;
  for (int i = 0; i < 16; ++i) q(i / 4, i % 4) = n(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(q);
  const Eigen::MatrixXd rot = qr.householderQ();
  const auto custom = TransformSpec::ilr_basis(rot * helmert_matrix(5));
  const auto cfg = grid_config();
  for (auto fam : {TestFamily::t1, TestFamily::t4}) {
    const auto a = estimate_nabla(p, TestFunctionSpec::compositional(fam, TransformSpec::ilr()), cfg);
    const auto b = estimate_nabla(p, TestFunctionSpec::compositional(fam, custom), cfg);
    CHECK(max_abs_diff(a.values, b.values, a.masked) < 1e-10);
  }
}

TEST_CASE("normalizers") {
  std::mt19937_64 rng(7);
  auto p = testing::random_pattern(rng, 80, 4);
  for (std::size_t j = 0; j < 3; ++j) {
    for (std::size_t l = 0; l < 3; ++l) {
      for (auto fam : {TestFamily::t1, TestFamily::t2, TestFamily::t3, TestFamily::t4}) {
        const auto spec = TestFunctionSpec::componentwise(fam, j, l, TransformSpec::ilr());
        CHECK(normalizer(spec, p) == doctest::Approx(normalizer_double_sum(spec, p)).epsilon(1e-12));
      }
    }
  }
  for (auto fam : {TestFamily::t1, TestFamily::t4}) {
    const auto spec = TestFunctionSpec::compositional(fam);
    CHECK(normalizer(spec, p) == doctest::Approx(normalizer_double_sum(spec, p)).epsilon(1e-12));
  }
  // zeta_jj collapses to sigma_jj
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(normalizer(TestFunctionSpec::componentwise(TestFamily::t4, j, j), p) ==
          doctest::Approx(normalizer(TestFunctionSpec::componentwise(TestFamily::t5, j, j), p)).epsilon(1e-12));
  }
  // weighted lr sum equals the clr sum
  double lr = 0.0, clr = 0.0;
  for (std::size_t j = 0; j < 16; ++j) lr += normalizer(TestFunctionSpec::componentwise(TestFamily::t4, j, j, TransformSpec::lr()), p);
  for (std::size_t j = 0; j < 4; ++j) clr += normalizer(TestFunctionSpec::componentwise(TestFamily::t4, j, j), p);
  CHECK(lr / 8.0 == doctest::Approx(clr).epsilon(1e-10));
  CHECK(normalizer(TestFunctionSpec::compositional(TestFamily::t4), p) == doctest::Approx(clr).epsilon(1e-12));
  CHECK(normalizer(TestFunctionSpec::compositional(TestFamily::t5, TransformSpec::lr()), p) ==
        doctest::Approx(clr).epsilon(1e-10));
  // the compositional variance is the metric variance with divisor n
  CHECK(clr == doctest::Approx(metric_variance(CompositionSample(p.marks)) * 79.0 / 80.0).epsilon(1e-10));
  CHECK_THROWS_AS(normalizer_double_sum(TestFunctionSpec::compositional(TestFamily::t5), p), ValidationError);
}

TEST_CASE("iid marks: kappa fluctuates around one") {
  SimulationSpec sim;
  sim.points = PointModel::poisson(200);
  sim.marks = MarkModel::iid({1.0, 0.5}, 0.25 * Eigen::MatrixXd::Identity(2, 2));
  const auto spec = TestFunctionSpec::compositional(TestFamily::t1);
  std::vector<double> mean;
  const int reps = 100;
  EstimatorConfig cfg;
  cfg.rgrid = RGrid::linear(0.05, 0.2, 16);
  cfg.bandwidth = 0.02;
  for (int s = 0; s < reps; ++s) {
    const auto p = simulate_pattern(sim, 1000 + s);
    const auto k = estimate_kappa(p, spec, cfg);
    if (mean.empty()) mean.assign(k.size(), 0.0);
    for (std::size_t i = 0; i < k.size(); ++i) mean[i] += k.values[i] / reps;
  }
  for (double v : mean) CHECK(std::abs(v - 1.0) < 0.05);
}

TEST_CASE("results are identical for any worker count") {
  std::mt19937_64 rng(8);
  const auto p = testing::random_pattern(rng, 500, 3);
  auto cfg = grid_config(0.03, 64);
  cfg.rgrid = RGrid::linear(0.03, 0.45, 64);
  const KernelEstimator est(p, cfg);
  REQUIRE(est.cached_pairs() > 3 * 4096);
  const auto spec = TestFunctionSpec::compositional(TestFamily::t6);
  setenv("COMPMARK_THREADS", "1", 1);
  const auto one = est.nabla(p, spec);
  setenv("COMPMARK_THREADS", "3", 1);
  const auto three = est.nabla(p, spec);
  setenv("COMPMARK_THREADS", "8", 1);
  const auto eight = est.nabla(p, spec);
  unsetenv("COMPMARK_THREADS");
  CHECK(one.values == three.values);
  CHECK(one.values == eight.values);
}

TEST_CASE("mark-weighted K and L") {
  std::mt19937_64 rng(9);
  auto p = testing::random_pattern(rng, 120, 3);
  const auto cfg = grid_config();
  const auto c = closure(std::vector<double>{1, 2, 3});
  auto constant = p;
  for (auto& m : constant.marks) m = c;
  const auto ident = TestFunctionSpec::componentwise(TestFamily::t1, 1, 1, TransformSpec::identity());
  for (auto edge : {EdgeCorrection::none, EdgeCorrection::translation}) {
    auto e = cfg;
    e.edge = edge;
    const auto km = estimate_mark_weighted_K(constant, ident, e);
    const auto k = ripley_k(constant, e.rgrid, edge);
    for (std::size_t i = 0; i < k.size(); ++i) CHECK(km.values[i] == doctest::Approx(k.values[i]).epsilon(1e-12));
  }
  const auto km = estimate_mark_weighted_K(p, TestFunctionSpec::compositional(TestFamily::t4), cfg);
  for (std::size_t i = 1; i < km.size(); ++i) CHECK(km.values[i] >= km.values[i - 1]);
  const auto l = l_transform(km);
  CHECK(l.label.front() == 'L');
  for (std::size_t i = 0; i < l.size(); ++i) CHECK(l.values[i] == doctest::Approx(std::sqrt(km.values[i] / std::numbers::pi)));

  CharacteristicCurve neg = km;
  neg.values[0] = -1.0;
  const auto ln = l_transform(neg);
  CHECK(ln.masked[0]);
  CHECK_FALSE(ln.warnings.empty());
  CHECK_THROWS_AS(estimate_mark_weighted_K(constant, TestFunctionSpec::compositional(TestFamily::t4), cfg),
                  DegeneracyError);
}

TEST_CASE("translation-corrected L is unbiased for Poisson points") {
  SimulationSpec sim;
  sim.points = PointModel::poisson(100);
  sim.marks = MarkModel::iid({1.0, 0.5}, 0.25 * Eigen::MatrixXd::Identity(2, 2));
  EstimatorConfig cfg;
  cfg.rgrid = RGrid::linear(0.02, 0.25, 12);
  cfg.bandwidth = 0.02;
  cfg.edge = EdgeCorrection::translation;
  const auto spec = TestFunctionSpec::compositional(TestFamily::t1);
  const int reps = 200;
  std::vector<double> sum(12, 0.0), sq(12, 0.0);
  for (int s = 0; s < reps; ++s) {
    const auto l = l_transform(estimate_mark_weighted_K(simulate_pattern(sim, 500 + s), spec, cfg));
    for (std::size_t k = 0; k < 12; ++k) {
      const double d = l.values[k] - cfg.rgrid[k];
      sum[k] += d;
      sq[k] += d * d;
    }
  }
  for (std::size_t k = 0; k < 12; ++k) {
    const double m = sum[k] / reps;
    const double se = std::sqrt((sq[k] / reps - m * m) / reps);
    CHECK(std::abs(m) < 4 * se + 1e-3);
  }
}

TEST_CASE("cross characteristics") {
  std::mt19937_64 rng(10);
  auto p = testing::random_pattern(rng, 150, 3);
  const auto cfg = grid_config();
  auto spec = TestFunctionSpec::componentwise(TestFamily::t4, 0, 1);
  const auto plain = estimate_nabla(p, spec, cfg);
  auto cross = spec;
  cross.cross = CrossFilter{false, false, std::nullopt, std::nullopt};
  CHECK(estimate_cross(p, cross, cfg).values == plain.values);
  p.marks_b = p.marks;
  cross.cross = CrossFilter{true, true, std::nullopt, std::nullopt};
  CHECK(estimate_cross(p, cross, cfg).values == plain.values);
  CHECK_THROWS_AS(estimate_cross(p, spec, cfg), ValidationError);

  // a against b: converges to the product of means under independence
  std::vector<Composition> b;
  for (std::size_t i = 0; i < p.size(); ++i) b.push_back(testing::random_composition(rng, 3, 0.7));
  p.marks_b = b;
  auto ab = TestFunctionSpec::componentwise(TestFamily::t1, 0, 1);
  ab.cross = CrossFilter{false, true, std::nullopt, std::nullopt};
  const auto z = coords(p, TransformSpec::clr());
  std::vector<std::vector<double>> zb;
  for (const auto& m : b) zb.push_back(transform(m, TransformSpec::clr()).values);
  const auto want = brute_ratio(p, cfg.rgrid.values(), cfg.bandwidth, [&](auto i, auto h, auto) { return z[i][0] * zb[h][1]; });
  const auto got = estimate_cross(p, ab, cfg);
  CHECK(max_abs_diff(got.values, want, got.masked) < 1e-12);

  // typed: empty stratum
  p.types = std::vector<int>(p.size(), 1);
  auto typed = TestFunctionSpec::componentwise(TestFamily::t1, 0, 0);
  typed.cross = CrossFilter{false, false, 1, 2};
  const auto empty = estimate_cross(p, typed, cfg);
  CHECK(empty.all_masked());
  CHECK_FALSE(empty.warnings.empty());

  // typed two-point pattern: one ordered pair
  auto two = testing::two_point(0.6, {0.3, 0.7}, {0.6, 0.4});
  two.types = std::vector<int>{1, 2};
  two.marks_b = std::vector<Composition>{Composition({0.5, 0.5}), Composition({0.9, 0.1})};
  auto pq = TestFunctionSpec::componentwise(TestFamily::t1, 0, 0, TransformSpec::ilr());
  pq.cross = CrossFilter{false, true, 1, 2};
  const auto single = estimate_cross(two, pq, two_point_config());
  const double za = std::sqrt(0.5) * std::log(0.3 / 0.7), zbv = std::sqrt(0.5) * std::log(0.9 / 0.1);
  CHECK(single.values[1] == doctest::Approx(za * zbv).epsilon(1e-12));

  auto t6 = TestFunctionSpec::componentwise(TestFamily::t6, 0, 0);
  t6.cross = CrossFilter{};
  CHECK_THROWS_AS(estimate_cross(p, t6, cfg), UnsupportedError);
  auto missing = ab;
  p.marks_b.reset();
  CHECK_THROWS_AS(estimate_cross(p, missing, cfg), ValidationError);
}

TEST_CASE("default configuration") {
  std::mt19937_64 rng(12);
  const auto p = testing::random_pattern(rng, 100, 3);
  const auto cfg = EstimatorConfig::defaults(p);
  CHECK(cfg.bandwidth == doctest::Approx(0.015));
  CHECK(cfg.rgrid.size() == 128);
  CHECK(cfg.rgrid.front() == cfg.bandwidth);
  CHECK(cfg.rgrid.back() == doctest::Approx(0.25));
  CHECK(cfg.min_pairs == 5);
  CHECK(cfg.kernel == KernelKind::epanechnikov);
  CHECK_THROWS_AS(EstimatorConfig::defaults(MarkedPattern{}), ValidationError);
  CHECK_THROWS_AS(EstimatorConfig::defaults(p, 128, 0.3), ValidationError);
}

TEST_CASE("compositional scope constraints") {
  std::mt19937_64 rng(13);
  const auto p = testing::random_pattern(rng, 30, 3);
  const auto cfg = grid_config();
  CHECK_THROWS_AS(estimate_nabla(p, TestFunctionSpec::compositional(TestFamily::t2), cfg), ValidationError);
  CHECK_THROWS_AS(estimate_nabla(p, TestFunctionSpec::compositional(TestFamily::t1, TransformSpec::identity()), cfg),
                  ValidationError);
  CHECK_THROWS_AS(estimate_nabla(p, TestFunctionSpec::componentwise(TestFamily::t1, 3, 0), cfg), ValidationError);
  CHECK_NOTHROW(estimate_nabla(p, TestFunctionSpec::compositional(TestFamily::t4, TransformSpec::alpha_clr(0.5)), cfg));
}

TEST_CASE("halving the bandwidth changes the estimate less as b grows") {
  // variance-dominated range; for b near the grid spacing bias takes over
  for (int model = 0; model < 2; ++model) {
    SimulationSpec sim;
    sim.points = PointModel::binomial(2000);
    sim.marks = model == 0 ? MarkModel::iid({1.0, 0.5}, 0.25 * Eigen::MatrixXd::Identity(2, 2))
                           : MarkModel::geostatistical({0.0, 0.0}, {1.0, 1.0}, 0.2, {true, false});
    const auto p = simulate_pattern(sim, 20261014);
    const auto spec = TestFunctionSpec::compositional(TestFamily::t4);
    std::vector<double> gap;
    for (double b : {0.005, 0.01, 0.02, 0.04}) {
      EstimatorConfig c;
      c.rgrid = RGrid::linear(0.17, 0.25, 20);
      c.bandwidth = b;
      EstimatorConfig h = c;
      h.bandwidth = b / 2;
      const auto x = estimate_nabla(p, spec, c), y = estimate_nabla(p, spec, h);
      double s = 0.0;
      int k = 0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x.masked[i] || y.masked[i]) continue;
        s += std::abs(x.values[i] - y.values[i]);
        ++k;
      }
      REQUIRE(k == 20);
      gap.push_back(s / k);
    }
    for (std::size_t i = 1; i < gap.size(); ++i) CHECK(gap[i] < gap[i - 1]);
  }
}

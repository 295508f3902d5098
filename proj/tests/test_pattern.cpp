#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "compmark/errors.hpp"
#include "compmark/pattern.hpp"
#include "support.hpp"

using namespace compmark;

TEST_CASE("window and grid invariants") {
  CHECK_THROWS_AS(Window(1, 0, 0, 1), ValidationError);
  CHECK_THROWS_AS(Window(0, 1, 0, 0), ValidationError);
  CHECK(Window(0, 2, 0, 3).area() == 6.0);
  CHECK_THROWS_AS(RGrid({0.1}), ValidationError);
  CHECK_THROWS_AS(RGrid({0.0, 0.1}), ValidationError);
  CHECK_THROWS_AS(RGrid({0.2, 0.1}), ValidationError);
  const auto g = RGrid::linear(0.01, 0.25, 128);
  CHECK(g.size() == 128);
  CHECK(g.front() == 0.01);
  CHECK(g.back() == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("pattern validation") {
  MarkedPattern empty;
  CHECK(validate_pattern(empty).ok);

  MarkedPattern p;
  p.points = {{0.5, 0.5}, {2.0, 2.0}};
  p.marks = {neutral(3), neutral(3)};
  auto r = validate_pattern(p);
  CHECK_FALSE(r.ok);
  REQUIRE(r.index);
  CHECK(*r.index == 1);
  CHECK(r.message.find("out of window") != std::string::npos);

  p.points[1] = {0.5, 0.5};
  r = validate_pattern(p);
  CHECK_FALSE(r.ok);
  CHECK(r.message.find("not simple") != std::string::npos);

  p.points[1] = {0.25, 0.5};
  CHECK(validate_pattern(p).ok);
  p.marks[1] = neutral(4);
  CHECK_FALSE(validate_pattern(p).ok);

  p.marks[1] = closure(std::vector<double>{0.0, 1.0, 1.0}, 1.0, ZeroPolicy::keep);
  CHECK_FALSE(validate_pattern(p).ok);
  CHECK(validate_pattern(p, ZeroPolicy::keep).ok);

  p.marks[1] = neutral(3);
  p.totals = std::vector<double>{1.0, -1.0};
  CHECK_FALSE(validate_pattern(p).ok);
  p.totals = std::vector<double>{1.0};
  CHECK_FALSE(validate_pattern(p).ok);
  CHECK_THROWS_AS(require_valid(p), ValidationError);
}

TEST_CASE("intensity") {
  MarkedPattern p;
  CHECK_THROWS_AS(intensity(p), ValidationError);
  std::mt19937_64 rng(1);
  p = testing::random_pattern(rng, 100, 3);
  CHECK(intensity(p) == 100.0);
  p.window = Window(0, 2, 0, 2);
  for (auto& pt : p.points) pt = {2 * pt.x, 2 * pt.y};
  CHECK(intensity(p) == 25.0);
  MarkedPattern q = testing::random_pattern(rng, 50, 3);
  q.window = Window(0, 2, 0, 2);
  CHECK(intensity(q) == 12.5);
}

TEST_CASE("ordered pair enumeration") {
  MarkedPattern p;
  p.points = {{0.1, 0.1}, {0.7, 0.1}};
  p.marks = {neutral(2), neutral(2)};
  const auto pairs = pair_distances(p);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].i == 0);
  CHECK(pairs[0].j == 1);
  CHECK(pairs[0].dist == doctest::Approx(0.6));
  CHECK(pairs[1].i == 1);
  CHECK(pairs[1].j == 0);

  std::mt19937_64 rng(2);
  const auto q = testing::random_pattern(rng, 37, 3);
  const auto all = pair_distances(q);
  CHECK(all.size() == 37 * 36);
  std::multiset<double> unordered;
  for (const auto& pd : all) {
    CHECK(pd.i != pd.j);
    CHECK(pd.dist == distance(q.points[pd.j], q.points[pd.i]));
    if (pd.i < pd.j) unordered.insert(pd.dist);
  }
  CHECK(unordered.size() == 37 * 36 / 2);
  for (std::size_t k = 1; k < all.size(); ++k) {
    CHECK((all[k - 1].i < all[k].i || (all[k - 1].i == all[k].i && all[k - 1].j < all[k].j)));
  }

  MarkedPattern one;
  one.points = {{0.5, 0.5}};
  one.marks = {neutral(2)};
  CHECK_THROWS_AS(pair_distances(one), ValidationError);
}

TEST_CASE("simulation determinism and parameter errors") {
  SimulationSpec spec;
  spec.points = PointModel::binomial(0);
  spec.marks = MarkModel::iid({0.0, 0.0}, Eigen::MatrixXd::Identity(2, 2));
  CHECK(simulate_pattern(spec, 1).size() == 0);

  spec.points = PointModel::poisson(50);
  const auto a = simulate_pattern(spec, 42);
  const auto b = simulate_pattern(spec, 42);
  CHECK(a.points == b.points);
  CHECK(a.marks == b.marks);
  CHECK(validate_pattern(a).ok);
  CHECK(simulate_pattern(spec, 43).points != a.points);

  spec.points = PointModel::poisson(-1);
  CHECK_THROWS_AS(simulate_pattern(spec, 1), ValidationError);
  spec.points = PointModel::poisson(10);
  Eigen::MatrixXd bad(2, 2);
  bad << 1, 2, 2, 1;
  spec.marks = MarkModel::iid({0.0, 0.0}, bad);
  CHECK_THROWS_AS(simulate_pattern(spec, 1), ValidationError);

  // semidefinite covariance gives constant marks
  spec.marks = MarkModel::iid({0.3, -0.2}, Eigen::MatrixXd::Zero(2, 2));
  const auto c = simulate_pattern(spec, 5);
  for (const auto& m : c.marks) CHECK(m == c.marks.front());
}

TEST_CASE("Poisson counts match the intensity") {
  SimulationSpec spec;
  spec.window = Window(0, 2, 0, 1);
  spec.points = PointModel::poisson(30);
  spec.marks = MarkModel::iid({0.0}, Eigen::MatrixXd::Identity(1, 1));
  double total = 0.0;
  for (std::uint64_t s = 0; s < 500; ++s) total += static_cast<double>(simulate_pattern(spec, s).size());
  const double expected = 30 * 2.0;
  CHECK(std::abs(total / 500 - expected) < 3.0 * std::sqrt(expected / 500));
}

TEST_CASE("iid logistic-normal marks have the requested clr mean") {
  SimulationSpec spec;
  spec.points = PointModel::binomial(10000);
  const std::vector<double> mu{0.4, -0.3, 0.1};
  Eigen::MatrixXd cov = 0.25 * Eigen::MatrixXd::Identity(3, 3);
  spec.marks = MarkModel::iid(mu, cov);
  const auto p = simulate_pattern(spec, 7);
  REQUIRE(p.size() == 10000);
  const auto h = helmert_matrix(4);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(4);
  for (const auto& m : p.marks) {
    const auto z = transform(m, TransformSpec::clr()).values;
    for (int j = 0; j < 4; ++j) mean(j) += z[static_cast<std::size_t>(j)] / 10000.0;
  }
  const Eigen::VectorXd target = h.transpose() * Eigen::Map<const Eigen::VectorXd>(mu.data(), 3);
  // clr coordinate j has variance 0.25 * (H^T H)_jj
  const Eigen::MatrixXd ctc = h.transpose() * h;
  for (int j = 0; j < 4; ++j) {
    const double se = std::sqrt(0.25 * ctc(j, j) / 10000.0);
    CHECK(std::abs(mean(j) - target(j)) < 3.0 * se);
  }
}

TEST_CASE("geostatistical marks are spatially correlated on flagged coordinates") {
  SimulationSpec spec;
  spec.points = PointModel::binomial(300);
  spec.marks = MarkModel::geostatistical({0.0, 0.0}, {1.0, 1.0}, 0.2, {true, false});
  const auto p = simulate_pattern(spec, 11);
  // mean squared increment of each ilr coordinate for close vs distant pairs
  double near[2] = {0, 0}, far[2] = {0, 0};
  int nn = 0, nf = 0;
  std::vector<std::vector<double>> z;
  for (const auto& m : p.marks) z.push_back(transform(m, TransformSpec::ilr()).values);
  for_each_pair(p, [&](const PairDistance& pd) {
    const bool close = pd.dist < 0.05;
    const bool distant = pd.dist > 0.5;
    if (!close && !distant) return;
    for (int c = 0; c < 2; ++c) {
      const double d = z[pd.i][static_cast<std::size_t>(c)] - z[pd.j][static_cast<std::size_t>(c)];
      (close ? near : far)[c] += d * d;
    }
    (close ? nn : nf)++;
  });
  CHECK(near[0] / nn < 0.6 * far[0] / nf);
  CHECK(near[1] / nn > 0.7 * far[1] / nf);
}

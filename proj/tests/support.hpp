#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "compmark/coda.hpp"
#include "compmark/pattern.hpp"

namespace testing {

inline compmark::Composition random_composition(std::mt19937_64& rng, std::size_t d, double spread = 1.5,
                                                double total = 1.0) {
  std::normal_distribution<double> n(0.0, spread);
  std::vector<double> raw(d);
  for (auto& v : raw) v = std::exp(n(rng));
  return compmark::closure(raw, total);
}

inline compmark::MarkedPattern random_pattern(std::mt19937_64& rng, std::size_t n, std::size_t d,
                                              double spread = 0.7) {
  compmark::MarkedPattern p;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    p.points.push_back({u(rng), u(rng)});
    p.marks.push_back(random_composition(rng, d, spread));
  }
  return p;
}

inline compmark::MarkedPattern two_point(double sep, std::vector<double> a, std::vector<double> b) {
  compmark::MarkedPattern p;
  p.points = {{0.2, 0.5}, {0.2 + sep, 0.5}};
  p.marks = {compmark::closure(a), compmark::closure(b)};
  return p;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b,
                           const std::vector<bool>& mask) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (!mask[k]) m = std::max(m, std::abs(a[k] - b[k]));
  }
  return m;
}

}  // namespace testing

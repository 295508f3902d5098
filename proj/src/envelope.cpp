#include "compmark/envelope.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "compmark/errors.hpp"
#include "compmark/parallel.hpp"

namespace compmark {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

[[noreturn]] void rethrow_with_replicate(std::size_t replicate) {
  const std::string where = replicate == 0 ? "observed pattern: " : "replicate " + std::to_string(replicate) + ": ";
  try {
    throw;
  } catch (const ValidationError& e) {
    throw ValidationError(where + e.what());
  } catch (const DegeneracyError& e) {
    throw DegeneracyError(where + e.what());
  } catch (const UnsupportedError& e) {
    throw UnsupportedError(where + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error(where + e.what());
  }
}

template <class Make>
std::vector<CharacteristicCurve> run_replicates(const MarkedPattern& p, std::size_t s, std::uint64_t seed,
                                                PermuteOptions options, Make&& make) {
  if (s < 1) throw ValidationError("need at least one permutation");
  if (p.size() < 2) throw ValidationError("permutation test needs at least two points");
  std::vector<CharacteristicCurve> curves(s + 1);
  parallel_for(s + 1, [&](std::size_t k) {
    try {
      curves[k] = k == 0 ? make(p) : make(permute_marks(p, seed, k, options));
    } catch (...) {
      rethrow_with_replicate(k);
    }
  });
  return curves;
}

}  // namespace

void CurveFamily::validate() const {
  if (curves.size() < 2) throw ValidationError("curve family needs the observed curve and at least one replicate");
  for (const auto& c : curves) {
    if (c.size() != r.size()) throw ValidationError("curve family: curves differ in length");
  }
  if (masked.size() != r.size()) throw ValidationError("curve family: mask length mismatch");
}

CurveFamily make_family(std::span<const CharacteristicCurve> curves) {
  if (curves.size() < 2) throw ValidationError("curve family needs at least two curves");
  CurveFamily f;
  f.r = curves.front().r;
  f.label = curves.front().label;
  f.masked.assign(f.r.size(), false);
  for (const auto& c : curves) {
    if (c.r != f.r) throw ValidationError("curve family: grid mismatch");
    if (c.values.size() != f.r.size() || c.masked.size() != f.r.size()) {
      throw ValidationError("curve family: curve length mismatch");
    }
    for (std::size_t k = 0; k < f.r.size(); ++k) {
      if (c.masked[k]) f.masked[k] = true;
    }
    f.curves.push_back(c.values);
  }
  for (auto& c : f.curves) {
    for (std::size_t k = 0; k < f.r.size(); ++k) {
      if (f.masked[k]) c[k] = kNaN;
    }
  }
  return f;
}

std::mt19937_64 replicate_rng(std::uint64_t seed, std::size_t replicate) {
  const auto rep = static_cast<std::uint64_t>(replicate);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(rep), static_cast<std::uint32_t>(rep >> 32)};
  return std::mt19937_64(seq);
}

MarkedPattern permute_marks(const MarkedPattern& p, std::mt19937_64& rng, PermuteOptions options) {
  if (p.size() < 2) throw ValidationError("permute_marks: need at least two points");
  std::vector<std::size_t> perm(p.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);

  MarkedPattern out;
  out.window = p.window;
  out.points = p.points;
  out.marks.reserve(p.size());
  for (auto i : perm) out.marks.push_back(p.marks[i]);
  if (p.totals) {
    out.totals.emplace();
    for (auto i : perm) out.totals->push_back((*p.totals)[i]);
  }
  if (p.marks_b) {
    out.marks_b.emplace();
    for (auto i : perm) out.marks_b->push_back((*p.marks_b)[i]);
  }
  if (p.types) {
    if (options.include_types) {
      out.types.emplace();
      for (auto i : perm) out.types->push_back((*p.types)[i]);
    } else {
      out.types = p.types;
    }
  }
  return out;
}

MarkedPattern permute_marks(const MarkedPattern& p, std::uint64_t seed, std::size_t replicate,
                            PermuteOptions options) {
  auto rng = replicate_rng(seed, replicate);
  return permute_marks(p, rng, options);
}

CurveFamily curve_family(const MarkedPattern& p, const Statistic& statistic, std::size_t s, std::uint64_t seed,
                         PermuteOptions options) {
  const auto curves = run_replicates(p, s, seed, options, statistic);
  return make_family(curves);
}

CurveFamily curve_family_combined(const MarkedPattern& p, const MultiStatistic& statistic, std::size_t s,
                                  std::uint64_t seed, PermuteOptions options) {
  const auto curves = run_replicates(p, s, seed, options, [&](const MarkedPattern& q) {
    const auto parts = statistic(q);
    if (parts.empty()) throw ValidationError("combined statistic returned no curves");
    return combined_vector(parts);
  });
  CurveFamily f = make_family(curves);
  // each block grid is increasing, so a step down starts the next block
  std::size_t blocks = 1;
  for (std::size_t k = 1; k < f.length(); ++k) {
    if (f.r[k] <= f.r[k - 1]) ++blocks;
  }
  f.block_length = f.length() / blocks;
  return f;
}

CharacteristicCurve combined_vector(std::span<const CharacteristicCurve> curves) {
  if (curves.empty()) throw ValidationError("combined vector of no curves");
  CharacteristicCurve out;
  out.normalizer = curves.front().normalizer;
  for (std::size_t b = 0; b < curves.size(); ++b) {
    const auto& c = curves[b];
    if (c.r != curves.front().r) throw ValidationError("combined vector: grid mismatch in block " + std::to_string(b + 1));
    out.r.insert(out.r.end(), c.r.begin(), c.r.end());
    out.values.insert(out.values.end(), c.values.begin(), c.values.end());
    out.masked.insert(out.masked.end(), c.masked.begin(), c.masked.end());
    out.label += (b ? "|" : "") + c.label;
    out.warnings.insert(out.warnings.end(), c.warnings.begin(), c.warnings.end());
  }
  return out;
}

bool ErlOrdering::precedes(std::size_t a, std::size_t b) const {
  if (a == b) return false;
  const auto& va = vectors[a];
  const auto& vb = vectors[b];
  if (va != vb) return std::lexicographical_compare(va.begin(), va.end(), vb.begin(), vb.end());
  return a > b;
}

ErlOrdering erl_measure(const CurveFamily& f) {
  f.validate();
  std::vector<std::size_t> columns;
  for (std::size_t k = 0; k < f.length(); ++k) {
    if (!f.masked[k]) columns.push_back(k);
  }
  if (columns.empty()) throw ValidationError("ERL: every r value is masked");
  const std::size_t m = f.curves.size();

  ErlOrdering out;
  out.vectors.assign(m, std::vector<std::size_t>(columns.size()));
  std::vector<double> sorted(m);
  for (std::size_t c = 0; c < columns.size(); ++c) {
    const std::size_t k = columns[c];
    for (std::size_t i = 0; i < m; ++i) sorted[i] = f.curves[i][k];
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < m; ++i) {
      const double v = f.curves[i][k];
      const auto below = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), v) - sorted.begin());
      const auto above = static_cast<std::size_t>(sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), v));
      out.vectors[i][c] = std::min(below, above) + 1;
    }
  }
  for (auto& v : out.vectors) std::sort(v.begin(), v.end());

  out.order.resize(m);
  std::iota(out.order.begin(), out.order.end(), std::size_t{0});
  std::sort(out.order.begin(), out.order.end(), [&](std::size_t a, std::size_t b) { return out.precedes(a, b); });
  out.measures.resize(m);
  for (std::size_t pos = 0; pos < m; ++pos) {
    out.measures[out.order[pos]] = static_cast<double>(pos + 1) / static_cast<double>(m);
  }
  return out;
}

EnvelopeResult global_envelope(const CurveFamily& f, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  f.validate();
  const std::size_t m = f.curves.size();
  const double cut = alpha * static_cast<double>(m);
  const auto excluded = static_cast<std::size_t>(std::floor(cut + 1e-9));
  if (excluded < 1) {
    throw ValidationError("alpha * (s + 1) < 1: the envelope is undefined; use at least " +
                          std::to_string(static_cast<long long>(std::ceil(1.0 / alpha - 1.0))) + " permutations");
  }
  const ErlOrdering erl = erl_measure(f);

  EnvelopeResult out;
  out.r = f.r;
  out.observed = f.curves.front();
  out.masked = f.masked;
  out.alpha = alpha;
  out.replicates = m - 1;
  out.block_length = f.block_length;
  out.erl_measures = erl.measures;
  out.p_value = erl.measures.front();
  out.retained_count = m - excluded;

  const std::size_t d = f.length();
  out.lower.assign(d, kNaN);
  out.upper.assign(d, kNaN);
  out.null_mean.assign(d, kNaN);
  for (std::size_t k = 0; k < d; ++k) {
    if (f.masked[k]) continue;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0.0;
    for (std::size_t pos = excluded; pos < m; ++pos) {
      const double v = f.curves[erl.order[pos]][k];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    for (std::size_t i = 1; i < m; ++i) sum += f.curves[i][k];
    out.lower[k] = lo;
    out.upper[k] = hi;
    out.null_mean[k] = sum / static_cast<double>(m - 1);
    const double obs = out.observed[k];
    if (obs < lo || obs > hi) out.exceedances.push_back({k, f.block_of(k), f.r[k], obs > hi});
  }
  return out;
}

}  // namespace compmark

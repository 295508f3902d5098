#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "compmark/characteristics.hpp"
#include "compmark/pattern.hpp"

namespace compmark {

/// Observed curve (index 0) and s permutation curves on one grid. A combined
/// vector stacks several curves, each a block of `block_length` columns.
struct CurveFamily {
  std::vector<double> r;
  std::vector<std::vector<double>> curves;
  std::vector<bool> masked;  ///< union of the per-curve masks
  std::size_t block_length = 0;
  std::string label;

  std::size_t replicates() const noexcept { return curves.empty() ? 0 : curves.size() - 1; }
  std::size_t length() const noexcept { return r.size(); }
  std::size_t block_of(std::size_t column) const noexcept { return block_length ? column / block_length : 0; }
  void validate() const;
};

/// Builds a family from curves on a shared grid; curve 0 is the observed one.
CurveFamily make_family(std::span<const CharacteristicCurve> curves);

struct PermuteOptions {
  /// Type labels move with the marks when set; by default they stay with
  /// the locations.
  bool include_types = false;
};

/// Permutes the mark records (composition, total, second composition) over
/// fixed locations.
MarkedPattern permute_marks(const MarkedPattern& p, std::mt19937_64& rng, PermuteOptions options = {});
/// Replicate `replicate` of the stream `seed`; independent of other replicates.
MarkedPattern permute_marks(const MarkedPattern& p, std::uint64_t seed, std::size_t replicate,
                            PermuteOptions options = {});
std::mt19937_64 replicate_rng(std::uint64_t seed, std::size_t replicate);

using Statistic = std::function<CharacteristicCurve(const MarkedPattern&)>;
using MultiStatistic = std::function<std::vector<CharacteristicCurve>(const MarkedPattern&)>;

/// Curve 0 from p, curves 1..s from permutations 1..s. Failures carry the
/// replicate index in the message. Replicates run in parallel.
CurveFamily curve_family(const MarkedPattern& p, const Statistic& statistic, std::size_t s, std::uint64_t seed,
                         PermuteOptions options = {});
/// Same with the combined vector of several curves per replicate.
CurveFamily curve_family_combined(const MarkedPattern& p, const MultiStatistic& statistic, std::size_t s,
                                  std::uint64_t seed, PermuteOptions options = {});

/// Concatenation of curves sharing one grid.
CharacteristicCurve combined_vector(std::span<const CharacteristicCurve> curves);

/// Extreme rank length ordering of a family.
struct ErlOrdering {
  /// Pointwise two-sided ranks of each curve, sorted ascending.
  std::vector<std::vector<std::size_t>> vectors;
  /// Curve indices from most to least extreme.
  std::vector<std::size_t> order;
  /// (1 + number of curves more extreme) / (s + 1).
  std::vector<double> measures;

  /// True when curve a is more extreme than curve b. Equal rank vectors are
  /// resolved towards the higher index, so the observed curve never wins a tie.
  bool precedes(std::size_t a, std::size_t b) const;
};

ErlOrdering erl_measure(const CurveFamily& f);

struct Exceedance {
  std::size_t column = 0;
  std::size_t block = 0;
  double r = 0.0;
  bool above = false;
};

struct EnvelopeResult {
  std::vector<double> r;
  std::vector<double> observed;
  std::vector<double> null_mean;  ///< mean of the permutation curves
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<bool> masked;
  double p_value = 1.0;
  std::vector<double> erl_measures;
  double alpha = 0.05;
  std::size_t replicates = 0;
  std::size_t retained_count = 0;
  std::size_t block_length = 0;
  std::vector<Exceedance> exceedances;

  bool observed_exits() const noexcept { return !exceedances.empty(); }
};

/// 100(1 - alpha)% global ERL envelope and Monte Carlo p-value.
EnvelopeResult global_envelope(const CurveFamily& f, double alpha);

}  // namespace compmark

#pragma once

// Trial allocations: equal and Neyman baselines, the guardrails that
// restrict candidate designs, and greedy single-unit swap search against
// the exact risk of the shrinkage estimator.

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ebdesign/core_types.hpp"
#include "ebdesign/estimators.hpp"
#include "ebdesign/quadrature.hpp"
#include "ebdesign/sensitivity.hpp"

namespace ebdesign {

// Counts differ by at most one; the extra units go to the lowest cells.
Design equal_allocation(std::size_t strata, int n_r);

// Cell counts proportional to the outcome standard deviation. Cells whose
// share falls below ss_min (including zero-variance cells) are pinned at
// ss_min and the rest is reallocated. Rounded by largest remainder.
Design neyman_allocation(const StratumMoments& moments, int n_r, int ss_min = 1,
                         std::vector<std::string>* warnings = nullptr);

Design baseline_design(BaselineRule rule, const StratumMoments& moments, int n_r, int ss_min);

// Flat random design: Dirichlet(1, ..., 1) shares on top of the floor.
Design random_design(std::size_t strata, int n_r, int ss_min, std::uint64_t seed);

// max over the box of sum_i num[i] v(mu_i) / sum_i den[i] v(mu_i), with
// v(mu) = mu (1 - mu), by Dinkelbach iteration.
struct RatioResult {
  double value = 0.0;
  std::vector<double> argmax;
  int iterations = 0;
};
RatioResult dinkelbach_max_ratio(std::span<const double> num, std::span<const double> den,
                                 std::span<const Interval> boxes);

struct GuardrailContext {
  GuardrailConfig config;
  Design baseline;
  StratumMoments point_moments;
  std::optional<SensitivityBounds> bounds;

  // Throws configuration errors for robust modes without bounds and for
  // mismatched strata.
  void validate() const;
};

struct GuardrailReport {
  bool floor_ok = true;
  bool detach_ok = true;
  bool risk_ok = true;
  double detach_ratio = 0.0;  // NaN when detachability is off
  std::string detail;

  bool passed() const { return floor_ok && detach_ok && risk_ok; }
};

GuardrailReport check_guardrails(const Design& candidate, const GuardrailContext& ctx);

struct SwapMove {
  std::size_t from = 0;  // flat cell index 2k + arm
  std::size_t to = 0;
};

struct NeighborSet {
  std::vector<SwapMove> moves;  // lexicographic (from, to) order
  std::vector<Design> designs;
  int rejected_floor = 0;
  int rejected_detach = 0;
  int rejected_risk = 0;

  int rejected() const { return rejected_floor + rejected_detach + rejected_risk; }
};

NeighborSet swap_neighbors(const Design& design, const GuardrailContext& ctx);

struct DesignObjective {
  StratumMoments moments;
  EffectVector xi;
  ShrinkageFamily family = ShrinkageFamily::kappa2;
};

struct SearchSettings {
  QuadratureSettings quadrature;
  std::int64_t mc_draws = 20000;
  std::uint64_t mc_seed = 1;
  unsigned threads = 1;
  // 0 means n_r * 2K.
  int max_iterations = 0;
};

// R(d, V, xi): exact risk for unbiased, kappa2 and kappa1, otherwise Monte
// Carlo with the fixed seed in `settings`.
double design_risk(const Design& d, const DesignObjective& obj, const SearchSettings& settings);

struct GreedyResult {
  Design design;
  double risk = std::numeric_limits<double>::infinity();
  int iterations = 0;
  std::vector<double> risk_path;
  std::vector<SwapMove> moves;         // accepted moves, one per improving iteration
  std::vector<int> rejected_per_iteration;  // guardrail rejections in each neighborhood
  long long failed_evaluations = 0;       // neighbors whose risk could not be evaluated

  long long rejected() const;
};

GreedyResult greedy_optimize(const Design& start, const DesignObjective& obj, const GuardrailContext& ctx,
                             const SearchSettings& settings);

struct MultiStartResult {
  GreedyResult best;
  std::vector<std::string> labels;  // equal, neyman, random1, ...
  std::vector<GreedyResult> runs;
  std::vector<std::string> skipped;  // starts that violated the guardrails
};

MultiStartResult multi_start_optimize(const DesignObjective& obj, const GuardrailContext& ctx, int n_r,
                                      int extra_starts, std::uint64_t seed, const SearchSettings& settings);

// Audit log: one line per iteration plus run summaries.
void write_audit(std::ostream& os, const MultiStartResult& r);

}  // namespace ebdesign

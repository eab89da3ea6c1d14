#pragma once

// Stratum effect estimators: difference-in-means for the trial, stabilized
// IPW for the observational study, and the shrinkage family that combines
// the two.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ebdesign/core_types.hpp"

namespace ebdesign {

struct UnitRecord {
  std::int64_t unit_id = 0;
  std::vector<double> covariates;
  int w = 0;  // treatment indicator
  int y = 0;  // observed binary outcome
  std::size_t stratum = 0;  // 0-based
};

// CSV: unit_id,x1..xp,w,y,stratum (stratum 1-based).
void write_units_csv(std::ostream& os, std::span<const UnitRecord> units);
std::vector<UnitRecord> read_units_csv(std::istream& is);
// Number of strata implied by the data (max stratum + 1).
std::size_t strata_in(std::span<const UnitRecord> units);

struct PropensityModel {
  double intercept = 0.0;
  std::vector<double> coefficients;
  double clip = 0.01;
  bool separation_warning = false;
  bool converged = false;
  int iterations = 0;

  double linear_predictor(std::span<const double> x) const;
  // Fitted probability clipped to [clip, 1 - clip].
  double probability(std::span<const double> x) const;
};

struct PropensityFitOptions {
  double ridge = 1e-6;
  double separation_ridge = 1.0;
  double clip = 0.01;
  int max_iterations = 100;
  double tolerance = 1e-8;
};

// Logistic regression by IRLS with a ridge penalty on the slopes. Perfectly
// separated data is refit with a heavier ridge and flagged.
PropensityModel fit_propensity(std::span<const UnitRecord> obs, const PropensityFitOptions& opts = {});
// Same data with covariate `drop` (0-based) removed from every unit.
std::vector<UnitRecord> drop_covariate(std::span<const UnitRecord> units, std::size_t drop);

struct TrialEstimate {
  EffectVector tau_r;
  std::vector<double> variances;            // s_t^2/n_t + s_c^2/n_c
  std::vector<std::size_t> degenerate_strata;  // strata with zero variance estimate

  bool degenerate() const { return !degenerate_strata.empty(); }
  // Throws degenerate_moments if any stratum has a zero variance estimate.
  DiagonalCovariance covariance() const;
};

// Requires >= 2 treated and >= 2 control units per stratum.
TrialEstimate difference_in_means(std::span<const UnitRecord> trial, std::size_t strata);

// Stabilized (Hajek) IPW contrast per stratum.
EffectVector sipw_estimates(std::span<const UnitRecord> obs, const PropensityModel& model, std::size_t strata);
// Hajek arm means per stratum with binary variances mu(1 - mu).
StratumMoments sipw_moments(std::span<const UnitRecord> obs, const PropensityModel& model,
                            std::size_t strata);

enum class ShrinkageFamily {
  unbiased,  // identity: returns tau_r
  kappa2,
  kappa2_plus,
  kappa1,
  kappa1_plus,
  delta1,
  delta1_plus,
  delta2,
  delta2_plus,
};

const char* to_string(ShrinkageFamily f);
ShrinkageFamily parse_family(const std::string& s);
bool is_positive_part(ShrinkageFamily f);

struct ShrinkResult {
  EffectVector estimate;
  bool degenerate = false;  // tau_r == tau_o; estimate is tau_o
};

ShrinkResult shrink(ShrinkageFamily family, const EffectVector& tau_r, const EffectVector& tau_o,
                    const DiagonalCovariance& sigma);

// Allocation-free kernel: out = shrinkage estimate. `sigma2` may contain
// zeros (a stratum with no estimated variance keeps its own estimate).
// Returns false when tau_r == tau_o (out = tau_o).
bool shrink_into(ShrinkageFamily family, std::span<const double> tau_r, std::span<const double> tau_o,
                 std::span<const double> sigma2, std::span<double> out);

// 4 max_k sigma_k^4 < sum_k sigma_k^4.
bool dominance_condition(const DiagonalCovariance& sigma);
bool dominance_condition(std::span<const double> sigma2);

}  // namespace ebdesign

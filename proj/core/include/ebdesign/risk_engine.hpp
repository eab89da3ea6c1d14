#pragma once

// Exact conditional risk of shrinkage estimators through one-dimensional
// integral representations of quadratic-form moments, plus a Monte Carlo
// oracle that simulates the estimator directly.

#include <cstdint>

#include "ebdesign/core_types.hpp"
#include "ebdesign/estimators.hpp"
#include "ebdesign/quadrature.hpp"

namespace ebdesign {

// xi = E_r(tau_r) - tau_o.
struct RiskQuery {
  ShrinkageFamily family = ShrinkageFamily::kappa2;
  DiagonalCovariance sigma;
  EffectVector xi;

  void validate() const;
};

// E[1 / (nu' S^a nu)] for nu ~ N(S^{-1/2} xi, I), S = diag(sigma). K >= 3.
double moment_inverse(const DiagonalCovariance& sigma, const EffectVector& xi, int power,
                      const QuadratureSettings& settings = {});

// E[nu' S^b nu / (nu' S^a nu)^2] under the same law. K >= 3.
double moment_ratio(const DiagonalCovariance& sigma, const EffectVector& xi, int num_power, int den_power,
                    const QuadratureSettings& settings = {});

// Both moments over one set of quadrature nodes.
struct MomentPair {
  double inverse = 0.0;
  double ratio = 0.0;
  int evaluations = 0;
};
MomentPair moment_pair(const DiagonalCovariance& sigma, const EffectVector& xi, int num_power, int den_power,
                       const QuadratureSettings& settings = {});

struct RiskValue {
  double value = 0.0;
  // Positive-part families report the risk of their parent estimator, which
  // bounds theirs from above.
  bool upper_bound = false;
};

// Risk per stratum (divided by K). Closed forms exist for unbiased, kappa2
// and kappa1; the delta families raise unsupported_closed_form.
RiskValue risk_exact(const RiskQuery& query, const QuadratureSettings& settings = {});

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::int64_t draws = 0;
};

// Simulates tau_r ~ N(xi, Sigma_r) with tau_o = 0 and averages ||est - xi||^2 / K.
// Results depend only on (query, draws, seed), never on `threads`.
McEstimate mc_risk(const RiskQuery& query, std::int64_t draws, std::uint64_t seed, unsigned threads = 1);

}  // namespace ebdesign

#pragma once

// Gamma-level bounds on stratum arm means under the marginal sensitivity
// model: the true inverse-probability weight of each unit may differ from
// the estimated one by an odds factor in [1/gamma, gamma].

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ebdesign/core_types.hpp"
#include "ebdesign/estimators.hpp"

namespace ebdesign {

// One unit of one arm: outcome and the estimated probability of the arm it
// actually received (e for treated units, 1 - e for controls).
struct ArmObservation {
  double y = 0.0;
  double p = 0.5;
};

// Weight box [1 + o / gamma, 1 + o * gamma] with o = (1 - p) / p.
std::pair<double, double> weight_box(double p, double gamma);

struct MeanRange {
  double min = 0.0;
  double max = 0.0;
};

// Extremes of the Hajek mean sum(w y) / sum(w) over the weight boxes.
MeanRange sipw_extrema(std::span<const ArmObservation> arm, double gamma);

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

struct BootstrapOptions {
  int resamples = 1000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

// Percentile bootstrap over unit resamples of one arm: lower = alpha/2
// quantile of resampled minima, upper = 1 - alpha/2 quantile of maxima.
Interval gamma_interval(std::span<const ArmObservation> arm, double gamma, double alpha,
                        const BootstrapOptions& opts);

class SensitivityBounds {
 public:
  SensitivityBounds() = default;
  SensitivityBounds(double gamma, double alpha, std::vector<Interval> treated, std::vector<Interval> control);

  double gamma() const { return gamma_; }
  double alpha() const { return alpha_; }
  std::size_t strata() const { return treated_.size(); }
  const Interval& treated(std::size_t k) const { return treated_[k]; }
  const Interval& control(std::size_t k) const { return control_[k]; }
  const Interval& interval(Cell c) const {
    return c.arm == Arm::treated ? treated_[c.stratum] : control_[c.stratum];
  }

 private:
  double gamma_ = 1.0;
  double alpha_ = 0.05;
  std::vector<Interval> treated_, control_;
};

// Per-stratum bounds for both arms. Resampling is done over the units of a
// stratum jointly, redrawing any resample that leaves an arm empty. The
// propensity model is held fixed across resamples.
SensitivityBounds sensitivity_bounds(std::span<const UnitRecord> obs, const PropensityModel& model,
                                     std::size_t strata, double gamma, double alpha,
                                     const BootstrapOptions& opts);

// CSV: stratum,arm,lower,upper (arm is "t" or "c"). gamma and alpha are not
// stored; the reader takes them as arguments.
void write_bounds_csv(std::ostream& os, const SensitivityBounds& b);
SensitivityBounds read_bounds_csv(std::istream& is, double gamma, double alpha);

struct WorstCaseSpec {
  EffectVector xi_prime;
  StratumMoments v_prime;  // binary-consistent
};

// xi'_k = max(|u_t - l_c - tau_o|, |l_t - u_c - tau_o|). The variances use
// the interval endpoints of the winning branch; ties go to (u_t, l_c).
WorstCaseSpec worst_case_error(const SensitivityBounds& bounds, const EffectVector& tau_o);

struct GammaCalibration {
  double gamma = 1.0;
  std::vector<double> per_covariate;  // 0 where the covariate was skipped
  std::vector<std::string> warnings;
};

// Drops each covariate in turn, refits the propensity model and records the
// largest per-unit odds ratio between the full and reduced fits (folded so
// it is >= 1). The suggested gamma is the maximum over covariates.
GammaCalibration calibrate_gamma(std::span<const UnitRecord> obs, const PropensityFitOptions& opts = {});

}  // namespace ebdesign

#pragma once

// Simulation study: a binary-outcome super-population with selection bias,
// effect models calibrated to a target Cohen's d, observational and trial
// sampling, and the replication loop that scores each design.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ebdesign/core_types.hpp"
#include "ebdesign/designer.hpp"
#include "ebdesign/estimators.hpp"
#include "ebdesign/sensitivity.hpp"

namespace ebdesign {

enum class EffectModel { constant, linear, quadratic };
const char* to_string(EffectModel m);
EffectModel parse_effect_model(const std::string& s);

struct SimConfig {
  std::size_t superpop_size = 1'000'000;
  std::size_t n_obs = 20'000;
  int n_r = 1'000;
  std::vector<double> beta{1.0, 1.0, 1.0, 1.0, 1.0};
  std::vector<double> gamma;  // propensity slopes; defaults to (sqrt2, sqrt2, sqrt2, 0, 0)
  double incidence = 0.10;
  double cohens_d = 0.5;
  double offdiag = 0.1;  // magnitude of the nonzero covariate covariances
  EffectModel effects = EffectModel::constant;
  int reps = 5'000;
  std::vector<std::size_t> unmeasured;  // 0-based covariate indices hidden from the analyst
  std::uint64_t seed = 1;

  // Design stage.
  GuardrailConfig guardrails{10, 1.2, GuardrailMode::point, GuardrailMode::point, BaselineRule::neyman};
  double obs_alpha = 0.05;
  int bootstrap = 1'000;
  int extra_starts = 3;
  unsigned threads = 1;

  SimConfig();
  static SimConfig paper();
  static SimConfig desk();

  std::size_t covariates() const { return beta.size(); }
  static constexpr std::size_t strata() { return 12; }
  void validate() const;
};

// Unit-variance covariance; each off-diagonal pair is +offdiag, -offdiag or
// 0 with probabilities 1/4, 1/4, 1/2, drawn from the config seed. Repaired
// to the nearest positive-definite correlation matrix if needed.
struct CovariatePattern {
  std::vector<double> matrix;  // p x p, row-major
  bool repaired = false;
};
CovariatePattern covariate_covariance(const SimConfig& config);

struct SuperPopulation {
  std::size_t p = 0;
  std::vector<double> x;  // row-major, size() x p
  std::vector<std::uint8_t> y0, y1;
  std::vector<std::uint16_t> stratum;  // 0-based
  std::vector<std::vector<std::uint32_t>> members;
  double intercept = 0.0;  // outcome-model intercept chosen for the target incidence
  std::vector<double> x1_cuts, x2_cuts;

  std::size_t size() const { return y0.size(); }
  std::size_t strata() const { return members.size(); }
  std::span<const double> covariates(std::size_t i) const { return {x.data() + i * p, p}; }
  // Stratum means of y1 - y0.
  EffectVector tau() const;
  // Stratum arm means with binary variances mu(1 - mu).
  StratumMoments moments() const;
};

// Covariates, Y(0) with Y(1) = Y(0), and strata from empirical quantiles.
SuperPopulation generate_superpopulation(const SimConfig& config, std::uint64_t seed);

// Nominal stratum effects for scale T (k is 1-based in the formulas).
std::vector<double> nominal_effects(EffectModel model, double T, std::size_t strata);

// (mean Y(1) - mean Y(0)) / sqrt((var Y(1) + var Y(0)) / 2) over the population.
double cohens_d(const SuperPopulation& pop);

struct EffectCalibration {
  double T = 0.0;
  double d = 0.0;  // realized |Cohen's d| at T
};
// Bisection on T; throws a calibration error carrying the largest
// attainable |d| when the target cannot be reached.
EffectCalibration calibrate_effect_scale(const SuperPopulation& pop, EffectModel model, double target_d);

// Flips round(|tau_k| n_k) randomly chosen units per stratum: Y(0) = 0 units
// get Y(1) = 1 for positive effects, Y(0) = 1 units get Y(1) = 0 for
// negative ones.
SuperPopulation assign_treatment_effects(SuperPopulation pop, EffectModel model, double T, std::uint64_t seed);

// Simple random sample without replacement, treatment from the logistic
// propensity on the full covariates, unmeasured covariates removed.
std::vector<UnitRecord> draw_observational(const SuperPopulation& pop, std::size_t n_obs,
                                           std::span<const double> gamma,
                                           std::span<const std::size_t> unmeasured, std::uint64_t seed);

// Recruits n_t + n_c units per stratum without replacement and treats a
// uniformly random n_t of them.
std::vector<UnitRecord> draw_trial(const SuperPopulation& pop, const Design& design, std::uint64_t seed);

struct NamedDesign {
  std::string name;
  Design design;
};

struct StudyResult {
  std::vector<std::string> designs;
  std::vector<ShrinkageFamily> families;
  std::vector<int> rep_ids;
  // losses[(d * F + f) * R + r] = ||estimate - tau||^2 / K
  std::vector<double> losses;
  // dominance[d * R + r]: the condition holds for the estimated Sigma_r
  std::vector<char> dominance;

  std::size_t reps() const { return rep_ids.size(); }
  double loss(std::size_t d, std::size_t f, std::size_t r) const {
    return losses[(d * families.size() + f) * reps() + r];
  }
  // Order-independent mean and standard error over replications.
  double mean(std::size_t d, std::size_t f) const;
  double std_error(std::size_t d, std::size_t f) const;
  std::size_t design_index(const std::string& name) const;
  std::size_t family_index(ShrinkageFamily f) const;
};

// Replications keyed by (seed, rep id); the same draws feed every design.
StudyResult run_replications(const SuperPopulation& trial_pop, const EffectVector& tau_o,
                             std::span<const NamedDesign> designs, std::span<const ShrinkageFamily> families,
                             std::span<const int> rep_ids, std::uint64_t seed, unsigned threads = 1);
StudyResult run_study(const SuperPopulation& trial_pop, const EffectVector& tau_o,
                      std::span<const NamedDesign> designs, std::span<const ShrinkageFamily> families, int reps,
                      std::uint64_t seed, unsigned threads = 1);

struct RiskCell {
  double percent = 0.0;  // of the (unbiased, equal) mean loss
  double mean = 0.0;
  double std_error = 0.0;
};

struct RiskTable {
  std::vector<std::string> designs;
  std::vector<ShrinkageFamily> families;
  std::vector<RiskCell> cells;  // [f * D + d]

  const RiskCell& at(std::size_t f, std::size_t d) const { return cells[f * designs.size() + d]; }
  const RiskCell& at(ShrinkageFamily f, const std::string& design) const;
};

// Normalizes by the unbiased estimator under the design named "equal".
RiskTable make_risk_table(const StudyResult& s);
void write_risk_table_csv(std::ostream& os, const RiskTable& t);
void write_risk_table_text(std::ostream& os, const RiskTable& t);

// One optimized or reference design together with the constraints it was
// built under.
struct DesignRecord {
  std::string name;
  Design design;
  bool optimized = false;
  GuardrailContext guardrails;
  std::optional<MultiStartResult> search;
};

struct SimulationOutcome {
  SimConfig config;
  EffectCalibration calibration;
  std::vector<std::string> warnings;
  bool covariance_repaired = false;
  EffectVector tau;     // trial population truth
  EffectVector tau_o;   // SIPW estimates
  StratumMoments v_hat; // SIPW arm moments
  PropensityModel propensity;
  std::vector<DesignRecord> designs;
  StudyResult study;
  RiskTable table;
};

// Design names: equal, neyman, naive, robust:<gamma>, oracle.
SimulationOutcome run_simulation(const SimConfig& config, const std::vector<std::string>& design_names);

// CSV: design,stratum,n_treated,n_control
void write_designs_csv(std::ostream& os, const SimulationOutcome& o);
// One row per design with the guardrail check re-run against the context it
// was built under: design,optimized,min_count,ss_min,detach_mode,detach_ratio,
// delta_d,detach_ok,risk_mode,risk_ok,floor_ok,passed
void write_guardrail_audit(std::ostream& os, const SimulationOutcome& o);

}  // namespace ebdesign

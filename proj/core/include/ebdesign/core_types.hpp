#pragma once

// Shared vocabulary: strata, allocation designs, per-stratum moments and
// the K-vectors that flow between estimation, risk and design.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ebdesign/error.hpp"

namespace ebdesign {

enum class Arm : int { treated = 0, control = 1 };

const char* arm_name(Arm arm);

// A (stratum, arm) cell. Strata are 0-based internally and 1-based in files.
struct Cell {
  std::size_t stratum = 0;
  Arm arm = Arm::treated;

  // Flat index 2k + arm; this is also the lexicographic order of cells.
  std::size_t index() const { return 2 * stratum + static_cast<std::size_t>(arm); }
  static Cell from_index(std::size_t flat) {
    return {flat / 2, static_cast<Arm>(flat % 2)};
  }
  friend bool operator==(const Cell&, const Cell&) = default;
};

// Per-stratum treated/control allocation counts (the decision variable).
class Design {
 public:
  Design() = default;
  Design(std::vector<int> treated, std::vector<int> control);
  static Design from_cells(std::vector<int> cells);

  std::size_t strata() const { return cells_.size() / 2; }
  std::size_t cell_count() const { return cells_.size(); }
  int treated(std::size_t k) const { return cells_[2 * k]; }
  int control(std::size_t k) const { return cells_[2 * k + 1]; }
  int count(Cell c) const { return cells_[c.index()]; }
  int count(std::size_t flat) const { return cells_[flat]; }
  std::span<const int> cells() const { return cells_; }
  int total() const;
  int min_count() const;

  // Moves one unit from cell `from` to cell `to` (flat indices).
  Design with_move(std::size_t from, std::size_t to) const;

  friend bool operator==(const Design&, const Design&) = default;

 private:
  std::vector<int> cells_;  // [t_1, c_1, t_2, c_2, ...]
};

std::ostream& operator<<(std::ostream& os, const Design& d);

// Per-stratum, per-arm potential-outcome means and variances.
class StratumMoments {
 public:
  StratumMoments() = default;
  StratumMoments(std::vector<double> mu_t, std::vector<double> mu_c,
                 std::vector<double> var_t, std::vector<double> var_c);
  // Variances set to mu(1 - mu), the exact relation for binary outcomes.
  static StratumMoments binary(std::vector<double> mu_t, std::vector<double> mu_c);

  std::size_t strata() const { return mu_t_.size(); }
  double mu_t(std::size_t k) const { return mu_t_[k]; }
  double mu_c(std::size_t k) const { return mu_c_[k]; }
  double var_t(std::size_t k) const { return var_t_[k]; }
  double var_c(std::size_t k) const { return var_c_[k]; }
  double mean(Cell c) const { return c.arm == Arm::treated ? mu_t_[c.stratum] : mu_c_[c.stratum]; }
  double variance(Cell c) const {
    return c.arm == Arm::treated ? var_t_[c.stratum] : var_c_[c.stratum];
  }
  bool binary_consistent() const { return binary_consistent_; }

 private:
  std::vector<double> mu_t_, mu_c_, var_t_, var_c_;
  bool binary_consistent_ = false;
};

// A K-vector with finite entries (tau, tau_r, tau_o, xi, ...).
class EffectVector {
 public:
  EffectVector() = default;
  explicit EffectVector(std::vector<double> values);
  static EffectVector zeros(std::size_t k) { return EffectVector(std::vector<double>(k, 0.0)); }

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t k) const { return values_[k]; }
  std::span<const double> values() const { return values_; }

  friend bool operator==(const EffectVector&, const EffectVector&) = default;

 private:
  std::vector<double> values_;
};

// Diagonal of Sigma_r; entries strictly positive and finite.
class DiagonalCovariance {
 public:
  DiagonalCovariance() = default;
  explicit DiagonalCovariance(std::vector<double> diag);

  std::size_t size() const { return diag_.size(); }
  double operator[](std::size_t k) const { return diag_[k]; }
  std::span<const double> diag() const { return diag_; }
  double trace() const;

 private:
  std::vector<double> diag_;
};

enum class GuardrailMode { off, point, robust };
enum class BaselineRule { equal, neyman };

const char* to_string(GuardrailMode m);
const char* to_string(BaselineRule r);
GuardrailMode parse_guardrail_mode(const std::string& s);
BaselineRule parse_baseline_rule(const std::string& s);

struct GuardrailConfig {
  int ss_min = 1;
  double delta_d = 1.0;
  GuardrailMode detachability = GuardrailMode::off;
  GuardrailMode risk_reduction = GuardrailMode::off;
  BaselineRule baseline = BaselineRule::neyman;

  bool needs_bounds() const {
    return detachability == GuardrailMode::robust || risk_reduction == GuardrailMode::robust;
  }
  void validate() const;
};

// sigma_rk^2 = var_t / n_rkt + var_c / n_rkc.
DiagonalCovariance design_covariance(const Design& design, const StratumMoments& moments);

// tr(Sigma_r) / K: the risk of the difference-in-means vector.
double l2_risk_of_unbiased(const DiagonalCovariance& sigma);

// CSV: stratum,n_treated,n_control
void write_design_csv(std::ostream& os, const Design& d);
Design read_design_csv(std::istream& is);
// CSV: stratum,mu_t,mu_c,var_t,var_c
void write_moments_csv(std::ostream& os, const StratumMoments& m);
StratumMoments read_moments_csv(std::istream& is);

}  // namespace ebdesign

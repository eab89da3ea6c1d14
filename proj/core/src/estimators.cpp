#include "ebdesign/estimators.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "ebdesign/csv.hpp"

namespace ebdesign {
namespace {

double logistic(double eta) {
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  double e = std::exp(eta);
  return e / (1.0 + e);
}

std::string stratum_label(std::size_t k) { return "stratum " + std::to_string(k + 1); }

struct ArmSums {
  double n = 0;      // count (or weight total)
  double sum = 0;    // sum of y (or weighted)
  double sum_sq = 0;
};

}  // namespace

void write_units_csv(std::ostream& os, std::span<const UnitRecord> units) {
  const std::size_t p = units.empty() ? 0 : units.front().covariates.size();
  os << "unit_id";
  for (std::size_t j = 0; j < p; ++j) os << ",x" << (j + 1);
  os << ",w,y,stratum\n";
  for (const auto& u : units) {
    os << u.unit_id;
    for (double x : u.covariates) os << ',' << csv::format_double(x);
    os << ',' << u.w << ',' << u.y << ',' << (u.stratum + 1) << '\n';
  }
}

std::vector<UnitRecord> read_units_csv(std::istream& is) {
  auto t = csv::Table::read(is);
  t.require({"unit_id", "w", "y", "stratum"});
  std::vector<std::size_t> xcols;
  for (std::size_t j = 1;; ++j) {
    std::string name = "x" + std::to_string(j);
    if (!t.has(name)) break;
    xcols.push_back(t.column(name));
  }
  const auto cid = t.column("unit_id");
  const auto cw = t.column("w");
  const auto cy = t.column("y");
  const auto cs = t.column("stratum");
  std::vector<UnitRecord> out(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto& u = out[r];
    u.unit_id = t.integer(r, cid);
    u.covariates.resize(xcols.size());
    for (std::size_t j = 0; j < xcols.size(); ++j) u.covariates[j] = t.number(r, xcols[j]);
    long long w = t.integer(r, cw), y = t.integer(r, cy), s = t.integer(r, cs);
    if ((w != 0 && w != 1) || (y != 0 && y != 1))
      throw Error(ErrorKind::schema, "row " + std::to_string(r + 1) + ": w and y must be 0 or 1");
    if (s < 1) throw Error(ErrorKind::schema, "row " + std::to_string(r + 1) + ": stratum must be >= 1");
    u.w = static_cast<int>(w);
    u.y = static_cast<int>(y);
    u.stratum = static_cast<std::size_t>(s - 1);
  }
  return out;
}

std::size_t strata_in(std::span<const UnitRecord> units) {
  std::size_t k = 0;
  for (const auto& u : units) k = std::max(k, u.stratum + 1);
  return k;
}

double PropensityModel::linear_predictor(std::span<const double> x) const {
  if (x.size() != coefficients.size())
    throw Error(ErrorKind::invalid_argument, "propensity: covariate dimension mismatch");
  double eta = intercept;
  for (std::size_t j = 0; j < x.size(); ++j) eta += coefficients[j] * x[j];
  return eta;
}

double PropensityModel::probability(std::span<const double> x) const {
  return std::clamp(logistic(linear_predictor(x)), clip, 1.0 - clip);
}

namespace {

PropensityModel irls(const Eigen::MatrixXd& X, const Eigen::VectorXd& w, double ridge,
                     const PropensityFitOptions& opts) {
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(d, ridge);
  penalty(0) = 0.0;  // intercept is not penalized
  PropensityModel m;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    Eigen::VectorXd eta = X * beta;
    Eigen::VectorXd p(n), wt(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p(i) = logistic(eta(i));
      wt(i) = std::max(p(i) * (1.0 - p(i)), 1e-12);
    }
    Eigen::MatrixXd H = X.transpose() * wt.asDiagonal() * X;
    H.diagonal() += penalty;
    Eigen::VectorXd grad = X.transpose() * (w - p) - penalty.cwiseProduct(beta);
    Eigen::VectorXd step = H.ldlt().solve(grad);
    if (!step.allFinite()) {
      H.diagonal().array() += 1e-6;
      step = H.ldlt().solve(grad);
    }
    beta += step;
    m.iterations = it;
    if (step.cwiseAbs().maxCoeff() < opts.tolerance) {
      m.converged = true;
      break;
    }
  }
  m.intercept = beta(0);
  m.coefficients.assign(beta.data() + 1, beta.data() + d);
  m.clip = opts.clip;
  return m;
}

}  // namespace

PropensityModel fit_propensity(std::span<const UnitRecord> obs, const PropensityFitOptions& opts) {
  if (obs.empty()) throw Error(ErrorKind::estimation_infeasible, "propensity: no units");
  const std::size_t p = obs.front().covariates.size();
  std::size_t treated = 0;
  for (const auto& u : obs) {
    if (u.covariates.size() != p) throw Error(ErrorKind::invalid_argument, "propensity: ragged covariates");
    treated += static_cast<std::size_t>(u.w);
  }
  if (treated == 0 || treated == obs.size())
    throw Error(ErrorKind::estimation_infeasible, "propensity: need at least one treated and one control unit");

  const auto n = static_cast<Eigen::Index>(obs.size());
  Eigen::MatrixXd X(n, static_cast<Eigen::Index>(p + 1));
  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& u = obs[static_cast<std::size_t>(i)];
    X(i, 0) = 1.0;
    for (std::size_t j = 0; j < p; ++j) X(i, static_cast<Eigen::Index>(j + 1)) = u.covariates[j];
    w(i) = u.w;
  }

  auto separated = [&](const PropensityModel& m) {
    for (const auto& u : obs) {
      double eta = m.linear_predictor(u.covariates);
      if ((u.w == 1 && eta <= 0.0) || (u.w == 0 && eta >= 0.0)) return false;
    }
    return true;
  };

  PropensityModel m = irls(X, w, opts.ridge, opts);
  if (!m.converged || separated(m)) {
    m = irls(X, w, opts.separation_ridge, opts);
    m.separation_warning = true;
  }
  return m;
}

std::vector<UnitRecord> drop_covariate(std::span<const UnitRecord> units, std::size_t drop) {
  std::vector<UnitRecord> out(units.begin(), units.end());
  for (auto& u : out) {
    if (drop >= u.covariates.size()) throw Error(ErrorKind::invalid_argument, "drop_covariate: index out of range");
    u.covariates.erase(u.covariates.begin() + static_cast<std::ptrdiff_t>(drop));
  }
  return out;
}

DiagonalCovariance TrialEstimate::covariance() const {
  if (degenerate())
    throw Error(ErrorKind::degenerate_moments,
                "degenerate moments: zero variance estimate in " + stratum_label(degenerate_strata.front()));
  return DiagonalCovariance(variances);
}

TrialEstimate difference_in_means(std::span<const UnitRecord> trial, std::size_t strata) {
  std::vector<ArmSums> t(strata), c(strata);
  for (const auto& u : trial) {
    if (u.stratum >= strata) throw Error(ErrorKind::invalid_argument, "difference_in_means: stratum out of range");
    auto& s = u.w ? t[u.stratum] : c[u.stratum];
    s.n += 1;
    s.sum += u.y;
    s.sum_sq += static_cast<double>(u.y) * u.y;
  }
  std::vector<double> tau(strata), var(strata);
  TrialEstimate est;
  for (std::size_t k = 0; k < strata; ++k) {
    if (t[k].n < 2 || c[k].n < 2)
      throw Error(ErrorKind::estimation_infeasible,
                  "estimation infeasible: " + stratum_label(k) + " needs >= 2 treated and >= 2 control units");
    auto arm = [](const ArmSums& s, double& mean, double& v) {
      mean = s.sum / s.n;
      double ss = s.sum_sq - s.n * mean * mean;
      v = std::max(ss, 0.0) / (s.n - 1.0);
    };
    double mt, vt, mc, vc;
    arm(t[k], mt, vt);
    arm(c[k], mc, vc);
    tau[k] = mt - mc;
    var[k] = vt / t[k].n + vc / c[k].n;
    if (!(var[k] > 0.0)) est.degenerate_strata.push_back(k);
  }
  est.tau_r = EffectVector(std::move(tau));
  est.variances = std::move(var);
  return est;
}

namespace {

void hajek_arms(std::span<const UnitRecord> obs, const PropensityModel& model, std::size_t strata,
                std::vector<double>& mu_t, std::vector<double>& mu_c) {
  std::vector<ArmSums> t(strata), c(strata);
  for (const auto& u : obs) {
    if (u.stratum >= strata) throw Error(ErrorKind::invalid_argument, "sipw: stratum out of range");
    double e = model.probability(u.covariates);
    if (u.w) {
      t[u.stratum].n += 1.0 / e;
      t[u.stratum].sum += u.y / e;
    } else {
      c[u.stratum].n += 1.0 / (1.0 - e);
      c[u.stratum].sum += u.y / (1.0 - e);
    }
  }
  mu_t.resize(strata);
  mu_c.resize(strata);
  for (std::size_t k = 0; k < strata; ++k) {
    if (t[k].n == 0.0 || c[k].n == 0.0)
      throw Error(ErrorKind::estimation_infeasible, "estimation infeasible: empty arm in " + stratum_label(k));
    mu_t[k] = t[k].sum / t[k].n;
    mu_c[k] = c[k].sum / c[k].n;
  }
}

}  // namespace

EffectVector sipw_estimates(std::span<const UnitRecord> obs, const PropensityModel& model, std::size_t strata) {
  std::vector<double> mt, mc;
  hajek_arms(obs, model, strata, mt, mc);
  std::vector<double> tau(strata);
  for (std::size_t k = 0; k < strata; ++k) tau[k] = mt[k] - mc[k];
  return EffectVector(std::move(tau));
}

StratumMoments sipw_moments(std::span<const UnitRecord> obs, const PropensityModel& model, std::size_t strata) {
  std::vector<double> mt, mc;
  hajek_arms(obs, model, strata, mt, mc);
  for (auto* v : {&mt, &mc})
    for (double& x : *v) x = std::clamp(x, 0.0, 1.0);
  return StratumMoments::binary(std::move(mt), std::move(mc));
}

const char* to_string(ShrinkageFamily f) {
  switch (f) {
    case ShrinkageFamily::unbiased: return "unbiased";
    case ShrinkageFamily::kappa2: return "kappa2";
    case ShrinkageFamily::kappa2_plus: return "kappa2_plus";
    case ShrinkageFamily::kappa1: return "kappa1";
    case ShrinkageFamily::kappa1_plus: return "kappa1_plus";
    case ShrinkageFamily::delta1: return "delta1";
    case ShrinkageFamily::delta1_plus: return "delta1_plus";
    case ShrinkageFamily::delta2: return "delta2";
    case ShrinkageFamily::delta2_plus: return "delta2_plus";
  }
  return "unbiased";
}

ShrinkageFamily parse_family(const std::string& s) {
  for (auto f : {ShrinkageFamily::unbiased, ShrinkageFamily::kappa2, ShrinkageFamily::kappa2_plus,
                 ShrinkageFamily::kappa1, ShrinkageFamily::kappa1_plus, ShrinkageFamily::delta1,
                 ShrinkageFamily::delta1_plus, ShrinkageFamily::delta2, ShrinkageFamily::delta2_plus}) {
    if (s == to_string(f)) return f;
  }
  throw Error(ErrorKind::configuration, "unknown shrinkage family '" + s + "'");
}

bool is_positive_part(ShrinkageFamily f) {
  return f == ShrinkageFamily::kappa2_plus || f == ShrinkageFamily::kappa1_plus ||
         f == ShrinkageFamily::delta1_plus || f == ShrinkageFamily::delta2_plus;
}

bool shrink_into(ShrinkageFamily family, std::span<const double> tau_r, std::span<const double> tau_o,
                 std::span<const double> sigma2, std::span<double> out) {
  const std::size_t k = tau_r.size();
  if (tau_o.size() != k || sigma2.size() != k || out.size() != k)
    throw Error(ErrorKind::invalid_argument, "shrink: length mismatch");
  if (family == ShrinkageFamily::unbiased) {
    std::copy(tau_r.begin(), tau_r.end(), out.begin());
    return true;
  }
  const bool plus = is_positive_part(family);
  const bool delta = family == ShrinkageFamily::delta1 || family == ShrinkageFamily::delta1_plus ||
                     family == ShrinkageFamily::delta2 || family == ShrinkageFamily::delta2_plus;
  if (delta && k < 3) throw Error(ErrorKind::invalid_argument, "shrink: delta families need K >= 3");

  double quad = 0.0;   // data-dependent denominator
  double scale = 0.0;  // numerator constant
  switch (family) {
    case ShrinkageFamily::kappa2:
    case ShrinkageFamily::kappa2_plus:
      for (std::size_t i = 0; i < k; ++i) {
        double d = tau_r[i] - tau_o[i];
        quad += sigma2[i] * sigma2[i] * d * d;
        scale += sigma2[i] * sigma2[i];
      }
      break;
    case ShrinkageFamily::kappa1:
    case ShrinkageFamily::kappa1_plus:
      for (std::size_t i = 0; i < k; ++i) {
        double d = tau_r[i] - tau_o[i];
        quad += d * d;
        scale += sigma2[i];
      }
      break;
    case ShrinkageFamily::delta1:
    case ShrinkageFamily::delta1_plus:
      for (std::size_t i = 0; i < k; ++i) {
        double d = tau_r[i] - tau_o[i];
        quad += d * d / sigma2[i];
      }
      scale = static_cast<double>(k) - 2.0;
      break;
    case ShrinkageFamily::delta2:
    case ShrinkageFamily::delta2_plus:
      for (std::size_t i = 0; i < k; ++i) {
        double d = tau_r[i] - tau_o[i];
        quad += d * d / (sigma2[i] * sigma2[i]);
      }
      scale = static_cast<double>(k) - 2.0;
      break;
    default: break;
  }
  if (!(quad > 0.0) || !std::isfinite(quad)) {
    std::copy(tau_o.begin(), tau_o.end(), out.begin());
    return false;
  }
  const double ratio = scale / quad;
  for (std::size_t i = 0; i < k; ++i) {
    double coef = 1.0;
    switch (family) {
      case ShrinkageFamily::kappa2:
      case ShrinkageFamily::kappa2_plus: coef = 1.0 - ratio * sigma2[i]; break;
      case ShrinkageFamily::delta2:
      case ShrinkageFamily::delta2_plus: coef = 1.0 - ratio / sigma2[i]; break;
      default: coef = 1.0 - ratio; break;
    }
    if (plus && coef < 0.0) coef = 0.0;
    out[i] = tau_o[i] + coef * (tau_r[i] - tau_o[i]);
  }
  return true;
}

ShrinkResult shrink(ShrinkageFamily family, const EffectVector& tau_r, const EffectVector& tau_o,
                    const DiagonalCovariance& sigma) {
  std::vector<double> out(tau_r.size());
  bool ok = shrink_into(family, tau_r.values(), tau_o.values(), sigma.diag(), out);
  return {EffectVector(std::move(out)), !ok};
}

bool dominance_condition(std::span<const double> sigma2) {
  double mx = 0.0, sum = 0.0;
  for (double s : sigma2) {
    double s4 = s * s;
    mx = std::max(mx, s4);
    sum += s4;
  }
  return 4.0 * mx < sum;
}

bool dominance_condition(const DiagonalCovariance& sigma) { return dominance_condition(sigma.diag()); }

}  // namespace ebdesign

#include "ebdesign/simulation.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ebdesign/csv.hpp"
#include "ebdesign/parallel.hpp"
#include "ebdesign/rng.hpp"

namespace ebdesign {
namespace {

// Stream tags under the master seed.
enum : std::uint64_t {
  tag_pattern = 1,
  tag_obs_population,
  tag_trial_population,
  tag_obs_effects,
  tag_trial_effects,
  tag_obs_sample,
  tag_bootstrap,
  tag_starts,
  tag_mc,
  tag_replications,
};

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double quantile7_sorted(const std::vector<double>& v, double q) {
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

int band(double v, const std::vector<double>& cuts) {
  int b = 0;
  while (b < static_cast<int>(cuts.size()) && v > cuts[b]) ++b;
  return b;
}

struct EffectCounts {
  std::vector<long long> flips;
  bool feasible = true;
  std::size_t bad_stratum = 0;
};

EffectCounts effect_counts(const SuperPopulation& pop, const std::vector<double>& tau) {
  EffectCounts out;
  out.flips.resize(pop.strata());
  for (std::size_t k = 0; k < pop.strata(); ++k) {
    const auto n = static_cast<double>(pop.members[k].size());
    out.flips[k] = std::llround(std::abs(tau[k]) * n);
    long long ones = 0;
    for (auto i : pop.members[k]) ones += pop.y0[i];
    const long long avail = tau[k] > 0 ? static_cast<long long>(pop.members[k].size()) - ones : ones;
    if (out.flips[k] > avail && out.feasible) {
      out.feasible = false;
      out.bad_stratum = k;
    }
  }
  return out;
}

double d_from_counts(const SuperPopulation& pop, const std::vector<double>& tau, const std::vector<long long>& flips) {
  const auto n = static_cast<double>(pop.size());
  double m0 = 0.0;
  for (auto v : pop.y0) m0 += v;
  m0 /= n;
  double delta = 0.0;
  for (std::size_t k = 0; k < flips.size(); ++k) delta += (tau[k] < 0 ? -1.0 : 1.0) * static_cast<double>(flips[k]);
  delta /= n;
  const double m1 = m0 + delta;
  const double pooled = std::sqrt((m1 * (1.0 - m1) + m0 * (1.0 - m0)) / 2.0);
  return pooled > 0.0 ? std::abs(delta) / pooled : 0.0;
}

// Sums a copy in sorted order so the total does not depend on the order in
// which replications were produced.
double sorted_sum(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

struct TrialScratch {
  std::vector<std::vector<std::uint32_t>> buf;
  explicit TrialScratch(const SuperPopulation& pop) : buf(pop.members) {}
};

// Partial Fisher-Yates over buf; the first `n` entries are the sample in
// random order. Returns the swap positions so they can be undone.
void partial_shuffle(std::vector<std::uint32_t>& buf, std::size_t n, Engine& eng, std::vector<std::size_t>& swaps) {
  swaps.clear();
  const std::size_t size = buf.size();
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t r = j + uniform_index(eng, size - j);
    std::swap(buf[j], buf[r]);
    swaps.push_back(r);
  }
}

void undo_shuffle(std::vector<std::uint32_t>& buf, const std::vector<std::size_t>& swaps) {
  for (std::size_t j = swaps.size(); j-- > 0;) std::swap(buf[j], buf[swaps[j]]);
}

void check_recruitment(const SuperPopulation& pop, const Design& d) {
  if (d.strata() != pop.strata()) throw Error(ErrorKind::invalid_argument, "draw_trial: design has the wrong number of strata");
  for (std::size_t k = 0; k < d.strata(); ++k) {
    if (d.treated(k) < 0 || d.control(k) < 0) throw Error(ErrorKind::invalid_argument, "draw_trial: negative count");
    if (static_cast<std::size_t>(d.treated(k) + d.control(k)) > pop.members[k].size())
      throw Error(ErrorKind::infeasible, "draw_trial: stratum " + std::to_string(k + 1) + " has only " +
                                             std::to_string(pop.members[k].size()) + " units");
  }
}

}  // namespace

const char* to_string(EffectModel m) {
  switch (m) {
    case EffectModel::constant: return "constant";
    case EffectModel::linear: return "linear";
    case EffectModel::quadratic: return "quadratic";
  }
  return "?";
}

EffectModel parse_effect_model(const std::string& s) {
  if (s == "constant") return EffectModel::constant;
  if (s == "linear") return EffectModel::linear;
  if (s == "quadratic") return EffectModel::quadratic;
  throw Error(ErrorKind::configuration, "unknown effect model '" + s + "' (constant, linear, quadratic)");
}

SimConfig::SimConfig() : gamma{std::sqrt(2.0), std::sqrt(2.0), std::sqrt(2.0), 0.0, 0.0} {}

SimConfig SimConfig::paper() { return SimConfig(); }

SimConfig SimConfig::desk() {
  SimConfig c;
  c.superpop_size = 100'000;
  c.reps = 500;
  return c;
}

void SimConfig::validate() const {
  if (superpop_size == 0 || n_obs == 0 || n_r <= 0 || reps <= 0)
    throw Error(ErrorKind::configuration, "simulation: sizes must be positive");
  if (n_obs > superpop_size) throw Error(ErrorKind::configuration, "simulation: n_obs exceeds the super-population");
  if (beta.size() < 2) throw Error(ErrorKind::configuration, "simulation: need at least two covariates to stratify");
  if (gamma.size() != beta.size())
    throw Error(ErrorKind::configuration, "simulation: outcome and propensity coefficient lengths differ");
  if (!(incidence > 0.0 && incidence < 1.0)) throw Error(ErrorKind::configuration, "simulation: incidence must be in (0, 1)");
  if (!(cohens_d > 0.0)) throw Error(ErrorKind::configuration, "simulation: target Cohen's d must be positive");
  for (auto j : unmeasured)
    if (j >= beta.size()) throw Error(ErrorKind::configuration, "simulation: unmeasured covariate out of range");
  if (unmeasured.size() >= beta.size())
    throw Error(ErrorKind::configuration, "simulation: at least one covariate must stay measured");
  guardrails.validate();
  if (!(obs_alpha > 0.0 && obs_alpha < 1.0)) throw Error(ErrorKind::configuration, "simulation: alpha must be in (0, 1)");
}

CovariatePattern covariate_covariance(const SimConfig& config) {
  const std::size_t p = config.covariates();
  Engine eng = stream_engine(config.seed, {tag_pattern});
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(p, p);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = i + 1; j < p; ++j) {
      const double u = uniform01(eng);
      const double v = u < 0.25 ? config.offdiag : (u < 0.5 ? -config.offdiag : 0.0);
      m(i, j) = m(j, i) = v;
    }
  CovariatePattern out;
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) {
    // Clip eigenvalues, then rescale back to unit variances.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(1e-3);
    m = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    Eigen::VectorXd s = m.diagonal().cwiseSqrt().cwiseInverse();
    m = s.asDiagonal() * m * s.asDiagonal();
    out.repaired = true;
  }
  out.matrix.resize(p * p);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j) out.matrix[i * p + j] = m(i, j);
  return out;
}

EffectVector SuperPopulation::tau() const {
  std::vector<double> t(strata());
  for (std::size_t k = 0; k < strata(); ++k) {
    long long s = 0;
    for (auto i : members[k]) s += static_cast<int>(y1[i]) - static_cast<int>(y0[i]);
    t[k] = static_cast<double>(s) / static_cast<double>(members[k].size());
  }
  return EffectVector(std::move(t));
}

StratumMoments SuperPopulation::moments() const {
  std::vector<double> mt(strata()), mc(strata());
  for (std::size_t k = 0; k < strata(); ++k) {
    long long s1 = 0, s0 = 0;
    for (auto i : members[k]) {
      s1 += y1[i];
      s0 += y0[i];
    }
    mt[k] = static_cast<double>(s1) / static_cast<double>(members[k].size());
    mc[k] = static_cast<double>(s0) / static_cast<double>(members[k].size());
  }
  return StratumMoments::binary(std::move(mt), std::move(mc));
}

SuperPopulation generate_superpopulation(const SimConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t n = config.superpop_size, p = config.covariates();
  const auto pattern = covariate_covariance(config);
  Eigen::MatrixXd cov(p, p);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j) cov(i, j) = pattern.matrix[i * p + j];
  const Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(cov).matrixL();

  SuperPopulation pop;
  pop.p = p;
  pop.x.resize(n * p);
  pop.y0.resize(n);
  pop.stratum.resize(n);
  std::vector<double> threshold(n);  // Y(0) = 1 iff intercept > threshold
  Engine eng = stream_engine(seed, {0});
  std::normal_distribution<double> normal;
  std::vector<double> z(p);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : z) v = normal(eng);
    double lin = 0.0;
    for (std::size_t a = 0; a < p; ++a) {
      double xa = 0.0;
      for (std::size_t b = 0; b <= a; ++b) xa += chol(a, b) * z[b];
      pop.x[i * p + a] = xa;
      lin += config.beta[a] * xa;
    }
    const double eps = normal(eng);
    // 1 / (1 + exp(-alpha - beta'x + eps)) > u  <=>  alpha > logit(u) - beta'x + eps
    double u = uniform01(eng);
    if (u <= 0.0) u = 0x1.0p-54;
    threshold[i] = std::log(u / (1.0 - u)) - lin + eps;
  }

  auto incidence = [&](double alpha) {
    std::size_t c = 0;
    for (double t : threshold) c += alpha > t;
    return static_cast<double>(c) / static_cast<double>(n);
  };
  double lo = -60.0, hi = 60.0;
  if (!(incidence(lo) < config.incidence && incidence(hi) > config.incidence))
    throw Error(ErrorKind::configuration, "simulation: cannot bracket the outcome intercept");
  double alpha = 0.0, rate = 0.0;
  for (int it = 0; it < 200; ++it) {
    alpha = 0.5 * (lo + hi);
    rate = incidence(alpha);
    if (std::abs(rate - config.incidence) < 2e-4) break;
    (rate < config.incidence ? lo : hi) = alpha;
  }
  if (std::abs(rate - config.incidence) > 0.002)
    throw Error(ErrorKind::configuration, "simulation: intercept bisection missed the target incidence");
  pop.intercept = alpha;
  for (std::size_t i = 0; i < n; ++i) pop.y0[i] = alpha > threshold[i];
  pop.y1 = pop.y0;

  std::vector<double> c1(n), c2(n);
  for (std::size_t i = 0; i < n; ++i) {
    c1[i] = pop.x[i * p];
    c2[i] = pop.x[i * p + 1];
  }
  std::sort(c1.begin(), c1.end());
  std::sort(c2.begin(), c2.end());
  pop.x1_cuts = {quantile7_sorted(c1, 0.25), quantile7_sorted(c1, 0.50)};
  pop.x2_cuts = {quantile7_sorted(c2, 0.25), quantile7_sorted(c2, 0.50), quantile7_sorted(c2, 0.75)};
  pop.members.assign(SimConfig::strata(), {});
  for (std::size_t i = 0; i < n; ++i) {
    const int k = band(pop.x[i * p], pop.x1_cuts) * 4 + band(pop.x[i * p + 1], pop.x2_cuts);
    pop.stratum[i] = static_cast<std::uint16_t>(k);
    pop.members[k].push_back(static_cast<std::uint32_t>(i));
  }
  for (std::size_t k = 0; k < pop.strata(); ++k)
    if (pop.members[k].size() < 2)
      throw Error(ErrorKind::configuration, "simulation: stratum " + std::to_string(k + 1) + " is nearly empty");
  return pop;
}

std::vector<double> nominal_effects(EffectModel model, double T, std::size_t strata) {
  std::vector<double> tau(strata);
  const auto K = static_cast<double>(strata);
  for (std::size_t i = 0; i < strata; ++i) {
    const double r = static_cast<double>(i + 1) / K;
    switch (model) {
      case EffectModel::constant: tau[i] = T; break;
      case EffectModel::linear: tau[i] = -T * r; break;
      case EffectModel::quadratic: tau[i] = T * r * r; break;
    }
  }
  return tau;
}

double cohens_d(const SuperPopulation& pop) {
  const auto n = static_cast<double>(pop.size());
  double m0 = 0.0, m1 = 0.0;
  for (std::size_t i = 0; i < pop.size(); ++i) {
    m0 += pop.y0[i];
    m1 += pop.y1[i];
  }
  m0 /= n;
  m1 /= n;
  const double pooled = std::sqrt((m1 * (1.0 - m1) + m0 * (1.0 - m0)) / 2.0);
  return pooled > 0.0 ? (m1 - m0) / pooled : 0.0;
}

EffectCalibration calibrate_effect_scale(const SuperPopulation& pop, EffectModel model, double target_d) {
  if (!(target_d > 0.0)) throw Error(ErrorKind::invalid_argument, "calibrate_effect_scale: target must be positive");
  const auto unit = nominal_effects(model, 1.0, pop.strata());
  // Largest T for which every stratum has enough units of the right kind.
  double t_max = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < pop.strata(); ++k) {
    long long ones = 0;
    for (auto i : pop.members[k]) ones += pop.y0[i];
    const auto n = static_cast<double>(pop.members[k].size());
    const double avail = unit[k] > 0 ? n - static_cast<double>(ones) : static_cast<double>(ones);
    t_max = std::min(t_max, avail / (std::abs(unit[k]) * n));
  }
  auto d_at = [&](double T) {
    auto tau = nominal_effects(model, T, pop.strata());
    auto counts = effect_counts(pop, tau);
    return counts.feasible ? d_from_counts(pop, tau, counts.flips) : -1.0;
  };
  const double d_max = d_at(t_max);
  if (d_max < target_d - 1e-3) {
    std::ostringstream msg;
    msg << "calibration: Cohen's d of " << target_d << " is unattainable for the " << to_string(model)
        << " effect model; the largest attainable |d| is " << std::setprecision(4) << d_max;
    throw Error(ErrorKind::calibration, msg.str());
  }
  double lo = 0.0, hi = t_max;
  EffectCalibration out;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double d = d_at(mid);
    out = {mid, d};
    if (std::abs(d - target_d) < 1e-4) break;
    (d < target_d ? lo : hi) = mid;
  }
  if (std::abs(out.d - target_d) > 1e-3)
    throw Error(ErrorKind::calibration, "calibration: bisection on the effect scale did not reach the target d");
  return out;
}

SuperPopulation assign_treatment_effects(SuperPopulation pop, EffectModel model, double T, std::uint64_t seed) {
  const auto tau = nominal_effects(model, T, pop.strata());
  auto counts = effect_counts(pop, tau);
  if (!counts.feasible)
    throw Error(ErrorKind::infeasible, "assign_treatment_effects: stratum " + std::to_string(counts.bad_stratum + 1) +
                                           " lacks enough units to realize its effect");
  pop.y1 = pop.y0;
  for (std::size_t k = 0; k < pop.strata(); ++k) {
    if (counts.flips[k] == 0) continue;
    const std::uint8_t from = tau[k] > 0 ? 0 : 1;
    std::vector<std::uint32_t> pool;
    for (auto i : pop.members[k])
      if (pop.y0[i] == from) pool.push_back(i);
    Engine eng = stream_engine(seed, {k});
    std::vector<std::size_t> swaps;
    partial_shuffle(pool, static_cast<std::size_t>(counts.flips[k]), eng, swaps);
    for (long long j = 0; j < counts.flips[k]; ++j) pop.y1[pool[j]] = 1 - from;
  }
  return pop;
}

std::vector<UnitRecord> draw_observational(const SuperPopulation& pop, std::size_t n_obs,
                                           std::span<const double> gamma,
                                           std::span<const std::size_t> unmeasured, std::uint64_t seed) {
  if (n_obs > pop.size()) throw Error(ErrorKind::invalid_argument, "draw_observational: n_obs exceeds the population");
  if (gamma.size() != pop.p) throw Error(ErrorKind::invalid_argument, "draw_observational: gamma has the wrong length");
  std::vector<bool> hidden(pop.p, false);
  for (auto j : unmeasured) hidden.at(j) = true;
  Engine eng = stream_engine(seed, {0});
  std::vector<UnitRecord> out;
  out.reserve(n_obs);
  std::size_t needed = n_obs;
  // Selection sampling keeps the sample in population order.
  for (std::size_t i = 0; i < pop.size() && needed > 0; ++i) {
    const std::size_t left = pop.size() - i;
    if (uniform01(eng) * static_cast<double>(left) >= static_cast<double>(needed)) continue;
    --needed;
    UnitRecord u;
    u.unit_id = static_cast<std::int64_t>(i);
    const auto x = pop.covariates(i);
    double lin = 0.0;
    for (std::size_t a = 0; a < pop.p; ++a) {
      lin += gamma[a] * x[a];
      if (!hidden[a]) u.covariates.push_back(x[a]);
    }
    u.w = uniform01(eng) < logistic(lin);
    u.y = u.w ? pop.y1[i] : pop.y0[i];
    u.stratum = pop.stratum[i];
    out.push_back(std::move(u));
  }
  return out;
}

std::vector<UnitRecord> draw_trial(const SuperPopulation& pop, const Design& design, std::uint64_t seed) {
  check_recruitment(pop, design);
  std::vector<UnitRecord> out;
  out.reserve(static_cast<std::size_t>(design.total()));
  std::vector<std::size_t> swaps;
  for (std::size_t k = 0; k < design.strata(); ++k) {
    auto buf = pop.members[k];
    Engine eng = stream_engine(seed, {k});
    const auto nt = static_cast<std::size_t>(design.treated(k));
    partial_shuffle(buf, nt + static_cast<std::size_t>(design.control(k)), eng, swaps);
    for (std::size_t j = 0; j < swaps.size(); ++j) {
      const auto i = buf[j];
      UnitRecord u;
      u.unit_id = i;
      const auto x = pop.covariates(i);
      u.covariates.assign(x.begin(), x.end());
      u.w = j < nt;
      u.y = u.w ? pop.y1[i] : pop.y0[i];
      u.stratum = k;
      out.push_back(std::move(u));
    }
  }
  return out;
}

double StudyResult::mean(std::size_t d, std::size_t f) const {
  std::vector<double> v(losses.begin() + static_cast<std::ptrdiff_t>((d * families.size() + f) * reps()),
                        losses.begin() + static_cast<std::ptrdiff_t>((d * families.size() + f + 1) * reps()));
  return sorted_sum(std::move(v)) / static_cast<double>(reps());
}

double StudyResult::std_error(std::size_t d, std::size_t f) const {
  const double m = mean(d, f);
  std::vector<double> sq(reps());
  for (std::size_t r = 0; r < reps(); ++r) {
    const double e = loss(d, f, r) - m;
    sq[r] = e * e;
  }
  const auto n = static_cast<double>(reps());
  return n > 1 ? std::sqrt(sorted_sum(std::move(sq)) / (n - 1.0) / n) : 0.0;
}

std::size_t StudyResult::design_index(const std::string& name) const {
  auto it = std::find(designs.begin(), designs.end(), name);
  if (it == designs.end()) throw Error(ErrorKind::invalid_argument, "study: no design named '" + name + "'");
  return static_cast<std::size_t>(it - designs.begin());
}

std::size_t StudyResult::family_index(ShrinkageFamily f) const {
  auto it = std::find(families.begin(), families.end(), f);
  if (it == families.end())
    throw Error(ErrorKind::invalid_argument, std::string("study: family ") + to_string(f) + " was not run");
  return static_cast<std::size_t>(it - families.begin());
}

StudyResult run_replications(const SuperPopulation& trial_pop, const EffectVector& tau_o,
                             std::span<const NamedDesign> designs, std::span<const ShrinkageFamily> families,
                             std::span<const int> rep_ids, std::uint64_t seed, unsigned threads) {
  const std::size_t K = trial_pop.strata();
  if (tau_o.size() != K) throw Error(ErrorKind::invalid_argument, "study: tau_o has the wrong length");
  for (const auto& nd : designs) {
    check_recruitment(trial_pop, nd.design);
    for (std::size_t k = 0; k < K; ++k)
      if (nd.design.treated(k) < 2 || nd.design.control(k) < 2)
        throw Error(ErrorKind::infeasible, "study: design '" + nd.name + "' needs at least 2 units per cell");
  }
  StudyResult s;
  for (const auto& nd : designs) s.designs.push_back(nd.name);
  s.families.assign(families.begin(), families.end());
  s.rep_ids.assign(rep_ids.begin(), rep_ids.end());
  const std::size_t D = designs.size(), F = families.size(), R = rep_ids.size();
  s.losses.assign(D * F * R, 0.0);
  s.dominance.assign(D * R, 0);
  const auto tau = trial_pop.tau();

  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(R, 1))));
  parallel_for(workers, workers, [&](std::size_t w) {
    TrialScratch scratch(trial_pop);
    std::vector<std::size_t> swaps;
    std::vector<double> tau_r(K), sigma2(K), est(K);
    for (std::size_t r = w; r < R; r += workers) {
      for (std::size_t d = 0; d < D; ++d) {
        const auto& design = designs[d].design;
        Engine eng = stream_engine(seed, {static_cast<std::uint64_t>(rep_ids[r])});
        for (std::size_t k = 0; k < K; ++k) {
          const auto nt = static_cast<std::size_t>(design.treated(k));
          const auto nc = static_cast<std::size_t>(design.control(k));
          auto& buf = scratch.buf[k];
          partial_shuffle(buf, nt + nc, eng, swaps);
          double s1 = 0.0, s0 = 0.0;
          for (std::size_t j = 0; j < nt; ++j) s1 += trial_pop.y1[buf[j]];
          for (std::size_t j = nt; j < nt + nc; ++j) s0 += trial_pop.y0[buf[j]];
          undo_shuffle(buf, swaps);
          const double ft = static_cast<double>(nt), fc = static_cast<double>(nc);
          tau_r[k] = s1 / ft - s0 / fc;
          const double vt = (s1 - s1 * s1 / ft) / (ft - 1.0);
          const double vc = (s0 - s0 * s0 / fc) / (fc - 1.0);
          sigma2[k] = vt / ft + vc / fc;
        }
        s.dominance[d * R + r] = dominance_condition(sigma2);
        for (std::size_t f = 0; f < F; ++f) {
          shrink_into(families[f], tau_r, tau_o.values(), sigma2, est);
          double loss = 0.0;
          for (std::size_t k = 0; k < K; ++k) {
            const double e = est[k] - tau[k];
            loss += e * e;
          }
          s.losses[(d * F + f) * R + r] = loss / static_cast<double>(K);
        }
      }
    }
  });
  return s;
}

StudyResult run_study(const SuperPopulation& trial_pop, const EffectVector& tau_o,
                      std::span<const NamedDesign> designs, std::span<const ShrinkageFamily> families, int reps,
                      std::uint64_t seed, unsigned threads) {
  if (reps <= 0) throw Error(ErrorKind::invalid_argument, "run_study: reps must be positive");
  std::vector<int> ids(static_cast<std::size_t>(reps));
  std::iota(ids.begin(), ids.end(), 0);
  return run_replications(trial_pop, tau_o, designs, families, ids, seed, threads);
}

const RiskCell& RiskTable::at(ShrinkageFamily f, const std::string& design) const {
  auto fi = std::find(families.begin(), families.end(), f);
  auto di = std::find(designs.begin(), designs.end(), design);
  if (fi == families.end() || di == designs.end())
    throw Error(ErrorKind::invalid_argument, "risk table: no cell for " + std::string(to_string(f)) + "/" + design);
  return at(static_cast<std::size_t>(fi - families.begin()), static_cast<std::size_t>(di - designs.begin()));
}

RiskTable make_risk_table(const StudyResult& s) {
  const double ref = s.mean(s.design_index("equal"), s.family_index(ShrinkageFamily::unbiased));
  if (!(ref > 0.0)) throw Error(ErrorKind::degenerate_moments, "risk table: reference risk is zero");
  RiskTable t;
  t.designs = s.designs;
  t.families = s.families;
  for (std::size_t f = 0; f < s.families.size(); ++f)
    for (std::size_t d = 0; d < s.designs.size(); ++d) {
      const double m = s.mean(d, f);
      t.cells.push_back({100.0 * m / ref, m, s.std_error(d, f)});
    }
  return t;
}

void write_risk_table_csv(std::ostream& os, const RiskTable& t) {
  os << "estimator,design,risk_pct,mean_loss,std_error\n";
  for (std::size_t f = 0; f < t.families.size(); ++f)
    for (std::size_t d = 0; d < t.designs.size(); ++d) {
      const auto& c = t.at(f, d);
      os << to_string(t.families[f]) << ',' << t.designs[d] << ',' << csv::format_double(c.percent) << ','
         << csv::format_double(c.mean) << ',' << csv::format_double(c.std_error) << '\n';
    }
}

void write_risk_table_text(std::ostream& os, const RiskTable& t) {
  os << std::left << std::setw(12) << "estimator";
  for (const auto& d : t.designs) os << std::right << std::setw(12) << d;
  os << '\n';
  for (std::size_t f = 0; f < t.families.size(); ++f) {
    os << std::left << std::setw(12) << to_string(t.families[f]);
    for (std::size_t d = 0; d < t.designs.size(); ++d) {
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(1) << t.at(f, d).percent << '%';
      os << std::right << std::setw(12) << cell.str();
    }
    os << '\n';
  }
}

SimulationOutcome run_simulation(const SimConfig& config, const std::vector<std::string>& design_names) {
  config.validate();
  if (std::find(design_names.begin(), design_names.end(), "equal") == design_names.end())
    throw Error(ErrorKind::configuration, "simulate: the design list must include 'equal' (the reference design)");
  SimulationOutcome out;
  out.config = config;
  const std::uint64_t seed = config.seed;
  const std::size_t K = SimConfig::strata();

  out.covariance_repaired = covariate_covariance(config).repaired;
  if (out.covariance_repaired) out.warnings.push_back("covariate covariance was repaired to be positive definite");
  auto obs_pop = generate_superpopulation(config, stream_key(seed, {tag_obs_population}));
  auto trial_pop = generate_superpopulation(config, stream_key(seed, {tag_trial_population}));
  out.calibration = calibrate_effect_scale(obs_pop, config.effects, config.cohens_d);
  obs_pop = assign_treatment_effects(std::move(obs_pop), config.effects, out.calibration.T,
                                     stream_key(seed, {tag_obs_effects}));
  trial_pop = assign_treatment_effects(std::move(trial_pop), config.effects, out.calibration.T,
                                       stream_key(seed, {tag_trial_effects}));
  out.tau = trial_pop.tau();

  auto obs = draw_observational(obs_pop, config.n_obs, config.gamma, config.unmeasured,
                                stream_key(seed, {tag_obs_sample}));
  out.propensity = fit_propensity(obs);
  if (out.propensity.separation_warning) out.warnings.push_back("propensity fit hit separation; ridge refit used");
  out.tau_o = sipw_estimates(obs, out.propensity, K);
  out.v_hat = sipw_moments(obs, out.propensity, K);

  const int ss = config.guardrails.ss_min;
  GuardrailContext base_ctx{config.guardrails,
                            baseline_design(config.guardrails.baseline, out.v_hat, config.n_r, ss), out.v_hat,
                            std::nullopt};
  const BootstrapOptions boot{config.bootstrap, stream_key(seed, {tag_bootstrap}), config.threads};
  auto bounds_at = [&](double g) {
    return sensitivity_bounds(obs, out.propensity, K, g, config.obs_alpha, boot);
  };
  if (config.guardrails.needs_bounds()) base_ctx.bounds = bounds_at(1.0);

  SearchSettings search;
  search.threads = config.threads;
  search.mc_seed = stream_key(seed, {tag_mc});
  auto optimize = [&](const std::string& name, const DesignObjective& obj, GuardrailContext ctx) {
    DesignRecord rec;
    rec.name = name;
    rec.optimized = true;
    rec.search = multi_start_optimize(obj, ctx, config.n_r, config.extra_starts,
                                      stream_key(seed, {tag_starts}), search);
    rec.design = rec.search->best.design;
    rec.guardrails = std::move(ctx);
    return rec;
  };

  std::vector<NamedDesign> named;
  for (const auto& name : design_names) {
    DesignRecord rec;
    if (name == "equal") {
      rec = {name, equal_allocation(K, config.n_r), false, base_ctx, std::nullopt};
    } else if (name == "neyman") {
      rec = {name, neyman_allocation(out.v_hat, config.n_r, ss), false, base_ctx, std::nullopt};
    } else if (name == "naive") {
      rec = optimize(name, {out.v_hat, EffectVector::zeros(K), ShrinkageFamily::kappa2}, base_ctx);
    } else if (name == "oracle") {
      std::vector<double> xi(K);
      for (std::size_t k = 0; k < K; ++k) xi[k] = out.tau[k] - out.tau_o[k];
      rec = optimize(name, {trial_pop.moments(), EffectVector(std::move(xi)), ShrinkageFamily::kappa2}, base_ctx);
    } else if (name.rfind("robust:", 0) == 0) {
      double g = 0.0;
      try {
        std::size_t used = 0;
        g = std::stod(name.substr(7), &used);
        if (used != name.size() - 7) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw Error(ErrorKind::configuration, "simulate: cannot parse gamma in design '" + name + "'");
      }
      auto ctx = base_ctx;
      ctx.bounds = bounds_at(g);
      auto wc = worst_case_error(*ctx.bounds, out.tau_o);
      rec = optimize(name, {wc.v_prime, wc.xi_prime, ShrinkageFamily::kappa2}, std::move(ctx));
    } else {
      throw Error(ErrorKind::configuration,
                  "simulate: unknown design '" + name + "' (equal, neyman, naive, robust:<gamma>, oracle)");
    }
    named.push_back({rec.name, rec.design});
    out.designs.push_back(std::move(rec));
  }

  const std::vector<ShrinkageFamily> families{ShrinkageFamily::unbiased, ShrinkageFamily::kappa2,
                                              ShrinkageFamily::kappa2_plus};
  out.study = run_study(trial_pop, out.tau_o, named, families, config.reps, stream_key(seed, {tag_replications}),
                        config.threads);
  out.table = make_risk_table(out.study);
  return out;
}

void write_designs_csv(std::ostream& os, const SimulationOutcome& o) {
  os << "design,stratum,n_treated,n_control\n";
  for (const auto& r : o.designs)
    for (std::size_t k = 0; k < r.design.strata(); ++k)
      os << r.name << ',' << k + 1 << ',' << r.design.treated(k) << ',' << r.design.control(k) << '\n';
}

void write_guardrail_audit(std::ostream& os, const SimulationOutcome& o) {
  os << "design,optimized,min_count,ss_min,detach_mode,detach_ratio,delta_d,detach_ok,risk_mode,risk_ok,floor_ok,"
        "passed\n";
  for (const auto& r : o.designs) {
    const auto rep = check_guardrails(r.design, r.guardrails);
    const auto& c = r.guardrails.config;
    os << r.name << ',' << (r.optimized ? 1 : 0) << ',' << r.design.min_count() << ',' << c.ss_min << ','
       << to_string(c.detachability) << ','
       << (std::isnan(rep.detach_ratio) ? std::string() : csv::format_double(rep.detach_ratio)) << ','
       << csv::format_double(c.delta_d) << ',' << rep.detach_ok << ',' << to_string(c.risk_reduction) << ','
       << rep.risk_ok << ',' << rep.floor_ok << ',' << rep.passed() << '\n';
  }
}

}  // namespace ebdesign

#include "ebdesign/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <tuple>

#include "ebdesign/csv.hpp"
#include "ebdesign/parallel.hpp"
#include "ebdesign/rng.hpp"

namespace ebdesign {
namespace {

void check_gamma(double gamma) {
  if (!(gamma >= 1.0) || !std::isfinite(gamma))
    throw Error(ErrorKind::invalid_argument, "sensitivity: gamma must be >= 1");
}

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::invalid_argument, "sensitivity: alpha must be in (0, 1)");
}

// Units of one arm sorted by decreasing y, with the offsets where y changes.
// Every extreme vertex gives one weight bound to a prefix of this order and
// the other bound to the rest, with the cut at a group boundary.
struct SortedArm {
  std::vector<std::size_t> order;
  std::vector<double> y, lo, hi;
  std::vector<std::size_t> cuts;  // includes 0 and n

  SortedArm(std::span<const ArmObservation> arm, double gamma) {
    const std::size_t n = arm.size();
    order.resize(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return arm[a].y > arm[b].y; });
    y.resize(n);
    lo.resize(n);
    hi.resize(n);
    cuts.push_back(0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& u = arm[order[i]];
      y[i] = u.y;
      std::tie(lo[i], hi[i]) = weight_box(u.p, gamma);
      if (i > 0 && y[i] != y[i - 1]) cuts.push_back(i);
    }
    cuts.push_back(n);
  }

  // Best cut for the max (high-y prefix at the upper bound) or the min
  // (high-y prefix at the lower bound). `count` weights each unit; empty
  // means 1.
  std::pair<std::size_t, double> best_cut(bool maximize, std::span<const double> count) const {
    const std::size_t n = y.size();
    auto c = [&](std::size_t i) { return count.empty() ? 1.0 : count[i]; };
    const auto& pre = maximize ? hi : lo;
    const auto& post = maximize ? lo : hi;
    double post_wy = 0.0, post_w = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      post_wy += c(i) * post[i] * y[i];
      post_w += c(i) * post[i];
    }
    double pre_wy = 0.0, pre_w = 0.0;
    std::size_t best = 0;
    double best_v = post_wy / post_w;
    for (std::size_t g = 1; g < cuts.size(); ++g) {
      for (std::size_t i = cuts[g - 1]; i < cuts[g]; ++i) {
        pre_wy += c(i) * pre[i] * y[i];
        pre_w += c(i) * pre[i];
        post_wy -= c(i) * post[i] * y[i];
        post_w -= c(i) * post[i];
      }
      const double v = (pre_wy + post_wy) / (pre_w + post_w);
      if (maximize ? v > best_v : v < best_v) {
        best_v = v;
        best = g;
      }
    }
    return {best, best_v};
  }

  // Value of the vertex with the cut at group g, summed in the original
  // unit order so it reproduces a direct evaluation of that vertex.
  double vertex_value(std::size_t g, bool maximize, std::span<const ArmObservation> arm) const {
    std::vector<double> w(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      const bool in_prefix = i < cuts[g];
      w[order[i]] = (in_prefix == maximize) ? hi[i] : lo[i];
    }
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < arm.size(); ++i) {
      num += w[i] * arm[i].y;
      den += w[i];
    }
    return num / den;
  }
};

double quantile7(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

MeanRange counted_extrema(const SortedArm& s, std::span<const double> count) {
  return {s.best_cut(false, count).second, s.best_cut(true, count).second};
}

}  // namespace

std::pair<double, double> weight_box(double p, double gamma) {
  check_gamma(gamma);
  if (!(p > 0.0 && p < 1.0)) throw Error(ErrorKind::invalid_argument, "sensitivity: probabilities must be in (0, 1)");
  const double odds = (1.0 - p) / p;
  return {1.0 + odds / gamma, 1.0 + odds * gamma};
}

MeanRange sipw_extrema(std::span<const ArmObservation> arm, double gamma) {
  check_gamma(gamma);
  if (arm.empty()) throw Error(ErrorKind::invalid_argument, "sipw_extrema: empty arm");
  SortedArm s(arm, gamma);
  MeanRange out;
  for (bool maximize : {false, true}) {
    const std::size_t g = s.best_cut(maximize, {}).first;
    // Rounding can make an adjacent cut win by an ulp; check both sides.
    double v = s.vertex_value(g, maximize, arm);
    for (std::size_t alt : {g - 1, g + 1}) {
      if (alt >= s.cuts.size()) continue;
      const double a = s.vertex_value(alt, maximize, arm);
      v = maximize ? std::max(v, a) : std::min(v, a);
    }
    (maximize ? out.max : out.min) = v;
  }
  return out;
}

Interval gamma_interval(std::span<const ArmObservation> arm, double gamma, double alpha,
                        const BootstrapOptions& opts) {
  check_gamma(gamma);
  check_alpha(alpha);
  if (opts.resamples < 200) throw Error(ErrorKind::invalid_argument, "gamma_interval: need at least 200 resamples");
  if (arm.empty()) throw Error(ErrorKind::invalid_argument, "gamma_interval: empty arm");
  SortedArm s(arm, gamma);
  const std::size_t n = arm.size();
  // Position of original unit i in the sorted order.
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i) rank[s.order[i]] = i;

  const auto reps = static_cast<std::size_t>(opts.resamples);
  std::vector<double> mins(reps), maxs(reps);
  parallel_for(reps, opts.threads, [&](std::size_t b) {
    Engine eng = stream_engine(opts.seed, {b});
    std::vector<double> count(n, 0.0);
    for (std::size_t d = 0; d < n; ++d) count[rank[uniform_index(eng, n)]] += 1.0;
    auto r = counted_extrema(s, count);
    mins[b] = r.min;
    maxs[b] = r.max;
  });
  return {quantile7(std::move(mins), alpha / 2.0), quantile7(std::move(maxs), 1.0 - alpha / 2.0)};
}

SensitivityBounds::SensitivityBounds(double gamma, double alpha, std::vector<Interval> treated,
                                     std::vector<Interval> control)
    : gamma_(gamma), alpha_(alpha), treated_(std::move(treated)), control_(std::move(control)) {
  check_gamma(gamma);
  check_alpha(alpha);
  if (treated_.size() != control_.size())
    throw Error(ErrorKind::invalid_argument, "sensitivity bounds: arm interval counts differ");
  for (const auto* arm : {&treated_, &control_})
    for (const auto& iv : *arm)
      if (!(iv.lower >= 0.0 && iv.lower <= iv.upper && iv.upper <= 1.0))
        throw Error(ErrorKind::invalid_argument, "sensitivity bounds: need 0 <= lower <= upper <= 1");
}

SensitivityBounds sensitivity_bounds(std::span<const UnitRecord> obs, const PropensityModel& model,
                                     std::size_t strata, double gamma, double alpha,
                                     const BootstrapOptions& opts) {
  check_gamma(gamma);
  check_alpha(alpha);
  if (opts.resamples < 200) throw Error(ErrorKind::invalid_argument, "sensitivity: need at least 200 resamples");

  std::vector<std::vector<ArmObservation>> arms(2 * strata);
  for (const auto& u : obs) {
    if (u.stratum >= strata) throw Error(ErrorKind::invalid_argument, "sensitivity: stratum out of range");
    const double e = model.probability(u.covariates);
    if (u.w)
      arms[2 * u.stratum].push_back({static_cast<double>(u.y), e});
    else
      arms[2 * u.stratum + 1].push_back({static_cast<double>(u.y), 1.0 - e});
  }
  for (std::size_t k = 0; k < strata; ++k)
    for (int a = 0; a < 2; ++a)
      if (arms[2 * k + a].empty())
        throw Error(ErrorKind::estimation_infeasible, "sensitivity: stratum " + std::to_string(k + 1) + " has no " +
                                                          arm_name(static_cast<Arm>(a)) + " units");

  std::vector<Interval> treated(strata), control(strata);
  const auto reps = static_cast<std::size_t>(opts.resamples);
  for (std::size_t k = 0; k < strata; ++k) {
    const SortedArm st(arms[2 * k], gamma), sc(arms[2 * k + 1], gamma);
    const std::size_t nt = arms[2 * k].size(), nc = arms[2 * k + 1].size(), n = nt + nc;
    std::vector<std::size_t> rank_t(nt), rank_c(nc);
    for (std::size_t i = 0; i < nt; ++i) rank_t[st.order[i]] = i;
    for (std::size_t i = 0; i < nc; ++i) rank_c[sc.order[i]] = i;

    std::vector<double> tmin(reps), tmax(reps), cmin(reps), cmax(reps);
    parallel_for(reps, opts.threads, [&](std::size_t b) {
      Engine eng = stream_engine(opts.seed, {k, b});
      std::vector<double> ct(nt), cc(nc);
      for (int attempt = 0;; ++attempt) {
        if (attempt == 100)
          throw Error(ErrorKind::estimation_infeasible,
                      "sensitivity: stratum " + std::to_string(k + 1) + " resamples keep leaving an arm empty");
        std::fill(ct.begin(), ct.end(), 0.0);
        std::fill(cc.begin(), cc.end(), 0.0);
        std::size_t drawn_t = 0;
        for (std::size_t d = 0; d < n; ++d) {
          const std::size_t j = uniform_index(eng, n);
          if (j < nt) {
            ct[rank_t[j]] += 1.0;
            ++drawn_t;
          } else {
            cc[rank_c[j - nt]] += 1.0;
          }
        }
        if (drawn_t > 0 && drawn_t < n) break;
      }
      auto rt = counted_extrema(st, ct);
      auto rc = counted_extrema(sc, cc);
      tmin[b] = rt.min;
      tmax[b] = rt.max;
      cmin[b] = rc.min;
      cmax[b] = rc.max;
    });
    treated[k] = {quantile7(std::move(tmin), alpha / 2.0), quantile7(std::move(tmax), 1.0 - alpha / 2.0)};
    control[k] = {quantile7(std::move(cmin), alpha / 2.0), quantile7(std::move(cmax), 1.0 - alpha / 2.0)};
  }
  return SensitivityBounds(gamma, alpha, std::move(treated), std::move(control));
}

void write_bounds_csv(std::ostream& os, const SensitivityBounds& b) {
  os << "stratum,arm,lower,upper\n";
  for (std::size_t k = 0; k < b.strata(); ++k) {
    os << k + 1 << ",t," << csv::format_double(b.treated(k).lower) << ',' << csv::format_double(b.treated(k).upper)
       << '\n';
    os << k + 1 << ",c," << csv::format_double(b.control(k).lower) << ',' << csv::format_double(b.control(k).upper)
       << '\n';
  }
}

SensitivityBounds read_bounds_csv(std::istream& is, double gamma, double alpha) {
  auto t = csv::Table::read(is);
  t.require({"stratum", "arm", "lower", "upper"});
  const auto cs = t.column("stratum"), ca = t.column("arm"), cl = t.column("lower"), cu = t.column("upper");
  std::size_t strata = 0;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const long long k = t.integer(r, cs);
    if (k < 1) throw Error(ErrorKind::schema, "bounds csv: stratum must be >= 1");
    strata = std::max(strata, static_cast<std::size_t>(k));
  }
  std::vector<Interval> tr(strata), co(strata);
  std::vector<int> seen(2 * strata, 0);
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto k = static_cast<std::size_t>(t.integer(r, cs)) - 1;
    const std::string& arm = t.cell(r, ca);
    int a;
    if (arm == "t")
      a = 0;
    else if (arm == "c")
      a = 1;
    else
      throw Error(ErrorKind::schema, "bounds csv: arm must be t or c, got '" + arm + "'");
    if (seen[2 * k + a]++) throw Error(ErrorKind::schema, "bounds csv: duplicate row for stratum " + std::to_string(k + 1));
    (a == 0 ? tr : co)[k] = {t.number(r, cl), t.number(r, cu)};
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (!seen[i])
      throw Error(ErrorKind::schema, "bounds csv: missing " + std::string(i % 2 ? "control" : "treated") +
                                         " row for stratum " + std::to_string(i / 2 + 1));
  return SensitivityBounds(gamma, alpha, std::move(tr), std::move(co));
}

WorstCaseSpec worst_case_error(const SensitivityBounds& bounds, const EffectVector& tau_o) {
  const std::size_t k = bounds.strata();
  if (tau_o.size() != k) throw Error(ErrorKind::invalid_argument, "worst_case_error: tau_o length mismatch");
  std::vector<double> xi(k), mt(k), mc(k);
  for (std::size_t i = 0; i < k; ++i) {
    const auto& t = bounds.treated(i);
    const auto& c = bounds.control(i);
    const double first = std::abs(t.upper - c.lower - tau_o[i]);
    const double second = std::abs(t.lower - c.upper - tau_o[i]);
    if (first >= second) {
      xi[i] = first;
      mt[i] = t.upper;
      mc[i] = c.lower;
    } else {
      xi[i] = second;
      mt[i] = t.lower;
      mc[i] = c.upper;
    }
  }
  return {EffectVector(std::move(xi)), StratumMoments::binary(std::move(mt), std::move(mc))};
}

GammaCalibration calibrate_gamma(std::span<const UnitRecord> obs, const PropensityFitOptions& opts) {
  if (obs.empty()) throw Error(ErrorKind::invalid_argument, "calibrate_gamma: no units");
  const std::size_t p = obs.front().covariates.size();
  if (p < 2) throw Error(ErrorKind::invalid_argument, "calibrate_gamma: need at least 2 covariates");
  const auto full = fit_propensity(obs, opts);
  GammaCalibration out;
  out.per_covariate.assign(p, 0.0);
  std::vector<double> reduced_x(p - 1);
  for (std::size_t j = 0; j < p; ++j) {
    PropensityModel reduced;
    try {
      reduced = fit_propensity(drop_covariate(obs, j), opts);
    } catch (const Error& e) {
      out.warnings.push_back("covariate x" + std::to_string(j + 1) + " skipped: " + e.what());
      continue;
    }
    double worst = 0.0;
    for (const auto& u : obs) {
      std::size_t m = 0;
      for (std::size_t i = 0; i < p; ++i)
        if (i != j) reduced_x[m++] = u.covariates[i];
      worst = std::max(worst, std::abs(full.linear_predictor(u.covariates) - reduced.linear_predictor(reduced_x)));
    }
    out.per_covariate[j] = std::exp(worst);
    out.gamma = std::max(out.gamma, out.per_covariate[j]);
  }
  return out;
}

}  // namespace ebdesign

#include "ebdesign/designer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ebdesign/csv.hpp"
#include "ebdesign/parallel.hpp"
#include "ebdesign/risk_engine.hpp"
#include "ebdesign/rng.hpp"

namespace ebdesign {
namespace {

// Rounds nonnegative quotas summing to `total` so the result sums to total:
// floor everything, then hand out the remaining units by decreasing
// fractional part (lower index first on ties).
std::vector<int> largest_remainder(const std::vector<double>& quota, int total) {
  std::vector<int> out(quota.size());
  std::vector<std::pair<double, std::size_t>> frac;
  int used = 0;
  for (std::size_t i = 0; i < quota.size(); ++i) {
    const double f = std::floor(quota[i] + 1e-9);
    out[i] = static_cast<int>(f);
    used += out[i];
    frac.push_back({quota[i] - f, i});
  }
  std::stable_sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t j = 0; used < total && j < frac.size(); ++j, ++used) ++out[frac[j].second];
  return out;
}

double bernoulli_var(double mu) { return mu * (1.0 - mu); }

// Smallest and largest mu(1 - mu) over an interval.
double var_min(const Interval& iv) { return std::min(bernoulli_var(iv.lower), bernoulli_var(iv.upper)); }
double var_max_point(const Interval& iv) {
  if (iv.lower <= 0.5 && 0.5 <= iv.upper) return 0.5;
  return std::abs(iv.lower - 0.5) < std::abs(iv.upper - 0.5) ? iv.lower : iv.upper;
}
double var_min_point(const Interval& iv) {
  return bernoulli_var(iv.lower) <= bernoulli_var(iv.upper) ? iv.lower : iv.upper;
}

std::string cell_label(std::size_t flat) {
  auto c = Cell::from_index(flat);
  return std::to_string(c.stratum + 1) + (c.arm == Arm::treated ? "t" : "c");
}

bool exact_family(ShrinkageFamily f) {
  return f == ShrinkageFamily::unbiased || f == ShrinkageFamily::kappa2 || f == ShrinkageFamily::kappa1;
}

struct Verdict {
  bool floor_ok = true, detach_ok = true, risk_ok = true;
  double ratio = std::numeric_limits<double>::quiet_NaN();
};

Verdict evaluate(const Design& d, const GuardrailContext& ctx) {
  const auto& cfg = ctx.config;
  Verdict v;
  v.floor_ok = d.min_count() >= cfg.ss_min;
  const std::size_t k = d.strata();

  if (cfg.detachability == GuardrailMode::point) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double vt = ctx.point_moments.var_t(i), vc = ctx.point_moments.var_c(i);
      num += vt / d.treated(i) + vc / d.control(i);
      den += vt / ctx.baseline.treated(i) + vc / ctx.baseline.control(i);
    }
    v.ratio = num / den;
    v.detach_ok = !(num >= cfg.delta_d * den);
  } else if (cfg.detachability == GuardrailMode::robust) {
    std::vector<double> num(2 * k), den(2 * k);
    std::vector<Interval> boxes(2 * k);
    for (std::size_t c = 0; c < 2 * k; ++c) {
      num[c] = 1.0 / d.count(c);
      den[c] = 1.0 / ctx.baseline.count(c);
      boxes[c] = ctx.bounds->interval(Cell::from_index(c));
    }
    v.ratio = dinkelbach_max_ratio(num, den, boxes).value;
    v.detach_ok = !(v.ratio >= cfg.delta_d);
  }

  if (cfg.risk_reduction == GuardrailMode::point) {
    double peak = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double s = ctx.point_moments.var_t(i) / d.treated(i) + ctx.point_moments.var_c(i) / d.control(i);
      peak = std::max(peak, s * s);
      sum += s * s;
    }
    v.risk_ok = !(4.0 * peak > sum);
  } else if (cfg.risk_reduction == GuardrailMode::robust) {
    double peak = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const auto& t = ctx.bounds->treated(i);
      const auto& c = ctx.bounds->control(i);
      const double lo = var_min(t) / d.treated(i) + var_min(c) / d.control(i);
      const double hi = bernoulli_var(var_max_point(t)) / d.treated(i) + bernoulli_var(var_max_point(c)) / d.control(i);
      peak = std::max(peak, lo * lo);
      sum += hi * hi;
    }
    v.risk_ok = !(4.0 * peak > sum);
  }
  return v;
}

}  // namespace

Design equal_allocation(std::size_t strata, int n_r) {
  if (strata == 0) throw Error(ErrorKind::invalid_argument, "equal_allocation: no strata");
  const int cells = static_cast<int>(2 * strata);
  if (n_r < cells)
    throw Error(ErrorKind::infeasible, "equal_allocation: n_r = " + std::to_string(n_r) + " is below 2K = " +
                                           std::to_string(cells));
  std::vector<int> out(cells, n_r / cells);
  for (int i = 0; i < n_r % cells; ++i) ++out[i];
  return Design::from_cells(std::move(out));
}

Design neyman_allocation(const StratumMoments& moments, int n_r, int ss_min, std::vector<std::string>* warnings) {
  const std::size_t cells = 2 * moments.strata();
  if (cells == 0) throw Error(ErrorKind::invalid_argument, "neyman_allocation: no strata");
  if (ss_min < 1) throw Error(ErrorKind::invalid_argument, "neyman_allocation: ss_min must be >= 1");
  if (static_cast<long long>(n_r) < static_cast<long long>(cells) * ss_min)
    throw Error(ErrorKind::infeasible, "neyman_allocation: n_r = " + std::to_string(n_r) +
                                           " cannot give every cell " + std::to_string(ss_min) + " units");
  std::vector<double> sd(cells);
  for (std::size_t c = 0; c < cells; ++c) sd[c] = std::sqrt(moments.variance(Cell::from_index(c)));
  if (std::all_of(sd.begin(), sd.end(), [](double s) { return s == 0.0; })) {
    if (warnings) warnings->push_back("neyman_allocation: all variances are zero; using equal allocation");
    return equal_allocation(moments.strata(), n_r);
  }

  std::vector<bool> pinned(cells);
  for (std::size_t c = 0; c < cells; ++c) pinned[c] = sd[c] == 0.0;
  std::vector<double> quota(cells);
  for (;;) {
    const auto n_pinned = static_cast<int>(std::count(pinned.begin(), pinned.end(), true));
    const double free_total = n_r - static_cast<double>(n_pinned) * ss_min;
    double s = 0.0;
    for (std::size_t c = 0; c < cells; ++c)
      if (!pinned[c]) s += sd[c];
    bool changed = false;
    for (std::size_t c = 0; c < cells; ++c) {
      if (pinned[c]) continue;
      quota[c] = free_total * sd[c] / s;
      if (quota[c] < ss_min) {
        pinned[c] = true;
        changed = true;
      }
    }
    if (!changed) break;
  }

  std::vector<double> free_quota;
  int pinned_units = 0;
  for (std::size_t c = 0; c < cells; ++c) {
    if (pinned[c])
      pinned_units += ss_min;
    else
      free_quota.push_back(quota[c]);
  }
  auto rounded = largest_remainder(free_quota, n_r - pinned_units);
  std::vector<int> out(cells);
  for (std::size_t c = 0, j = 0; c < cells; ++c) out[c] = pinned[c] ? ss_min : rounded[j++];
  return Design::from_cells(std::move(out));
}

Design baseline_design(BaselineRule rule, const StratumMoments& moments, int n_r, int ss_min) {
  if (rule == BaselineRule::neyman) return neyman_allocation(moments, n_r, ss_min);
  auto d = equal_allocation(moments.strata(), n_r);
  if (d.min_count() < ss_min)
    throw Error(ErrorKind::infeasible, "equal allocation leaves a cell below ss_min = " + std::to_string(ss_min));
  return d;
}

Design random_design(std::size_t strata, int n_r, int ss_min, std::uint64_t seed) {
  const std::size_t cells = 2 * strata;
  const long long spare = n_r - static_cast<long long>(cells) * ss_min;
  if (cells == 0 || spare < 0) throw Error(ErrorKind::infeasible, "random_design: n_r too small for ss_min");
  Engine eng = stream_engine(seed, {0x5241ULL});
  std::vector<double> g(cells);
  double total = 0.0;
  for (auto& x : g) {
    x = -std::log1p(-uniform01(eng));
    total += x;
  }
  std::vector<double> quota(cells);
  for (std::size_t c = 0; c < cells; ++c) quota[c] = ss_min + static_cast<double>(spare) * g[c] / total;
  return Design::from_cells(largest_remainder(quota, n_r));
}

RatioResult dinkelbach_max_ratio(std::span<const double> num, std::span<const double> den,
                                 std::span<const Interval> boxes) {
  const std::size_t n = boxes.size();
  if (num.size() != n || den.size() != n)
    throw Error(ErrorKind::invalid_argument, "dinkelbach: coefficient and box counts differ");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(num[i] >= 0.0) || !(den[i] >= 0.0))
      throw Error(ErrorKind::invalid_argument, "dinkelbach: coefficients must be nonnegative");
    if (!(boxes[i].lower >= 0.0 && boxes[i].lower <= boxes[i].upper && boxes[i].upper <= 1.0))
      throw Error(ErrorKind::invalid_argument, "dinkelbach: boxes must satisfy 0 <= lower <= upper <= 1");
  }
  auto f = [&](const std::vector<double>& mu, std::span<const double> c) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += c[i] * bernoulli_var(mu[i]);
    return s;
  };

  RatioResult out;
  out.argmax.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.argmax[i] = var_max_point(boxes[i]);
  double g = f(out.argmax, den);
  if (!(g > 0.0)) throw Error(ErrorKind::invalid_argument, "dinkelbach: denominator vanishes on the whole box");
  double lambda = f(out.argmax, num) / g;

  std::vector<double> mu(n);
  for (out.iterations = 1; out.iterations <= 200; ++out.iterations) {
    for (std::size_t i = 0; i < n; ++i) {
      const double coef = num[i] - lambda * den[i];
      mu[i] = coef >= 0.0 ? var_max_point(boxes[i]) : var_min_point(boxes[i]);
    }
    const double fn = f(mu, num), fd = f(mu, den);
    if (std::abs(fn - lambda * fd) < 1e-10) {
      out.value = lambda;
      return out;
    }
    if (!(fd > 0.0)) {
      out.value = std::numeric_limits<double>::infinity();
      out.argmax = mu;
      return out;
    }
    lambda = fn / fd;
    out.argmax = mu;
  }
  throw Error(ErrorKind::infeasible, "dinkelbach: no convergence in 200 iterations");
}

void GuardrailContext::validate() const {
  config.validate();
  const std::size_t k = baseline.strata();
  if (point_moments.strata() != k)
    throw Error(ErrorKind::configuration, "guardrails: baseline and moments disagree on the number of strata");
  if (config.needs_bounds()) {
    if (!bounds) throw Error(ErrorKind::configuration, "guardrails: robust modes need sensitivity bounds");
    if (bounds->strata() != k)
      throw Error(ErrorKind::configuration, "guardrails: bounds and baseline disagree on the number of strata");
  }
  if (config.detachability != GuardrailMode::off && baseline.min_count() < 1)
    throw Error(ErrorKind::configuration, "guardrails: baseline design has an empty cell");
}

GuardrailReport check_guardrails(const Design& candidate, const GuardrailContext& ctx) {
  ctx.validate();
  if (candidate.strata() != ctx.baseline.strata())
    throw Error(ErrorKind::invalid_argument, "check_guardrails: candidate has the wrong number of strata");
  GuardrailReport r;
  std::ostringstream detail;
  if (candidate.min_count() < ctx.config.ss_min) {
    r.floor_ok = false;
    r.risk_ok = ctx.config.risk_reduction == GuardrailMode::off;
    r.detach_ok = ctx.config.detachability == GuardrailMode::off;
    detail << "min_count=" << candidate.min_count() << " < ss_min=" << ctx.config.ss_min << "; ";
    if (candidate.min_count() < 1) {
      // Variance ratios are undefined with an empty cell.
      detail << "empty cell";
      r.detail = detail.str();
      r.detach_ratio = std::numeric_limits<double>::infinity();
      return r;
    }
  }
  auto v = evaluate(candidate, ctx);
  r.floor_ok = v.floor_ok;
  r.detach_ok = v.detach_ok;
  r.risk_ok = v.risk_ok;
  r.detach_ratio = v.ratio;
  detail << "floor " << (r.floor_ok ? "ok" : "fail");
  detail << "; detachability " << to_string(ctx.config.detachability);
  if (ctx.config.detachability != GuardrailMode::off)
    detail << " ratio=" << csv::format_double(v.ratio) << (r.detach_ok ? " ok" : " fail");
  detail << "; risk-reduction " << to_string(ctx.config.risk_reduction);
  if (ctx.config.risk_reduction != GuardrailMode::off) detail << (r.risk_ok ? " ok" : " fail");
  r.detail = detail.str();
  return r;
}

NeighborSet swap_neighbors(const Design& design, const GuardrailContext& ctx) {
  ctx.validate();
  NeighborSet out;
  const std::size_t cells = design.cell_count();
  for (std::size_t from = 0; from < cells; ++from) {
    for (std::size_t to = 0; to < cells; ++to) {
      if (to == from) continue;
      if (design.count(from) - 1 < ctx.config.ss_min) {
        ++out.rejected_floor;
        continue;
      }
      Design d = design.with_move(from, to);
      auto v = evaluate(d, ctx);
      if (!v.floor_ok) {
        ++out.rejected_floor;
      } else if (!v.detach_ok) {
        ++out.rejected_detach;
      } else if (!v.risk_ok) {
        ++out.rejected_risk;
      } else {
        out.moves.push_back({from, to});
        out.designs.push_back(std::move(d));
      }
    }
  }
  return out;
}

double design_risk(const Design& d, const DesignObjective& obj, const SearchSettings& settings) {
  RiskQuery q{obj.family, design_covariance(d, obj.moments), obj.xi};
  if (exact_family(obj.family)) return risk_exact(q, settings.quadrature).value;
  return mc_risk(q, settings.mc_draws, settings.mc_seed).mean;
}

long long GreedyResult::rejected() const {
  return std::accumulate(rejected_per_iteration.begin(), rejected_per_iteration.end(), 0LL);
}

GreedyResult greedy_optimize(const Design& start, const DesignObjective& obj, const GuardrailContext& ctx,
                             const SearchSettings& settings) {
  ctx.validate();
  if (obj.moments.strata() != start.strata() || obj.xi.size() != start.strata())
    throw Error(ErrorKind::invalid_argument, "greedy_optimize: objective and design disagree on K");
  if (!check_guardrails(start, ctx).passed())
    throw Error(ErrorKind::infeasible, "greedy_optimize: start design violates the guardrails");
  const int cap = settings.max_iterations > 0 ? settings.max_iterations
                                              : start.total() * static_cast<int>(start.cell_count());

  GreedyResult r;
  r.design = start;
  r.risk = design_risk(start, obj, settings);
  r.risk_path.push_back(r.risk);
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> risks;
  std::vector<char> failed;
  for (;;) {
    if (r.iterations >= cap)
      throw Error(ErrorKind::infeasible, "greedy_optimize: no convergence within " + std::to_string(cap) +
                                             " iterations (last risk " + csv::format_double(r.risk) + ")");
    ++r.iterations;
    auto nb = swap_neighbors(r.design, ctx);
    r.rejected_per_iteration.push_back(nb.rejected());
    risks.assign(nb.designs.size(), inf);
    failed.assign(nb.designs.size(), 0);
    parallel_for(nb.designs.size(), settings.threads, [&](std::size_t i) {
      try {
        risks[i] = design_risk(nb.designs[i], obj, settings);
        if (std::isnan(risks[i])) risks[i] = inf;
      } catch (const Error&) {
        failed[i] = 1;
      }
    });
    r.failed_evaluations += std::count(failed.begin(), failed.end(), 1);
    std::size_t best = nb.designs.size();
    for (std::size_t i = 0; i < nb.designs.size(); ++i)
      if (best == nb.designs.size() ? risks[i] < inf : risks[i] < risks[best]) best = i;
    if (best == nb.designs.size() || !(risks[best] < r.risk)) break;
    r.design = std::move(nb.designs[best]);
    r.risk = risks[best];
    r.risk_path.push_back(r.risk);
    r.moves.push_back(nb.moves[best]);
  }
  return r;
}

MultiStartResult multi_start_optimize(const DesignObjective& obj, const GuardrailContext& ctx, int n_r,
                                      int extra_starts, std::uint64_t seed, const SearchSettings& settings) {
  ctx.validate();
  const std::size_t k = obj.moments.strata();
  const int ss = ctx.config.ss_min;
  std::vector<std::pair<std::string, Design>> starts;
  auto add = [&](std::string label, auto make) {
    try {
      starts.emplace_back(label, make());
    } catch (const Error& e) {
      // A start that cannot be built is reported with the guardrail skips.
      starts.emplace_back(label + ": " + e.what(), Design());
    }
  };
  add("equal", [&] { return baseline_design(BaselineRule::equal, obj.moments, n_r, 1); });
  // Neyman under the point moments the guardrails are measured against, so
  // with a Neyman baseline this start always clears detachability.
  add("neyman", [&] { return neyman_allocation(ctx.point_moments, n_r, ss); });
  for (int i = 0; i < extra_starts; ++i)
    add("random" + std::to_string(i + 1), [&] { return random_design(k, n_r, ss, stream_key(seed, {std::uint64_t(i)})); });

  MultiStartResult out;
  for (auto& [label, d] : starts) {
    if (d.cell_count() == 0) {
      out.skipped.push_back(label);
      continue;
    }
    auto rep = check_guardrails(d, ctx);
    if (!rep.passed()) {
      out.skipped.push_back(label + " (" + rep.detail + ")");
      continue;
    }
    auto g = greedy_optimize(d, obj, ctx, settings);
    out.labels.push_back(label);
    out.runs.push_back(std::move(g));
  }
  if (out.runs.empty()) {
    std::string why;
    for (const auto& s : out.skipped) why += (why.empty() ? "" : "; ") + s;
    throw Error(ErrorKind::infeasible, "multi_start_optimize: every start violates the guardrails: " + why);
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < out.runs.size(); ++i)
    if (out.runs[i].risk < out.runs[best].risk) best = i;
  out.best = out.runs[best];
  return out;
}

void write_audit(std::ostream& os, const MultiStartResult& r) {
  os << "start,iteration,risk,move_from,move_to,rejected_neighbors\n";
  for (std::size_t s = 0; s < r.runs.size(); ++s) {
    const auto& g = r.runs[s];
    os << r.labels[s] << ",0," << csv::format_double(g.risk_path[0]) << ",,,\n";
    for (std::size_t i = 0; i < g.moves.size(); ++i)
      os << r.labels[s] << ',' << i + 1 << ',' << csv::format_double(g.risk_path[i + 1]) << ','
         << cell_label(g.moves[i].from) << ',' << cell_label(g.moves[i].to) << ',' << g.rejected_per_iteration[i]
         << '\n';
    os << r.labels[s] << ',' << g.iterations << ',' << csv::format_double(g.risk) << ",stop,stop,"
       << g.rejected_per_iteration.back() << '\n';
  }
}

}  // namespace ebdesign

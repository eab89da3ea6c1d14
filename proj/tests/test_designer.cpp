#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "ebdesign/designer.hpp"

using namespace ebdesign;

namespace {

// Every design with `cells` cells, total n and each count >= floor.
void enumerate_designs(std::size_t cells, int n, int floor, const std::function<void(const Design&)>& visit) {
  std::vector<int> c(cells, floor);
  std::function<void(std::size_t, int)> rec = [&](std::size_t i, int left) {
    if (i + 1 == cells) {
      c[i] = floor + left;
      visit(Design::from_cells(c));
      return;
    }
    for (int extra = 0; extra <= left; ++extra) {
      c[i] = floor + extra;
      rec(i + 1, left - extra);
    }
  };
  rec(0, n - floor * static_cast<int>(cells));
}

StratumMoments random_moments(std::mt19937_64& eng, std::size_t K) {
  std::uniform_real_distribution<double> mu(0.05, 0.95);
  std::vector<double> mt(K), mc(K);
  for (std::size_t k = 0; k < K; ++k) {
    mt[k] = mu(eng);
    mc[k] = mu(eng);
  }
  return StratumMoments::binary(mt, mc);
}

GuardrailContext open_context(const StratumMoments& m, int n_r, int ss_min = 1) {
  GuardrailConfig g;
  g.ss_min = ss_min;
  return {g, neyman_allocation(m, n_r, ss_min), m, std::nullopt};
}

double exhaustive_min(const DesignObjective& obj, int n_r, int floor) {
  double best = std::numeric_limits<double>::infinity();
  SearchSettings s;
  enumerate_designs(2 * obj.moments.strata(), n_r, floor,
                    [&](const Design& d) { best = std::min(best, design_risk(d, obj, s)); });
  return best;
}

}  // namespace

TEST(EqualAllocation, SpreadsRemainderToLowCells) {
  auto d = equal_allocation(3, 20);
  EXPECT_EQ(d, Design({4, 3, 3}, {4, 3, 3}));
  EXPECT_EQ(equal_allocation(4, 400), Design({50, 50, 50, 50}, {50, 50, 50, 50}));
  EXPECT_THROW(equal_allocation(3, 5), Error);
}

TEST(Neyman, ProportionalToStandardDeviation) {
  StratumMoments m({0.5, 0.5}, {0.5, 0.5}, {0.09, 0.16}, {0.09, 0.16});
  EXPECT_EQ(neyman_allocation(m, 100), Design({21, 29}, {21, 29}));
}

TEST(Neyman, ZeroVarianceCellsGetTheFloor) {
  StratumMoments m({0.5, 0.5}, {0.5, 0.5}, {0.0, 0.16}, {0.09, 0.16});
  auto d = neyman_allocation(m, 100, 5);
  EXPECT_EQ(d.treated(0), 5);
  EXPECT_EQ(d.total(), 100);
  EXPECT_GE(d.min_count(), 5);
}

TEST(Neyman, AllZeroVariancesFallBackToEqual) {
  StratumMoments m({0, 1}, {0, 1}, {0, 0}, {0, 0});
  std::vector<std::string> warnings;
  auto d = neyman_allocation(m, 40, 1, &warnings);
  EXPECT_EQ(d, equal_allocation(2, 40));
  EXPECT_FALSE(warnings.empty());
}

TEST(Neyman, CloseToRelaxedOptimum) {
  std::mt19937_64 eng(2);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t K = 2 + rep % 6;
    auto m = random_moments(eng, K);
    const int n = 200 + 37 * rep;
    const auto d = neyman_allocation(m, n, 1);
    ASSERT_EQ(d.total(), n);
    double root = 0.0, vmax = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      root += std::sqrt(m.var_t(k)) + std::sqrt(m.var_c(k));
      vmax = std::max({vmax, m.var_t(k), m.var_c(k)});
    }
    const double relaxed = root * root / n / static_cast<double>(K);
    const double actual = l2_risk_of_unbiased(design_covariance(d, m));
    EXPECT_GE(actual, relaxed - 1e-15);
    EXPECT_LE(actual - relaxed, vmax / static_cast<double>(K));
  }
}

TEST(RandomDesign, RespectsFloorAndTotal) {
  auto a = random_design(4, 100, 3, 9);
  auto b = random_design(4, 100, 3, 9);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.total(), 100);
  EXPECT_GE(a.min_count(), 3);
  EXPECT_NE(a, random_design(4, 100, 3, 10));
}

TEST(Dinkelbach, ProportionalFormsAreExact) {
  const std::vector<double> num{0.1}, den{0.05};
  const std::vector<Interval> box{{0.2, 0.4}};
  EXPECT_EQ(dinkelbach_max_ratio(num, den, box).value, 2.0);
}

TEST(Dinkelbach, TwoCoordinateExample) {
  const std::vector<double> num{1, 0}, den{0, 1};
  const std::vector<Interval> box{{0.4, 0.6}, {0.4, 0.6}};
  auto r = dinkelbach_max_ratio(num, den, box);
  EXPECT_NEAR(r.value, 0.25 / 0.24, 1e-12);
  EXPECT_DOUBLE_EQ(r.argmax[0], 0.5);
  EXPECT_TRUE(r.argmax[1] == 0.4 || r.argmax[1] == 0.6);
}

TEST(Dinkelbach, VanishingDenominatorIsAnError) {
  const std::vector<double> num{1, 1}, den{0, 0};
  const std::vector<Interval> box{{0.1, 0.2}, {0.3, 0.4}};
  EXPECT_THROW(dinkelbach_max_ratio(num, den, box), Error);
}

TEST(Dinkelbach, NeverBelowCoarseGrid) {
  std::mt19937_64 eng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 40; ++rep) {
    const std::size_t n = 1 + rep % 3;
    std::vector<double> num(n), den(n);
    std::vector<Interval> box(n);
    for (std::size_t i = 0; i < n; ++i) {
      num[i] = u(eng);
      den[i] = 0.05 + u(eng);
      double a = u(eng), b = u(eng);
      box[i] = {std::min(a, b), std::max(a, b)};
      if (box[i].lower == box[i].upper) box[i].upper = std::min(1.0, box[i].lower + 0.1);
    }
    const double v = dinkelbach_max_ratio(num, den, box).value;
    std::vector<int> idx(n, 0);
    while (true) {
      double f = 0.0, g = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double mu = box[i].lower + (box[i].upper - box[i].lower) * idx[i] / 10.0;
        f += num[i] * mu * (1 - mu);
        g += den[i] * mu * (1 - mu);
      }
      if (g > 0) {
        EXPECT_GE(v + 1e-12, f / g);
      }
      std::size_t i = 0;
      while (i < n && ++idx[i] > 10) idx[i++] = 0;
      if (i == n) break;
    }
  }
}

TEST(Guardrails, BaselineCandidateHasUnitRatio) {
  StratumMoments m = StratumMoments::binary({0.2, 0.5, 0.1}, {0.3, 0.4, 0.05});
  GuardrailConfig g;
  g.delta_d = 1.01;
  g.detachability = GuardrailMode::point;
  auto base = neyman_allocation(m, 120, 1);
  GuardrailContext ctx{g, base, m, std::nullopt};
  auto rep = check_guardrails(base, ctx);
  EXPECT_DOUBLE_EQ(rep.detach_ratio, 1.0);
  EXPECT_TRUE(rep.passed());
  // The failure rule is ratio >= delta_d, so delta_d = 1 rejects the baseline itself.
  ctx.config.delta_d = 1.0;
  EXPECT_FALSE(check_guardrails(base, ctx).detach_ok);
}

TEST(Guardrails, RobustScaleCaseIsExactlyTwo) {
  StratumMoments m = StratumMoments::binary({0.2, 0.5}, {0.3, 0.4});
  SensitivityBounds b(1.2, 0.05, {{0.1, 0.3}, {0.4, 0.7}}, {{0.2, 0.35}, {0.3, 0.5}});
  Design base({20, 40}, {30, 10});
  Design half({10, 20}, {15, 5});
  GuardrailConfig g;
  g.detachability = GuardrailMode::robust;
  for (double delta : {1.5, 2.0, 2.0000001, 3.0}) {
    g.delta_d = delta;
    GuardrailContext ctx{g, base, m, b};
    auto rep = check_guardrails(half, ctx);
    EXPECT_EQ(rep.detach_ratio, 2.0);
    EXPECT_EQ(rep.detach_ok, delta > 2.0);
  }
}

TEST(Guardrails, PointRiskReductionExamples) {
  // Cells of one unit: sigma'^2 = var_t + var_c.
  StratumMoments skewed({0.5, 0.5, 0.5, 0.5}, {0.5, 0.5, 0.5, 0.5}, {0.1, 0.01, 0.01, 0.01}, {0.1, 0.01, 0.01, 0.01});
  StratumMoments flat({0.5, 0.5, 0.5, 0.5, 0.5}, {0.5, 0.5, 0.5, 0.5, 0.5}, std::vector<double>(5, 0.01),
                      std::vector<double>(5, 0.01));
  GuardrailConfig g;
  g.risk_reduction = GuardrailMode::point;
  Design d4({1, 1, 1, 1}, {1, 1, 1, 1}), d5({1, 1, 1, 1, 1}, {1, 1, 1, 1, 1});
  EXPECT_FALSE(check_guardrails(d4, {g, d4, skewed, std::nullopt}).risk_ok);
  EXPECT_TRUE(check_guardrails(d5, {g, d5, flat, std::nullopt}).risk_ok);
}

TEST(Guardrails, RobustModesNeedBounds) {
  StratumMoments m = StratumMoments::binary({0.2, 0.5}, {0.3, 0.4});
  GuardrailConfig g;
  g.risk_reduction = GuardrailMode::robust;
  GuardrailContext ctx{g, equal_allocation(2, 20), m, std::nullopt};
  try {
    ctx.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::configuration);
  }
}

// Wider boxes make robust detachability harder to pass and robust risk
// reduction (box-min against box-max) easier.
TEST(Guardrails, RobustChecksAreMonotoneInIntervalWidth) {
  std::mt19937_64 eng(5);
  std::uniform_real_distribution<double> u(0.05, 0.95), w(0.0, 0.2);
  const std::size_t K = 5;
  int turned = 0;
  for (int rep = 0; rep < 100; ++rep) {
    auto m = random_moments(eng, K);
    std::vector<Interval> t(K), c(K), tw(K), cw(K);
    for (std::size_t k = 0; k < K; ++k) {
      const double a = u(eng), b = u(eng);
      const double ea = w(eng), eb = w(eng);
      t[k] = {std::max(0.0, a - 0.05), std::min(1.0, a + 0.05)};
      c[k] = {std::max(0.0, b - 0.05), std::min(1.0, b + 0.05)};
      tw[k] = {std::max(0.0, t[k].lower - ea), std::min(1.0, t[k].upper + ea)};
      cw[k] = {std::max(0.0, c[k].lower - eb), std::min(1.0, c[k].upper + eb)};
    }
    GuardrailConfig g;
    g.delta_d = 1.3;
    g.detachability = GuardrailMode::robust;
    g.risk_reduction = GuardrailMode::robust;
    auto base = equal_allocation(K, 200);
    auto cand = random_design(K, 200, 5, static_cast<std::uint64_t>(rep));
    auto narrow = check_guardrails(cand, {g, base, m, SensitivityBounds(1.0, 0.05, t, c)});
    auto wide = check_guardrails(cand, {g, base, m, SensitivityBounds(1.5, 0.05, tw, cw)});
    if (!narrow.detach_ok) {
      EXPECT_FALSE(wide.detach_ok);
    }
    if (narrow.risk_ok) {
      EXPECT_TRUE(wide.risk_ok);
    }
    EXPECT_GE(wide.detach_ratio, narrow.detach_ratio);
    turned += narrow.detach_ok && !wide.detach_ok;
  }
  EXPECT_GT(turned, 0);
}

TEST(SwapNeighbors, LexicographicAndFloorAware) {
  StratumMoments m = StratumMoments::binary({0.2, 0.5}, {0.3, 0.4});
  auto ctx = open_context(m, 20, 5);
  Design d({5, 5}, {5, 5});
  auto nb = swap_neighbors(d, ctx);
  EXPECT_TRUE(nb.moves.empty());
  EXPECT_EQ(nb.rejected_floor, 12);

  ctx = open_context(m, 24, 1);
  Design e({6, 6}, {6, 6});
  nb = swap_neighbors(e, ctx);
  ASSERT_EQ(nb.moves.size(), 12u);
  for (std::size_t i = 1; i < nb.moves.size(); ++i) {
    const auto& a = nb.moves[i - 1];
    const auto& b = nb.moves[i];
    EXPECT_TRUE(a.from < b.from || (a.from == b.from && a.to < b.to));
  }
  EXPECT_EQ(nb.designs[0], e.with_move(0, 1));
}

TEST(Greedy, UnbiasedObjectiveReachesExhaustiveOptimum) {
  std::mt19937_64 eng(6);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t K = 2 + rep % 2;
    const int n = 16 + 2 * rep;
    auto m = random_moments(eng, K);
    DesignObjective obj{m, EffectVector::zeros(K), ShrinkageFamily::unbiased};
    auto ctx = open_context(m, n);
    auto res = greedy_optimize(equal_allocation(K, n), obj, ctx, {});
    EXPECT_NEAR(res.risk, exhaustive_min(obj, n, 1), 1e-15);
  }
}

TEST(Greedy, Kappa2AtDeskScaleMatchesExhaustive) {
  std::mt19937_64 eng(7);
  auto m = random_moments(eng, 3);
  DesignObjective obj{m, EffectVector::zeros(3), ShrinkageFamily::kappa2};
  auto ctx = open_context(m, 18);
  auto res = multi_start_optimize(obj, ctx, 18, 3, 1, {});
  EXPECT_NEAR(res.best.risk, exhaustive_min(obj, 18, 1), 1e-12);
}

TEST(Greedy, RiskPathStrictlyDecreasesAndOptimumIsFixedPoint) {
  std::mt19937_64 eng(8);
  auto m = random_moments(eng, 4);
  DesignObjective obj{m, EffectVector({0.1, -0.05, 0.0, 0.2}), ShrinkageFamily::kappa2};
  auto ctx = open_context(m, 60);
  auto res = greedy_optimize(equal_allocation(4, 60), obj, ctx, {});
  for (std::size_t i = 1; i < res.risk_path.size(); ++i) EXPECT_LT(res.risk_path[i], res.risk_path[i - 1]);
  // The last iteration scans the neighborhood and finds no improvement.
  EXPECT_EQ(res.moves.size() + 1, static_cast<std::size_t>(res.iterations));
  EXPECT_EQ(res.rejected_per_iteration.size(), static_cast<std::size_t>(res.iterations));
  auto again = greedy_optimize(res.design, obj, ctx, {});
  EXPECT_EQ(again.design, res.design);
  EXPECT_TRUE(again.moves.empty());
  EXPECT_TRUE(check_guardrails(res.design, ctx).passed());
}

TEST(Greedy, StartMustSatisfyGuardrails) {
  StratumMoments m = StratumMoments::binary({0.2, 0.5, 0.3}, {0.3, 0.4, 0.6});
  auto ctx = open_context(m, 60, 5);
  DesignObjective obj{m, EffectVector::zeros(3), ShrinkageFamily::kappa2};
  try {
    greedy_optimize(Design({1, 20, 20}, {9, 5, 5}), obj, ctx, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::infeasible);
  }
}

TEST(Greedy, MonteCarloObjectiveIsDeterministic) {
  std::mt19937_64 eng(9);
  auto m = random_moments(eng, 3);
  DesignObjective obj{m, EffectVector({0.05, 0.0, -0.1}), ShrinkageFamily::kappa2_plus};
  auto ctx = open_context(m, 30);
  SearchSettings s;
  s.mc_draws = 10000;
  auto a = greedy_optimize(equal_allocation(3, 30), obj, ctx, s);
  s.threads = 3;
  auto b = greedy_optimize(equal_allocation(3, 30), obj, ctx, s);
  EXPECT_EQ(a.design, b.design);
  EXPECT_EQ(a.risk, b.risk);
}

TEST(MultiStart, NoExtraStartsUsesEqualAndNeyman) {
  std::mt19937_64 eng(10);
  auto m = random_moments(eng, 3);
  DesignObjective obj{m, EffectVector({0.1, 0.1, -0.1}), ShrinkageFamily::kappa2};
  auto ctx = open_context(m, 40);
  auto res = multi_start_optimize(obj, ctx, 40, 0, 1, {});
  EXPECT_EQ(res.labels, (std::vector<std::string>{"equal", "neyman"}));
  auto from_neyman = greedy_optimize(neyman_allocation(m, 40, 1), obj, ctx, {});
  EXPECT_LE(res.best.risk, from_neyman.risk);
  EXPECT_EQ(res.best.risk, std::min(res.runs[0].risk, res.runs[1].risk));

  std::stringstream ss;
  write_audit(ss, res);
  std::string header;
  std::getline(ss, header);
  EXPECT_EQ(header, "start,iteration,risk,move_from,move_to,rejected_neighbors");
  std::string line, last;
  while (std::getline(ss, line)) last = line;
  EXPECT_NE(last.find("stop"), std::string::npos);
}

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "ebdesign/simulation.hpp"

using namespace ebdesign;

namespace {

SimConfig small_config(std::size_t n = 60'000) {
  SimConfig c;
  c.superpop_size = n;
  c.n_obs = 4'000;
  c.n_r = 240;
  c.reps = 60;
  c.bootstrap = 200;
  c.extra_starts = 0;
  return c;
}

const SuperPopulation& shared_population() {
  static const SuperPopulation pop = generate_superpopulation(small_config(), 11);
  return pop;
}

double mean_of(const std::vector<std::uint8_t>& v) {
  double s = 0.0;
  for (auto b : v) s += b;
  return s / static_cast<double>(v.size());
}

}  // namespace

TEST(Covariance, UnitDiagonalAndSymmetric) {
  auto pat = covariate_covariance(small_config());
  const std::size_t p = 5;
  ASSERT_EQ(pat.matrix.size(), p * p);
  for (std::size_t i = 0; i < p; ++i) {
    EXPECT_EQ(pat.matrix[i * p + i], 1.0);
    for (std::size_t j = 0; j < p; ++j) {
      EXPECT_EQ(pat.matrix[i * p + j], pat.matrix[j * p + i]);
      if (i != j && !pat.repaired) {
        const double a = std::abs(pat.matrix[i * p + j]);
        EXPECT_TRUE(a == 0.0 || a == 0.1);
      }
    }
  }
}

TEST(SuperPopulation, IncidenceAndStrata) {
  const auto& pop = shared_population();
  const double inc = mean_of(pop.y0);
  EXPECT_GE(inc, 0.098);
  EXPECT_LE(inc, 0.102);
  EXPECT_EQ(pop.y0, pop.y1);
  ASSERT_EQ(pop.strata(), 12u);
  std::size_t total = 0;
  for (std::size_t k = 0; k < pop.strata(); ++k) {
    EXPECT_FALSE(pop.members[k].empty());
    total += pop.members[k].size();
    for (auto i : pop.members[k]) ASSERT_EQ(pop.stratum[i], k);
  }
  EXPECT_EQ(total, pop.size());
}

TEST(SuperPopulation, NoCovariateSignalGivesFlatIncidence) {
  auto cfg = small_config(240'000);
  cfg.beta.assign(5, 0.0);
  auto pop = generate_superpopulation(cfg, 3);
  auto m = pop.moments();
  for (std::size_t k = 0; k < pop.strata(); ++k) EXPECT_NEAR(m.mu_c(k), 0.10, 0.01) << "stratum " << k;
}

TEST(SuperPopulation, DeterministicForSeed) {
  auto cfg = small_config(5'000);
  auto a = generate_superpopulation(cfg, 4);
  auto b = generate_superpopulation(cfg, 4);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.y0, b.y0);
  EXPECT_NE(a.x, generate_superpopulation(cfg, 5).x);
}

TEST(Effects, NominalShapes) {
  EXPECT_EQ(nominal_effects(EffectModel::constant, 0.1, 3), (std::vector<double>{0.1, 0.1, 0.1}));
  auto lin = nominal_effects(EffectModel::linear, 0.2, 4);
  EXPECT_DOUBLE_EQ(lin[0], -0.05);
  EXPECT_DOUBLE_EQ(lin[3], -0.2);
  auto quad = nominal_effects(EffectModel::quadratic, 0.4, 2);
  EXPECT_DOUBLE_EQ(quad[0], 0.1);
  EXPECT_DOUBLE_EQ(quad[1], 0.4);
}

TEST(Effects, FlippedCountsAreExact) {
  const auto& base = shared_population();
  const double T = 0.07;
  auto pop = assign_treatment_effects(base, EffectModel::constant, T, 2);
  auto tau = pop.tau();
  for (std::size_t k = 0; k < pop.strata(); ++k) {
    long diff = 0;
    for (auto i : pop.members[k]) {
      diff += static_cast<long>(pop.y1[i]) - static_cast<long>(pop.y0[i]);
      ASSERT_GE(pop.y1[i], pop.y0[i]);
    }
    const auto nk = static_cast<double>(pop.members[k].size());
    EXPECT_EQ(diff, std::lround(T * nk));
    EXPECT_DOUBLE_EQ(tau[k], static_cast<double>(diff) / nk);
  }
  EXPECT_EQ(pop.y0, base.y0);
}

TEST(Effects, CalibrationHitsTarget) {
  const auto& base = shared_population();
  for (auto model : {EffectModel::constant, EffectModel::quadratic}) {
    auto cal = calibrate_effect_scale(base, model, 0.5);
    auto pop = assign_treatment_effects(base, model, cal.T, 1);
    EXPECT_NEAR(std::abs(cohens_d(pop)), 0.5, 1e-3) << to_string(model);
  }
}

TEST(Effects, UnreachableTargetReportsCeiling) {
  try {
    calibrate_effect_scale(shared_population(), EffectModel::linear, 0.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::calibration);
  }
}

TEST(Observational, SelectionOnCovariates) {
  const auto& pop = shared_population();
  auto cfg = small_config();
  std::vector<std::size_t> none;
  auto obs = draw_observational(pop, 20'000, cfg.gamma, none, 8);
  ASSERT_EQ(obs.size(), 20'000u);
  std::set<std::int64_t> ids;
  double sw = 0, ss = 0, sww = 0, sss = 0, sws = 0;
  for (const auto& u : obs) {
    ids.insert(u.unit_id);
    double s = 0.0;
    for (double v : u.covariates) s += v;
    sw += u.w;
    ss += s;
    sww += u.w * u.w;
    sss += s * s;
    sws += u.w * s;
  }
  EXPECT_EQ(ids.size(), obs.size());
  const double n = static_cast<double>(obs.size());
  const double corr = (sws / n - sw / n * ss / n) /
                      std::sqrt((sww / n - sw * sw / n / n) * (sss / n - ss * ss / n / n));
  EXPECT_GT(corr, 0.2);

  auto model = fit_propensity(obs);
  EXPECT_NEAR(model.intercept, 0.0, 0.15);
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(model.coefficients[j], cfg.gamma[j], 0.15) << "x" << j + 1;

  std::vector<std::size_t> drop{2};
  auto hidden = draw_observational(pop, 20'000, cfg.gamma, drop, 8);
  EXPECT_EQ(hidden[0].covariates.size(), 4u);
  EXPECT_EQ(hidden[0].unit_id, obs[0].unit_id);
}

TEST(Trial, CountsAndRecruitmentLimit) {
  const auto& pop = shared_population();
  auto d = equal_allocation(12, 240);
  auto trial = draw_trial(pop, d, 5);
  ASSERT_EQ(trial.size(), 240u);
  std::vector<int> nt(12, 0), nc(12, 0);
  std::set<std::int64_t> ids;
  for (const auto& u : trial) {
    (u.w ? nt : nc)[u.stratum]++;
    ids.insert(u.unit_id);
    EXPECT_EQ(pop.stratum[static_cast<std::size_t>(u.unit_id)], u.stratum);
  }
  EXPECT_EQ(ids.size(), trial.size());
  for (std::size_t k = 0; k < 12; ++k) {
    EXPECT_EQ(nt[k], d.treated(k));
    EXPECT_EQ(nc[k], d.control(k));
  }
  std::vector<int> cells(24, 10);
  cells[0] = static_cast<int>(pop.members[0].size());
  cells[1] = 1;
  EXPECT_THROW(draw_trial(pop, Design::from_cells(cells), 1), Error);
}

TEST(Trial, DifferenceInMeansIsUnbiasedWithDesignVariance) {
  auto pop = assign_treatment_effects(shared_population(), EffectModel::quadratic, 0.2, 3);
  const auto tau = pop.tau();
  const auto m = pop.moments();
  std::vector<int> cells(24);
  for (std::size_t c = 0; c < 24; ++c) cells[c] = 10 + static_cast<int>(c % 5) * 4;
  const auto d = Design::from_cells(cells);
  const auto sigma = design_covariance(d, m);
  const int draws = 2000;
  std::vector<double> sum(12, 0.0), sum2(12, 0.0);
  for (int r = 0; r < draws; ++r) {
    auto est = difference_in_means(draw_trial(pop, d, 1000 + static_cast<std::uint64_t>(r)), 12);
    for (std::size_t k = 0; k < 12; ++k) {
      sum[k] += est.tau_r[k];
      sum2[k] += est.tau_r[k] * est.tau_r[k];
    }
  }
  for (std::size_t k = 0; k < 12; ++k) {
    const double mean = sum[k] / draws;
    const double var = sum2[k] / draws - mean * mean;
    EXPECT_LT(std::abs(mean - tau[k]), 3.5 * std::sqrt(sigma[k] / draws)) << "stratum " << k;
    EXPECT_NEAR(var / sigma[k], 1.0, 0.15) << "stratum " << k;
  }
}

TEST(Study, DeterministicAndOrderFree) {
  auto pop = assign_treatment_effects(shared_population(), EffectModel::constant, 0.05, 3);
  const auto tau = pop.tau();
  std::vector<double> off(12);
  for (std::size_t k = 0; k < 12; ++k) off[k] = tau[k] + 0.02 * (k % 3 == 0 ? 1.0 : -1.0);
  const EffectVector tau_o(off);
  const std::vector<NamedDesign> designs{{"equal", equal_allocation(12, 240)},
                                         {"neyman", neyman_allocation(pop.moments(), 240, 5)}};
  const std::vector<ShrinkageFamily> fam{ShrinkageFamily::unbiased, ShrinkageFamily::kappa2,
                                         ShrinkageFamily::kappa2_plus};
  auto a = run_study(pop, tau_o, designs, fam, 300, 21);
  auto b = run_study(pop, tau_o, designs, fam, 300, 21, 3);
  EXPECT_EQ(a.losses, b.losses);
  EXPECT_EQ(a.dominance, b.dominance);

  std::vector<int> ids(a.rep_ids.rbegin(), a.rep_ids.rend());
  auto c = run_replications(pop, tau_o, designs, fam, ids, 21);
  for (std::size_t d = 0; d < 2; ++d)
    for (std::size_t f = 0; f < 3; ++f) {
      EXPECT_EQ(a.mean(d, f), c.mean(d, f));
      EXPECT_EQ(a.std_error(d, f), c.std_error(d, f));
    }

  // Shrinkage toward a nearby target beats the unbiased estimator here.
  for (std::size_t d = 0; d < 2; ++d) {
    EXPECT_LE(a.mean(d, 2), a.mean(d, 1));
    EXPECT_LT(a.mean(d, 1), a.mean(d, 0));
  }

  auto t = make_risk_table(a);
  EXPECT_DOUBLE_EQ(t.at(ShrinkageFamily::unbiased, "equal").percent, 100.0);
  auto scaled = a;
  for (auto& l : scaled.losses) l *= 4.0;
  auto ts = make_risk_table(scaled);
  for (std::size_t i = 0; i < t.cells.size(); ++i) EXPECT_NEAR(ts.cells[i].percent, t.cells[i].percent, 1e-12);

  std::stringstream csv;
  write_risk_table_csv(csv, t);
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "estimator,design,risk_pct,mean_loss,std_error");
}

TEST(Study, MissingEqualDesignIsRejectedByTable) {
  StudyResult s;
  s.designs = {"neyman"};
  s.families = {ShrinkageFamily::unbiased};
  s.rep_ids = {0};
  s.losses = {1.0};
  s.dominance = {1};
  EXPECT_THROW(make_risk_table(s), Error);
}

TEST(Simulation, EndToEndSmallRunWithGuardrails) {
  auto cfg = small_config(40'000);
  cfg.reps = 40;
  auto run = [&](unsigned threads) {
    auto c = cfg;
    c.threads = threads;
    return run_simulation(c, {"equal", "neyman", "naive", "robust:1.2"});
  };
  auto a = run(1);
  auto b = run(2);
  EXPECT_EQ(a.study.losses, b.study.losses);
  EXPECT_NEAR(a.calibration.d, 0.5, 1e-3);
  ASSERT_EQ(a.designs.size(), 4u);
  for (const auto& r : a.designs) {
    EXPECT_EQ(r.design.total(), cfg.n_r) << r.name;
    if (!r.optimized) continue;
    auto rep = check_guardrails(r.design, r.guardrails);
    EXPECT_TRUE(rep.passed()) << r.name << ": " << rep.detail;
    EXPECT_GE(r.design.min_count(), cfg.guardrails.ss_min);
  }
  std::stringstream audit;
  write_guardrail_audit(audit, a);
  std::string line;
  std::getline(audit, line);
  int rows = 0;
  while (std::getline(audit, line)) {
    ++rows;
    if (line.find(",1,") == line.find(',')) {
      EXPECT_EQ(line.substr(line.rfind(',') + 1), "1") << line;
    }
  }
  EXPECT_EQ(rows, 4);
}

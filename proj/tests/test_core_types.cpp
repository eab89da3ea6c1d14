#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "ebdesign/core_types.hpp"
#include "ebdesign/csv.hpp"

using namespace ebdesign;

namespace {

StratumMoments moments_from_vars(std::vector<double> vt, std::vector<double> vc) {
  std::vector<double> mu(vt.size(), 0.5);
  return StratumMoments(mu, mu, std::move(vt), std::move(vc));
}

}  // namespace

TEST(DesignCovariance, SingleStratum) {
  auto m = moments_from_vars({0.25}, {0.25});
  auto s = design_covariance(Design({25}, {25}), m);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_DOUBLE_EQ(s[0], 0.02);
}

TEST(DesignCovariance, TwoStrata) {
  auto m = moments_from_vars({0.25, 0.16}, {0.25, 0.16});
  auto s = design_covariance(Design({10, 10}, {10, 10}), m);
  EXPECT_DOUBLE_EQ(s[0], 0.05);
  EXPECT_DOUBLE_EQ(s[1], 0.032);
  EXPECT_NEAR(l2_risk_of_unbiased(s), 0.041, 1e-15);
}

TEST(DesignCovariance, ZeroCountIsDegenerateDesign) {
  auto m = moments_from_vars({0.25, 0.25}, {0.25, 0.25});
  try {
    design_covariance(Design({10, 0}, {10, 10}), m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate_design);
  }
}

TEST(DesignCovariance, ZeroVariancesAreDegenerateMoments) {
  auto m = moments_from_vars({0.0, 0.0}, {0.0, 0.0});
  try {
    design_covariance(Design({10, 10}, {10, 10}), m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate_moments);
  }
}

TEST(DesignCovariance, DoublingCountsHalvesEntries) {
  std::mt19937_64 eng(5);
  std::uniform_real_distribution<double> var(0.01, 0.25);
  std::uniform_int_distribution<int> cnt(1, 40);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> vt(4), vc(4);
    std::vector<int> nt(4), nc(4), nt2(4), nc2(4);
    for (int k = 0; k < 4; ++k) {
      vt[k] = var(eng);
      vc[k] = var(eng);
      nt[k] = cnt(eng);
      nc[k] = cnt(eng);
      nt2[k] = 2 * nt[k];
      nc2[k] = 2 * nc[k];
    }
    auto m = moments_from_vars(vt, vc);
    auto a = design_covariance(Design(nt, nc), m);
    auto b = design_covariance(Design(nt2, nc2), m);
    for (int k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(b[k], a[k] / 2.0);
  }
}

TEST(DesignCovariance, MonotoneInEachCount) {
  auto m = moments_from_vars({0.2, 0.1, 0.05}, {0.15, 0.2, 0.1});
  Design base({5, 6, 7}, {8, 9, 10});
  auto s0 = design_covariance(base, m);
  for (std::size_t cell = 0; cell < base.cell_count(); ++cell) {
    auto cells = std::vector<int>(base.cells().begin(), base.cells().end());
    cells[cell] += 1;
    auto s1 = design_covariance(Design::from_cells(cells), m);
    for (std::size_t k = 0; k < 3; ++k) {
      if (k == cell / 2)
        EXPECT_LT(s1[k], s0[k]);
      else
        EXPECT_EQ(s1[k], s0[k]);
    }
  }
}

TEST(UnbiasedRisk, IsMeanOfDiagonal) {
  EXPECT_DOUBLE_EQ(l2_risk_of_unbiased(DiagonalCovariance({1, 1, 1, 1})), 1.0);
  EXPECT_DOUBLE_EQ(l2_risk_of_unbiased(DiagonalCovariance({0.02})), 0.02);
}

TEST(Types, InvariantsRejectBadValues) {
  EXPECT_THROW(DiagonalCovariance({1.0, 0.0}), Error);
  EXPECT_THROW(DiagonalCovariance({1.0, -1.0}), Error);
  EXPECT_THROW(EffectVector({1.0, std::nan("")}), Error);
  EXPECT_THROW(StratumMoments({1.2}, {0.5}, {0.1}, {0.1}), Error);
  EXPECT_THROW(StratumMoments({0.5}, {0.5}, {0.3}, {0.1}), Error);
  EXPECT_THROW(Design({1, 2}, {1}), Error);
  EXPECT_THROW(Design({-1}, {1}), Error);
}

TEST(Types, BinaryMomentsAreFlagged) {
  auto b = StratumMoments::binary({0.3, 0.1}, {0.2, 0.5});
  EXPECT_TRUE(b.binary_consistent());
  EXPECT_DOUBLE_EQ(b.var_t(0), 0.3 * 0.7);
  EXPECT_DOUBLE_EQ(b.var_c(1), 0.25);
  StratumMoments m({0.3}, {0.2}, {0.2}, {0.16});
  EXPECT_FALSE(m.binary_consistent());
}

TEST(Types, DesignMoves) {
  Design d({3, 1}, {2, 0});
  EXPECT_EQ(d.total(), 6);
  EXPECT_EQ(d.min_count(), 0);
  auto e = d.with_move(0, 3);
  EXPECT_EQ(e.treated(0), 2);
  EXPECT_EQ(e.control(1), 1);
  EXPECT_EQ(e.total(), 6);
  EXPECT_THROW(d.with_move(3, 0), Error);
  EXPECT_THROW(d.with_move(1, 1), Error);
}

TEST(GuardrailConfig, Validation) {
  GuardrailConfig g;
  EXPECT_NO_THROW(g.validate());
  g.ss_min = 0;
  EXPECT_THROW(g.validate(), Error);
  g.ss_min = 1;
  g.delta_d = 0.9;
  EXPECT_THROW(g.validate(), Error);
  EXPECT_EQ(parse_guardrail_mode("robust"), GuardrailMode::robust);
  EXPECT_THROW(parse_guardrail_mode("strict"), Error);
  EXPECT_EQ(parse_baseline_rule("equal"), BaselineRule::equal);
}

TEST(Csv, DesignRoundTrip) {
  Design d({12, 7, 3}, {9, 1, 30});
  std::stringstream ss;
  write_design_csv(ss, d);
  EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), "stratum,n_treated,n_control");
  EXPECT_EQ(read_design_csv(ss), d);
}

TEST(Csv, MomentsRoundTripIsExact) {
  StratumMoments m({0.1, 1.0 / 3.0}, {0.25, 0.7}, {0.09, 0.2}, {0.1875, 0.21});
  std::stringstream ss;
  write_moments_csv(ss, m);
  auto r = read_moments_csv(ss);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(r.mu_t(k), m.mu_t(k));
    EXPECT_EQ(r.mu_c(k), m.mu_c(k));
    EXPECT_EQ(r.var_t(k), m.var_t(k));
    EXPECT_EQ(r.var_c(k), m.var_c(k));
  }
}

TEST(Csv, MissingColumnsAreNamed) {
  std::istringstream is("stratum,n_treated\n1,3\n");
  try {
    read_design_csv(is);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::schema);
    EXPECT_NE(std::string(e.what()).find("n_control"), std::string::npos);
  }
}

TEST(Csv, FormatDoubleRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456789.125, -2.5}) {
    EXPECT_EQ(std::stod(csv::format_double(v)), v);
  }
}

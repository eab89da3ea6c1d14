#include "ebdesign/risk_engine.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "ebdesign/parallel.hpp"
#include "ebdesign/rng.hpp"

namespace ebdesign {
namespace {

void require_integrable(std::size_t k) {
  if (k < 3)
    throw Error(ErrorKind::nonintegrable_moment,
                "nonintegrable moment: inverse quadratic-form moments need K >= 3 (got K = " +
                    std::to_string(k) + ")");
}

// Integrates, for nu ~ N(m, I) and A = diag(lambda), B = diag(beta):
//   inverse = int_0^inf det(I + 2tA)^{-1/2} exp(-m'(tA)(I + 2tA)^{-1} m) dt
//   ratio   = int_0^inf t * (same) * (tr(L B L) + (Lm)' L B L (Lm)) dt
// with L = (I + 2tA)^{-1/2}. A is scaled so max(lambda) = 1; the caller
// rescales the results.
MomentPair integrate_moments(const std::vector<double>& lambda, const std::vector<double>& beta,
                             const std::vector<double>& m2, const QuadratureSettings& settings) {
  const std::size_t k = lambda.size();
  double mass = 0.0;
  for (std::size_t i = 0; i < k; ++i) mass += lambda[i] * (1.0 + m2[i]);
  const double scale = 1.0 / mass;
  const int p = settings.tail_power > 0 ? settings.tail_power : (k == 3 ? 4 : 2);

  auto integrand = [&](double u) -> std::array<double, 2> {
    if (u >= 1.0) return {0.0, 0.0};
    const double s = u / (1.0 - u);
    const double sp1 = std::pow(s, p - 1);
    const double t = scale * sp1 * s;
    const double jac = scale * p * sp1 / ((1.0 - u) * (1.0 - u));
    double prod = 1.0, expo = 0.0, tr = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double tl = t * lambda[i];
      const double d = 1.0 + 2.0 * tl;
      const double inv = 1.0 / d;
      prod *= d;
      expo += m2[i] * tl * inv;
      tr += beta[i] * inv * (1.0 + m2[i] * inv);
    }
    double base;
    if (std::isfinite(prod)) {
      base = std::exp(-expo) / std::sqrt(prod);
    } else {
      double logdet = 0.0;
      for (std::size_t i = 0; i < k; ++i) logdet += std::log1p(2.0 * t * lambda[i]);
      base = std::exp(-expo - 0.5 * logdet);
    }
    return {base * jac, t * base * tr * jac};
  };
  auto res = integrate_adaptive<2>(integrand, 0.0, 1.0, settings);
  return {res.value[0], res.value[1], res.evaluations};
}

struct Normalized {
  std::vector<double> lambda, beta, m2;
  double smax = 1.0;
};

Normalized normalize(const DiagonalCovariance& sigma, const EffectVector& xi, int num_power, int den_power) {
  if (xi.size() != sigma.size()) throw Error(ErrorKind::invalid_argument, "risk: sigma/xi length mismatch");
  require_integrable(sigma.size());
  if (den_power < 1) throw Error(ErrorKind::invalid_argument, "risk: denominator power must be >= 1");
  Normalized n;
  const std::size_t k = sigma.size();
  n.smax = *std::max_element(sigma.diag().begin(), sigma.diag().end());
  n.lambda.resize(k);
  n.beta.resize(k);
  n.m2.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double r = sigma[i] / n.smax;
    n.lambda[i] = std::pow(r, den_power);
    n.beta[i] = std::pow(r, num_power);
    n.m2[i] = xi[i] * xi[i] / sigma[i];
  }
  return n;
}

}  // namespace

void RiskQuery::validate() const {
  if (sigma.size() == 0 || xi.size() != sigma.size())
    throw Error(ErrorKind::invalid_argument, "risk query: sigma and xi must have equal, nonzero length");
}

MomentPair moment_pair(const DiagonalCovariance& sigma, const EffectVector& xi, int num_power, int den_power,
                       const QuadratureSettings& settings) {
  auto n = normalize(sigma, xi, num_power, den_power);
  auto pair = integrate_moments(n.lambda, n.beta, n.m2, settings);
  pair.inverse /= std::pow(n.smax, den_power);
  pair.ratio *= std::pow(n.smax, num_power - 2 * den_power);
  return pair;
}

double moment_inverse(const DiagonalCovariance& sigma, const EffectVector& xi, int power,
                      const QuadratureSettings& settings) {
  return moment_pair(sigma, xi, power, power, settings).inverse;
}

double moment_ratio(const DiagonalCovariance& sigma, const EffectVector& xi, int num_power, int den_power,
                    const QuadratureSettings& settings) {
  return moment_pair(sigma, xi, num_power, den_power, settings).ratio;
}

RiskValue risk_exact(const RiskQuery& query, const QuadratureSettings& settings) {
  query.validate();
  const auto& sigma = query.sigma;
  const double k = static_cast<double>(sigma.size());
  RiskValue out;
  switch (query.family) {
    case ShrinkageFamily::unbiased:
      out.value = l2_risk_of_unbiased(sigma);
      return out;
    case ShrinkageFamily::kappa2_plus:
      out.upper_bound = true;
      [[fallthrough]];
    case ShrinkageFamily::kappa2: {
      // Work in units of max(sigma) to keep the bracket well scaled:
      // c (4R - c I) = smax * c' (4R' - c' I').
      auto n = normalize(sigma, query.xi, 5, 3);
      auto mp = integrate_moments(n.lambda, n.beta, n.m2, settings);
      double c = 0.0;
      for (double s : sigma.diag()) c += (s / n.smax) * (s / n.smax);
      out.value = (sigma.trace() + n.smax * c * (4.0 * mp.ratio - c * mp.inverse)) / k;
      return out;
    }
    case ShrinkageFamily::kappa1_plus:
      out.upper_bound = true;
      [[fallthrough]];
    case ShrinkageFamily::kappa1: {
      // tr(S) (4R - tr(S) I) with R = E[nu'S^2nu/(nu'Snu)^2], I = E[1/nu'Snu].
      auto n = normalize(sigma, query.xi, 2, 1);
      auto mp = integrate_moments(n.lambda, n.beta, n.m2, settings);
      double a = 0.0;
      for (double r : n.lambda) a += r;
      out.value = (sigma.trace() + n.smax * a * (4.0 * mp.ratio - a * mp.inverse)) / k;
      return out;
    }
    default:
      throw Error(ErrorKind::unsupported_closed_form,
                  std::string("no closed-form risk for ") + to_string(query.family) + "; use mc_risk");
  }
}

McEstimate mc_risk(const RiskQuery& query, std::int64_t draws, std::uint64_t seed, unsigned threads) {
  query.validate();
  if (draws < 10000) throw Error(ErrorKind::invalid_argument, "mc_risk: draws must be >= 10^4");
  constexpr std::int64_t block = 4096;
  const std::size_t blocks = static_cast<std::size_t>((draws + block - 1) / block);
  const std::size_t k = query.sigma.size();
  std::vector<double> sd(k);
  for (std::size_t i = 0; i < k; ++i) sd[i] = std::sqrt(query.sigma[i]);
  const std::vector<double> zero(k, 0.0);

  std::vector<double> sums(blocks), sq(blocks);
  parallel_for(blocks, threads, [&](std::size_t b) {
    Engine eng = stream_engine(seed, {b});
    std::normal_distribution<double> normal;
    std::vector<double> x(k), est(k);
    const std::int64_t begin = static_cast<std::int64_t>(b) * block;
    const std::int64_t end = std::min(draws, begin + block);
    double s = 0.0, s2 = 0.0;
    for (std::int64_t d = begin; d < end; ++d) {
      for (std::size_t i = 0; i < k; ++i) x[i] = query.xi[i] + sd[i] * normal(eng);
      shrink_into(query.family, x, zero, query.sigma.diag(), est);
      double loss = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        const double e = est[i] - query.xi[i];
        loss += e * e;
      }
      loss /= static_cast<double>(k);
      s += loss;
      s2 += loss * loss;
    }
    sums[b] = s;
    sq[b] = s2;
  });
  double s = 0.0, s2 = 0.0;
  for (std::size_t b = 0; b < blocks; ++b) {
    s += sums[b];
    s2 += sq[b];
  }
  const double n = static_cast<double>(draws);
  McEstimate out;
  out.draws = draws;
  out.mean = s / n;
  const double var = std::max(0.0, (s2 - n * out.mean * out.mean) / (n - 1.0));
  out.std_error = std::sqrt(var / n);
  return out;
}

}  // namespace ebdesign

#include "ebdesign/quadrature.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace ebdesign::detail {
namespace {

KronrodRule build_rule() {
  // Boost stores the non-negative half of each rule. For the 21-point
  // Kronrod rule the Gauss(10) abscissas sit at the odd positions.
  const auto& xk = boost::math::quadrature::gauss_kronrod<double, 21>::abscissa();
  const auto& wk = boost::math::quadrature::gauss_kronrod<double, 21>::weights();
  const auto& wg = boost::math::quadrature::gauss<double, 10>::weights();
  KronrodRule r{};
  std::size_t n = 0;
  for (std::size_t i = 0; i < xk.size(); ++i) {
    const double g = (i % 2 == 1) ? wg[i / 2] : 0.0;
    r.nodes[n] = xk[i];
    r.kronrod[n] = wk[i];
    r.gauss[n] = g;
    ++n;
    if (i > 0) {
      r.nodes[n] = -xk[i];
      r.kronrod[n] = wk[i];
      r.gauss[n] = g;
      ++n;
    }
  }
  return r;
}

}  // namespace

const KronrodRule& kronrod21() {
  static const KronrodRule rule = build_rule();
  return rule;
}

}  // namespace ebdesign::detail

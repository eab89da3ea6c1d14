#pragma once

// Adaptive Gauss-Kronrod (10/21) integration of vector-valued integrands.
// The risk engine integrates several moments over the same nodes, so the
// integrand returns a fixed-size array and every component must converge.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ebdesign/error.hpp"

namespace ebdesign {

struct QuadratureSettings {
  double rel_tol = 1e-8;
  double abs_tol = 1e-12;
  int max_subdivisions = 2000;
  int initial_intervals = 8;
  // Exponent p of the map t = scale * (u / (1 - u))^p from [0, 1) onto
  // [0, inf). 0 picks a value from the integrand's tail decay.
  int tail_power = 0;

  void validate() const {
    if (!(rel_tol > 0.0) || !(abs_tol > 0.0))
      throw Error(ErrorKind::invalid_argument, "quadrature: tolerances must be positive");
    if (max_subdivisions < 1 || initial_intervals < 1)
      throw Error(ErrorKind::invalid_argument, "quadrature: subdivision limits must be positive");
  }
};

template <std::size_t N>
struct QuadratureResult {
  std::array<double, N> value{};
  std::array<double, N> error{};
  int intervals = 0;
  int evaluations = 0;
};

namespace detail {

// Symmetric 21-point Kronrod rule with its embedded 10-point Gauss rule.
struct KronrodRule {
  std::array<double, 21> nodes;
  std::array<double, 21> kronrod;
  std::array<double, 21> gauss;  // zero where the node is Kronrod-only
};

const KronrodRule& kronrod21();

}  // namespace detail

// Integrates f over [a, b]. f(x) -> std::array<double, N>.
template <std::size_t N, class F>
QuadratureResult<N> integrate_adaptive(F&& f, double a, double b, const QuadratureSettings& s) {
  s.validate();
  const auto& rule = detail::kronrod21();
  struct Piece {
    double lo, hi;
    std::array<double, N> value, error;
  };
  QuadratureResult<N> out;
  auto eval = [&](double lo, double hi) {
    Piece p{lo, hi, {}, {}};
    const double half = 0.5 * (hi - lo);
    const double mid = 0.5 * (hi + lo);
    std::array<double, N> k{}, g{};
    for (std::size_t i = 0; i < 21; ++i) {
      auto v = f(mid + half * rule.nodes[i]);
      for (std::size_t c = 0; c < N; ++c) {
        k[c] += rule.kronrod[i] * v[c];
        g[c] += rule.gauss[i] * v[c];
      }
    }
    out.evaluations += 21;
    for (std::size_t c = 0; c < N; ++c) {
      p.value[c] = half * k[c];
      p.error[c] = std::abs(half * (k[c] - g[c]));
    }
    return p;
  };

  std::vector<Piece> pieces;
  const int n0 = s.initial_intervals;
  for (int i = 0; i < n0; ++i) {
    double lo = a + (b - a) * i / n0;
    double hi = (i + 1 == n0) ? b : a + (b - a) * (i + 1) / n0;
    pieces.push_back(eval(lo, hi));
  }

  auto totals = [&](std::array<double, N>& val, std::array<double, N>& err) {
    val.fill(0.0);
    err.fill(0.0);
    for (const auto& p : pieces)
      for (std::size_t c = 0; c < N; ++c) {
        val[c] += p.value[c];
        err[c] += p.error[c];
      }
  };

  std::array<double, N> val{}, err{};
  totals(val, err);
  auto converged = [&] {
    for (std::size_t c = 0; c < N; ++c)
      if (err[c] > std::max(s.abs_tol, s.rel_tol * std::abs(val[c]))) return false;
    return true;
  };
  auto weight = [&](const Piece& p) {
    double w = 0.0;
    for (std::size_t c = 0; c < N; ++c)
      w = std::max(w, p.error[c] / std::max(s.abs_tol, s.rel_tol * std::abs(val[c])));
    return w;
  };

  int splits = 0;
  while (!converged()) {
    if (splits >= s.max_subdivisions) {
      double residual = 0.0;
      for (std::size_t c = 0; c < N; ++c) residual = std::max(residual, err[c]);
      throw QuadratureError("quadrature did not converge within " + std::to_string(s.max_subdivisions) +
                                " subdivisions",
                            residual);
    }
    auto worst = std::max_element(pieces.begin(), pieces.end(),
                                  [&](const Piece& x, const Piece& y) { return weight(x) < weight(y); });
    const double lo = worst->lo, hi = worst->hi, mid = 0.5 * (lo + hi);
    if (!(mid > lo && mid < hi)) {
      // Interval cannot be split further in double precision.
      double residual = 0.0;
      for (std::size_t c = 0; c < N; ++c) residual = std::max(residual, err[c]);
      throw QuadratureError("quadrature interval underflow", residual);
    }
    *worst = eval(lo, mid);
    pieces.push_back(eval(mid, hi));
    ++splits;
    totals(val, err);
  }
  out.value = val;
  out.error = err;
  out.intervals = static_cast<int>(pieces.size());
  return out;
}

}  // namespace ebdesign

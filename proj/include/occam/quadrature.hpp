#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace occam {

/// Nodes and weights for E[f(Z)], Z ~ N(0, 1): sum_i w_i f(z_i).
struct GaussRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Probabilists' Gauss-Hermite rule of the given order (Golub-Welsch).
/// Cached per order.
const GaussRule& gauss_hermite(int order);

/// Standard normal cdf and pdf.
double normal_cdf(double t);
double normal_pdf(double t);

/// P(a < Z < b) for Z ~ N(0, 1), accurate in both tails. Infinite limits are
/// allowed.
double normal_mass(double a, double b);

/// Integral over (a, b) of N(x; mu, s^2) (x - c)^2 dx.
double truncated_second_moment(double mu, double s, double c, double a, double b);

/// Adaptive bisection over a 31-point Gauss-Kronrod rule on a finite interval,
/// stopping when the Kronrod-Gauss difference is below abs_tol (split evenly
/// between halves) or at max_depth.
template <class F>
double integrate_adaptive(F&& f, double a, double b, double abs_tol, int max_depth = 30) {
  using Kronrod = boost::math::quadrature::gauss_kronrod<double, 31>;
  using Gauss = boost::math::quadrature::gauss<double, 15>;
  // Node 0 is the centre; Gauss nodes are the odd Kronrod nodes.
  const auto& x = Kronrod::abscissa();
  const auto& wk = Kronrod::weights();
  const auto& wg = Gauss::weights();
  const double mid = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  const double f0 = f(mid);
  double kronrod = wk[0] * f0;
  double gauss = wg[0] * f0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    const double s = f(mid - half * x[i]) + f(mid + half * x[i]);
    kronrod += wk[i] * s;
    if (i % 2 == 0) gauss += wg[i / 2] * s;
  }
  kronrod *= half;
  gauss *= half;
  if (max_depth <= 0 || std::abs(kronrod - gauss) <= std::max(abs_tol, 1e-15 * std::abs(kronrod)))
    return kronrod;
  return integrate_adaptive(f, a, mid, 0.5 * abs_tol, max_depth - 1) +
         integrate_adaptive(f, mid, b, 0.5 * abs_tol, max_depth - 1);
}

}  // namespace occam

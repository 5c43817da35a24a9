#include "occam/quadrature.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "occam/errors.hpp"

namespace occam {

const GaussRule& gauss_hermite(int order) {
  if (order < 1 || order > 512) throw InvalidInput("Gauss-Hermite order must lie in [1, 512]");
  static std::mutex mu;
  static std::map<int, GaussRule> cache;
  std::lock_guard lock(mu);
  if (auto it = cache.find(order); it != cache.end()) return it->second;

  // Jacobi matrix of the monic probabilists' Hermite recurrence.
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(order, order);
  for (int k = 1; k < order; ++k) j(k, k - 1) = j(k - 1, k) = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(j);
  GaussRule rule;
  for (int i = 0; i < order; ++i) {
    rule.nodes.push_back(eig.eigenvalues()(i));
    const double v = eig.eigenvectors()(0, i);
    rule.weights.push_back(v * v);
  }
  return cache.emplace(order, std::move(rule)).first->second;
}

double normal_cdf(double t) { return 0.5 * std::erfc(-t / std::numbers::sqrt2); }

double normal_pdf(double t) {
  if (std::isinf(t)) return 0.0;
  return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi);
}

double normal_mass(double a, double b) {
  if (!(a < b)) return 0.0;
  // Subtract upper tails when the interval lies right of 0, lower tails when
  // it lies left, so the small quantity is never a difference of two near-1s.
  if (a >= 0.0) return 0.5 * (std::erfc(a / std::numbers::sqrt2) - std::erfc(b / std::numbers::sqrt2));
  if (b <= 0.0) return 0.5 * (std::erfc(-b / std::numbers::sqrt2) - std::erfc(-a / std::numbers::sqrt2));
  return 1.0 - 0.5 * std::erfc(-a / std::numbers::sqrt2) - 0.5 * std::erfc(b / std::numbers::sqrt2);
}

double truncated_second_moment(double mu, double s, double c, double a, double b) {
  const double lo = (a - mu) / s;
  const double hi = (b - mu) / s;
  const double mass = normal_mass(lo, hi);
  const double pa = normal_pdf(lo);
  const double pb = normal_pdf(hi);
  const double ta = std::isinf(lo) ? 0.0 : lo * pa;
  const double tb = std::isinf(hi) ? 0.0 : hi * pb;
  const double d = mu - c;
  // x - c = s t + d with t standard normal restricted to (lo, hi).
  return s * s * (mass + ta - tb) + 2.0 * s * d * (pa - pb) + d * d * mass;
}

}  // namespace occam

#include "occam/entropy_limit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "occam/errors.hpp"

namespace occam {

double binary_entropy(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("binary_entropy: p must lie in [0, 1]");
  if (p == 0.0 || p == 1.0) return 0.0;
  return -p * std::log(p) - (1.0 - p) * std::log1p(-p);
}

namespace {

// (1 + num/den)^{-1} = den / (den + num).
double share(double den, double num, bool& convention) {
  if (den == 0.0) {
    convention = true;
    return num == 0.0 ? 0.5 : 0.0;
  }
  return den / (den + num);
}

}  // namespace

OverfitStats overfit_stats(double train_err, double test_err, double n) {
  if (!(train_err >= 0.0 && train_err <= 1.0 && test_err >= 0.0 && test_err <= 1.0))
    throw InvalidInput("overfit_stats: errors must lie in [0, 1]");
  if (!(n >= 0.0)) throw InvalidInput("overfit_stats: n must be >= 0");
  OverfitStats s;
  s.train_err = train_err;
  s.test_err = test_err;
  s.n = n;
  s.p_n = share(train_err, test_err, s.convention_applied);
  s.q_n = share(1.0 - train_err, 1.0 - test_err, s.convention_applied);
  s.l_n = 0.5 * (train_err + test_err);
  return s;
}

double entropy_gap(const OverfitStats& s) {
  // Same value as log 2 - l h(p) - (1 - l) h(q), written as a weighted sum of
  // nonnegative gaps so that p = q = 1/2 gives exactly 0.
  const double gp = std::max(std::numbers::ln2 - binary_entropy(s.p_n), 0.0);
  const double gq = std::max(std::numbers::ln2 - binary_entropy(s.q_n), 0.0);
  return s.l_n * gp + (1.0 - s.l_n) * gq;
}

double entropy_lower_bound(const OverfitStats& s) { return s.n * entropy_gap(s); }

}  // namespace occam

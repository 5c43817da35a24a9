#pragma once

#include <cstddef>

namespace occam {

/// -p log p - (1 - p) log(1 - p) in nats, 0 log 0 = 0.
double binary_entropy(double p);

struct OverfitStats {
  double train_err = 0.0;
  double test_err = 0.0;
  double p_n = 0.5;
  double q_n = 0.5;
  double l_n = 0.0;
  double n = 0.0;
  bool convention_applied = false;  // a 0/0 or x/0 boundary rule fired
};

/// p_n = (1 + test/train)^{-1}, q_n = (1 + (1 - test)/(1 - train))^{-1},
/// l_n = (train + test) / 2. A zero denominator with a positive numerator
/// gives 0; 0/0 gives 1/2.
OverfitStats overfit_stats(double train_err, double test_err, double n);

/// log 2 - l_n h_b(p_n) - (1 - l_n) h_b(q_n), nats per example.
double entropy_gap(const OverfitStats& s);

/// n times entropy_gap: a lower bound on the entropy of the learned
/// hypothesis, nats.
double entropy_lower_bound(const OverfitStats& s);

}  // namespace occam

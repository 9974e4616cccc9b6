#pragma once

// Bayes-optimal mutual information for two-class planted data with
// independent Gaussian informative dims and uniform labels. The
// log-likelihood ratio L is N(+D/2, D) under class 1 and N(-D/2, D) under
// class 0, where D = sum_i (separation_i / sigma)^2, so
//   H(P | X) = E_{L ~ N(D/2, D)} log(1 + e^{-L})
// and MI = log 2 - H(P | X). The expectation is a 1-D Simpson integral.

#include <cmath>
#include <numbers>
#include <vector>

namespace oracle {

inline double bayes_conditional_entropy_two_class(double delta_sq) {
  if (delta_sq <= 0.0) return std::log(2.0);
  const double mu = 0.5 * delta_sq, sd = std::sqrt(delta_sq);
  const int steps = 20000;
  const double lo = mu - 12.0 * sd, hi = mu + 12.0 * sd, h = (hi - lo) / steps;
  auto f = [&](double l) {
    const double z = (l - mu) / sd;
    const double pdf = std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
    const double sp = -l > 30 ? -l : std::log1p(std::exp(-l));
    return pdf * sp;
  };
  double s = f(lo) + f(hi);
  for (int i = 1; i < steps; ++i) s += f(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

/// separations[i] is the distance between the two class means on dim i.
inline double bayes_nmi_two_class(const std::vector<double>& separations, double sigma) {
  double d2 = 0.0;
  for (double s : separations) d2 += (s / sigma) * (s / sigma);
  return (std::log(2.0) - bayes_conditional_entropy_two_class(d2)) / std::log(2.0);
}

}  // namespace oracle

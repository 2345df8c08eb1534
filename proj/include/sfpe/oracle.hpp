#pragma once

// Closed-form solutions of special SFPE instances, used as references.

#include <cmath>
#include <cstddef>
#include <span>

namespace sfpe::oracle {

// mu = 0, sigma = I, g = |x|^2, f = 0:  u(t, x) = |x|^2 + d (T - t).
inline double heat_quadratic(double t, std::span<const double> x, double T) {
  double n2 = 0.0;
  for (double xi : x) n2 += xi * xi;
  return n2 + static_cast<double>(x.size()) * (T - t);
}

// f(t, x, v) = c v:  u(t, x) = exp(c (T - t)) E[g(X^{t,x}_T)].
inline double linear_f_duhamel(double c, double t, double T, double base_expectation) {
  return std::exp(c * (T - t)) * base_expectation;
}

// mu = 0, sigma = I, g = exp(<a, x>), f = 0:  u(t, x) = exp(<a, x> + |a|^2 (T - t) / 2).
inline double gaussian_exponential_moment(std::span<const double> a, double t, std::span<const double> x, double T) {
  double inner = 0.0, a2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inner += a[i] * x[i];
    a2 += a[i] * a[i];
  }
  return std::exp(inner + 0.5 * a2 * (T - t));
}

// Picard iterates of u = 1 + int_t^T u ds from u_0 = 0:  sum_{k < n} (T - t)^k / k!.
inline double truncated_exponential(std::size_t n, double t, double T) {
  double term = 1.0, sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    sum += term;
    term *= (T - t) / static_cast<double>(k + 1);
  }
  return sum;
}

}  // namespace sfpe::oracle

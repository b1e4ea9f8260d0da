#pragma once

#include <cmath>
#include <string>

#include "pdhlock/errors.hpp"

namespace pdhlock {

/// Largest |x| accepted by bessel_j. The ascending series loses roughly
/// log10(max term) digits to cancellation; at |x| = 20 that is about 7 digits,
/// leaving absolute accuracy near 1e-9. Modulation depths of interest are < 3.
inline constexpr double kBesselMaxArgument = 20.0;

/// Bessel function of the first kind J_n(x) for integer order n >= 0, summed
/// from the ascending series
///
///   J_n(x) = sum_k (-1)^k (x/2)^(2k+n) / (k! (k+n)!)
///
/// Terms are accumulated until they drop below 1e-17 of the running magnitude
/// and the series has passed its largest term (k > |x|/2).
inline double bessel_j(int n, double x) {
  if (n < 0) {
    throw DomainError("bessel_j: order must be >= 0, got " + std::to_string(n));
  }
  if (!(std::abs(x) <= kBesselMaxArgument)) {
    throw DomainError("bessel_j: |x| must be <= 20");
  }
  const double half = 0.5 * x;
  // (x/2)^n / n!
  double term = 1.0;
  for (int i = 1; i <= n; ++i) {
    term *= half / i;
  }
  double sum = term;
  double scale = std::abs(term);
  const double half_sq = half * half;
  for (int k = 1; k < 200; ++k) {
    term *= -half_sq / (static_cast<double>(k) * static_cast<double>(k + n));
    sum += term;
    scale = std::max(scale, std::abs(sum));
    if (k > std::abs(half) && std::abs(term) <= 1e-17 * scale) {
      break;
    }
  }
  return sum;
}

}  // namespace pdhlock

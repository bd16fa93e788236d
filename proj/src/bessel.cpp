// Copyright 2026 The diffbridge Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffbridge/special.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace diffbridge {

namespace {

constexpr double kSeriesLimit = 30.0;
constexpr int kMaxTerms = 200;

void check_args(double nu, double x) {
  if (!(x > 0.0)) throw std::domain_error("Bessel I requires x > 0");
  if (!(nu >= 0.0)) throw std::domain_error("Bessel I requires order nu >= 0");
}

// e^{-x} I_nu(x) by the ascending series; all terms positive.
double scaled_series(double nu, double x) {
  const double q = 0.25 * x * x;
  double term = std::exp(nu * std::log(0.5 * x) - std::lgamma(nu + 1.0) - x);
  double sum = term;
  for (int k = 1; k < kMaxTerms; ++k) {
    term *= q / (k * (k + nu));
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return sum;
}

// sqrt(2 pi x) e^{-x} I_nu(x) by the Hankel expansion; stops at the
// smallest term.
double hankel_sum(double nu, double x) {
  const double mu = 4.0 * nu * nu;
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k < kMaxTerms; ++k) {
    const double odd = 2.0 * k - 1.0;
    const double next = -term * (mu - odd * odd) / (k * 8.0 * x);
    if (std::abs(next) >= std::abs(term) && k > 1) break;
    term = next;
    sum += term;
    if (std::abs(term) < 1e-17 * std::abs(sum)) break;
  }
  return sum;
}

}  // namespace

double log_bessel_i(double nu, double x) {
  check_args(nu, x);
  if (x <= kSeriesLimit) return std::log(scaled_series(nu, x)) + x;
  return x - 0.5 * std::log(2.0 * std::numbers::pi * x) + std::log(hankel_sum(nu, x));
}

double bessel_i(double nu, double x) { return std::exp(log_bessel_i(nu, x)); }

double bessel_i_log_derivative(double nu, double x) {
  check_args(nu, x);
  // I_nu' = I_{nu+1} + (nu / x) I_nu, equal to (I_{nu-1} + I_{nu+1}) / 2 by
  // the three-term recurrence, and free of negative orders.
  return std::exp(log_bessel_i(nu + 1.0, x) - log_bessel_i(nu, x)) + nu / x;
}

double bessel_i_dx(double nu, double x) {
  return bessel_i_log_derivative(nu, x) * bessel_i(nu, x);
}

}  // namespace diffbridge

// Copyright 2026 The diffbridge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace diffbridge {

/// Modified Bessel function of the first kind I_nu(x), nu >= 0, x > 0.
/// Power series for x <= 30, large-argument asymptotic series beyond.
double bessel_i(double nu, double x);

/// log I_nu(x); finite where I_nu(x) itself would overflow.
double log_bessel_i(double nu, double x);

/// d/dx I_nu(x).
double bessel_i_dx(double nu, double x);

/// I_nu'(x) / I_nu(x) without overflow.
double bessel_i_log_derivative(double nu, double x);

}  // namespace diffbridge

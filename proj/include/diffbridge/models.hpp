// Copyright 2026 The diffbridge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "diffbridge/rng.hpp"
#include "diffbridge/sde.hpp"
#include "diffbridge/special.hpp"

namespace diffbridge {

// ---- Ornstein-Uhlenbeck: f(t, x) = alpha - beta x, sigma = I ----------------

struct OUParams {
  double alpha = 0.0;
  double beta = 2.0;
  int dim = 1;

  void validate() const;
};

DiffusionModel ou_model(const OUParams& p);

struct OUMoments {
  Vector mean;
  /// Per-coordinate variance (covariance is var * I).
  double var = 0.0;
};

OUMoments ou_mean_var(const OUParams& p, double dt, const Vector& x_from);
double ou_log_transition(const OUParams& p, double dt, const Vector& x_from, const Vector& x_to);
/// grad_x log p(t, x | 0, x0).
Vector ou_true_score(const OUParams& p, double t, const Vector& x, const Vector& x0);
/// grad_x log p(T, xT | t, x).
Vector ou_doob_gradient(const OUParams& p, double t, const Vector& x, const Vector& xT,
                        double horizon);

// ---- interest rates: f(t, x) = theta / x - x, sigma = 1 --------------------

struct IRParams {
  double theta = 4.0;

  void validate() const;
};

/// Coordinates are clamped at 1e-8 from below during simulation.
DiffusionModel ir_model(const IRParams& p);

double ir_log_transition(const IRParams& p, double s, double x_s, double t, double x_t);
double ir_true_score(const IRParams& p, double t, double x, double x0);
double ir_doob_gradient(const IRParams& p, double t, double x, double xT, double horizon);

// ---- cell differentiation: two genes, sigma = sigma_x I --------------------

struct CellParams {
  double sigma_x = 1.0;
  double threshold = 0.0625;

  void validate() const;
};

DiffusionModel cell_model(const CellParams& p);
Vector cell_drift(const Vector& x, double threshold = 0.0625);
Matrix cell_drift_jacobian(const Vector& x, double threshold = 0.0625);

/// Stable roots of the cell drift found by Newton iteration from a grid on
/// [0, 2.5]^2, deduplicated and sorted by first coordinate.
std::vector<Vector> find_cell_fixed_points(double threshold = 0.0625);

/// Gamma(shape 5, rate 2) as a sum of five Exponential(2) draws.
double sample_gamma_5_2(Rng& rng);

}  // namespace diffbridge

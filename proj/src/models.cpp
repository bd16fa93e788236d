// Copyright 2026 The diffbridge Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffbridge/models.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace diffbridge {

// ---- Ornstein-Uhlenbeck ----------------------------------------------------

void OUParams::validate() const {
  if (!(beta > 0.0)) throw std::invalid_argument("OU beta must be positive");
  if (dim < 1) throw std::invalid_argument("OU dimension must be positive");
}

DiffusionModel ou_model(const OUParams& p) {
  p.validate();
  const int d = p.dim;
  DiffusionModel m = make_model(
      "ou", d,
      [a = p.alpha, b = p.beta](double, const Vector& x) -> Vector {
        return (a - b * x.array()).matrix();
      },
      [d](double, const Vector&) -> Matrix { return Matrix::Identity(d, d); });
  m.sigma_sq = [d](double, const Vector&) -> Matrix { return Matrix::Identity(d, d); };
  return m;
}

OUMoments ou_mean_var(const OUParams& p, double dt, const Vector& x_from) {
  if (!(dt > 0.0)) throw std::domain_error("OU transition needs dt > 0");
  const double level = p.alpha / p.beta;
  OUMoments out;
  out.mean = (level + (x_from.array() - level) * std::exp(-p.beta * dt)).matrix();
  out.var = -std::expm1(-2.0 * p.beta * dt) / (2.0 * p.beta);
  return out;
}

double ou_log_transition(const OUParams& p, double dt, const Vector& x_from, const Vector& x_to) {
  const OUMoments mv = ou_mean_var(p, dt, x_from);
  const double d = static_cast<double>(x_to.size());
  return -0.5 * (d * std::log(2.0 * std::numbers::pi * mv.var) +
                 (x_to - mv.mean).squaredNorm() / mv.var);
}

Vector ou_true_score(const OUParams& p, double t, const Vector& x, const Vector& x0) {
  if (!(t > 0.0)) throw std::domain_error("OU score is singular at t = 0");
  const OUMoments mv = ou_mean_var(p, t, x0);
  return (mv.mean - x) / mv.var;
}

Vector ou_doob_gradient(const OUParams& p, double t, const Vector& x, const Vector& xT,
                        double horizon) {
  if (!(t < horizon)) throw std::domain_error("Doob gradient is singular at t = T");
  const double remaining = horizon - t;
  const OUMoments mv = ou_mean_var(p, remaining, x);
  return std::exp(-p.beta * remaining) / mv.var * (xT - mv.mean);
}

// ---- interest rates --------------------------------------------------------

void IRParams::validate() const {
  if (!(theta > 0.5)) throw std::invalid_argument("interest-rate theta must exceed 1/2");
}

DiffusionModel ir_model(const IRParams& p) {
  p.validate();
  DiffusionModel m = make_model(
      "interest_rates", 1,
      [theta = p.theta](double, const Vector& x) -> Vector {
        return (theta / x.array() - x.array()).matrix();
      },
      [](double, const Vector&) -> Matrix { return Matrix::Identity(1, 1); });
  m.sigma_sq = [](double, const Vector&) -> Matrix { return Matrix::Identity(1, 1); };
  m.state_floor = 1e-8;
  return m;
}

namespace {
void check_ir_states(double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) {
    throw std::domain_error("interest-rate states must be positive");
  }
}
}  // namespace

double ir_log_transition(const IRParams& p, double s, double x_s, double t, double x_t) {
  check_ir_states(x_s, x_t);
  if (!(t > s)) throw std::domain_error("interest-rate transition needs t > s");
  const double h = t - s;
  const double th = p.theta;
  const double sh = std::sinh(h);
  return th * std::log(x_t / x_s) + 0.5 * std::log(x_t * x_s) - x_t * x_t + (th + 0.5) * h -
         std::log(sh) - (x_t * x_t + x_s * x_s) / std::expm1(2.0 * h) +
         log_bessel_i(th - 0.5, x_t * x_s / sh);
}

double ir_true_score(const IRParams& p, double t, double x, double x0) {
  check_ir_states(x, x0);
  if (!(t > 0.0)) throw std::domain_error("interest-rate score is singular at t = 0");
  const double th = p.theta;
  const double sh = std::sinh(t);
  return th / x + 0.5 / x - 2.0 * x - 2.0 * x / std::expm1(2.0 * t) +
         bessel_i_log_derivative(th - 0.5, x * x0 / sh) * x0 / sh;
}

double ir_doob_gradient(const IRParams& p, double t, double x, double xT, double horizon) {
  check_ir_states(x, xT);
  if (!(t < horizon)) throw std::domain_error("Doob gradient is singular at t = T");
  const double th = p.theta;
  const double remaining = horizon - t;
  const double sh = std::sinh(remaining);
  return -th / x + 0.5 / x - 2.0 * x / std::expm1(2.0 * remaining) +
         bessel_i_log_derivative(th - 0.5, xT * x / sh) * xT / sh;
}

// ---- cell model ------------------------------------------------------------

void CellParams::validate() const {
  if (!(sigma_x > 0.0)) throw std::invalid_argument("cell sigma_x must be positive");
  if (!(threshold > 0.0)) throw std::invalid_argument("cell threshold must be positive");
}

Vector cell_drift(const Vector& x, double threshold) {
  if (x.size() != 2) throw std::invalid_argument("cell model is two-dimensional");
  const double a4 = std::pow(x[0], 4);
  const double b4 = std::pow(x[1], 4);
  Vector f(2);
  f[0] = a4 / (threshold + a4) + threshold / (threshold + b4) - x[0];
  f[1] = b4 / (threshold + b4) + threshold / (threshold + a4) - x[1];
  return f;
}

Matrix cell_drift_jacobian(const Vector& x, double threshold) {
  // d/du u^4 / (c + u^4) = 4 c u^3 / (c + u^4)^2 and d/du c / (c + u^4) is its negative.
  auto slope = [threshold](double u) {
    const double den = threshold + std::pow(u, 4);
    return 4.0 * threshold * std::pow(u, 3) / (den * den);
  };
  Matrix j(2, 2);
  j(0, 0) = slope(x[0]) - 1.0;
  j(0, 1) = -slope(x[1]);
  j(1, 0) = -slope(x[0]);
  j(1, 1) = slope(x[1]) - 1.0;
  return j;
}

DiffusionModel cell_model(const CellParams& p) {
  p.validate();
  const double s = p.sigma_x;
  DiffusionModel m = make_model(
      "cell", 2,
      [c = p.threshold](double, const Vector& x) -> Vector { return cell_drift(x, c); },
      [s](double, const Vector&) -> Matrix { return s * Matrix::Identity(2, 2); });
  m.sigma_sq = [s](double, const Vector&) -> Matrix { return s * s * Matrix::Identity(2, 2); };
  return m;
}

std::vector<Vector> find_cell_fixed_points(double threshold) {
  constexpr int kGrid = 26;
  constexpr int kNewtonIterations = 100;
  std::vector<Vector> roots;
  for (int a = 0; a < kGrid; ++a) {
    for (int b = 0; b < kGrid; ++b) {
      Vector x(2);
      x << 2.5 * a / (kGrid - 1), 2.5 * b / (kGrid - 1);
      bool converged = false;
      for (int it = 0; it < kNewtonIterations; ++it) {
        const Vector f = cell_drift(x, threshold);
        if (f.norm() < 1e-13) {
          converged = true;
          break;
        }
        const Eigen::FullPivLU<Matrix> lu(cell_drift_jacobian(x, threshold));
        if (!lu.isInvertible()) break;
        x -= lu.solve(f);
        if (!x.allFinite() || x.norm() > 1e3) break;
      }
      if (!converged || cell_drift(x, threshold).norm() >= 1e-10) continue;
      const Eigen::EigenSolver<Matrix> eig(cell_drift_jacobian(x, threshold));
      if ((eig.eigenvalues().real().array() >= 0.0).any()) continue;
      const bool seen = std::any_of(roots.begin(), roots.end(),
                                    [&](const Vector& r) { return (r - x).norm() < 1e-8; });
      if (!seen) roots.push_back(x);
    }
  }
  if (roots.empty()) throw std::runtime_error("no stable cell fixed point found");
  std::sort(roots.begin(), roots.end(),
            [](const Vector& l, const Vector& r) { return l[0] < r[0]; });
  return roots;
}

double sample_gamma_5_2(Rng& rng) {
  double total = 0.0;
  for (int k = 0; k < 5; ++k) total += rng.exponential(2.0);
  return total;
}

}  // namespace diffbridge

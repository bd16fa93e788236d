// Copyright 2026 The diffbridge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>

#include "diffbridge/sde.hpp"

namespace testing {

using diffbridge::Matrix;
using diffbridge::Vector;

inline diffbridge::DiffusionModel brownian(int d = 1, double scale = 1.0) {
  return diffbridge::make_model(
      "brownian", d, [d](double, const Vector&) { return Vector(Vector::Zero(d)); },
      [d, scale](double, const Vector&) { return Matrix(scale * Matrix::Identity(d, d)); });
}

inline diffbridge::DiffusionModel linear_drift(double slope, int d = 1) {
  return diffbridge::make_model(
      "linear", d, [slope](double, const Vector& x) { return Vector(slope * x); },
      [d](double, const Vector&) { return Matrix(Matrix::Identity(d, d)); });
}

/// Central difference gradient of f at x.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                          double h = 1e-5) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector up = x, down = x;
    up[i] += h;
    down[i] -= h;
    g[i] = (f(up) - f(down)) / (2 * h);
  }
  return g;
}

inline double rel_error(const Vector& a, const Vector& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-300});
  return (a - b).norm() / scale;
}

/// Composite Simpson rule on [a, b] with n (even) intervals.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
  return s * h / 3.0;
}

}  // namespace testing

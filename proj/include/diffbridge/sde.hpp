// Copyright 2026 The diffbridge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffbridge/rng.hpp"

namespace diffbridge {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Raised when a simulation produces non-finite states or a covariance
/// fails to factorize.
class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// dX = f(t, X) dt + sigma(t, X) dW on R^d.
///
/// `sigma_sq` must equal sigma * sigma^T and be positive definite wherever it
/// is evaluated. `div_sigma_sq` is the row divergence of sigma_sq and
/// defaults to zero (state-independent diffusion).
struct DiffusionModel {
  std::string name;
  int dim = 1;
  std::function<Vector(double, const Vector&)> drift;
  std::function<Matrix(double, const Vector&)> sigma;
  std::function<Matrix(double, const Vector&)> sigma_sq;
  std::function<Vector(double, const Vector&)> div_sigma_sq;
  /// Simulation loops clamp every coordinate from below at this value.
  std::optional<double> state_floor;
};

/// Fills `sigma_sq` (as sigma * sigma^T) and `div_sigma_sq` (zero) when absent.
DiffusionModel make_model(std::string name, int dim,
                          std::function<Vector(double, const Vector&)> drift,
                          std::function<Matrix(double, const Vector&)> sigma,
                          std::function<Matrix(double, const Vector&)> sigma_sq = {},
                          std::function<Vector(double, const Vector&)> div_sigma_sq = {});

/// Uniform grid 0 = t_0 < ... < t_M = T.
class TimeGrid {
 public:
  TimeGrid(double horizon, int steps);

  [[nodiscard]] double horizon() const { return horizon_; }
  [[nodiscard]] int steps() const { return steps_; }
  [[nodiscard]] double dt() const { return dt_; }
  /// t_m; t_M is exactly the horizon.
  [[nodiscard]] double time(int m) const;

  /// Grid with spacing closest to `dt` (M = round(T / dt)).
  static TimeGrid with_step(double horizon, double dt);

 private:
  double horizon_;
  int steps_;
  double dt_;
};

enum class Direction { forward, backward };

/// n_paths trajectories on a shared grid.
///
/// Stored time-major: the n x d block of all paths at index m is contiguous,
/// as is each individual state.
class PathEnsemble {
 public:
  PathEnsemble(TimeGrid grid, std::size_t n_paths, int dim, Direction direction);

  [[nodiscard]] const TimeGrid& grid() const { return grid_; }
  [[nodiscard]] std::size_t n_paths() const { return n_paths_; }
  [[nodiscard]] int dim() const { return dim_; }
  [[nodiscard]] Direction direction() const { return direction_; }

  Eigen::Map<Vector> state(std::size_t path, int m);
  [[nodiscard]] Eigen::Map<const Vector> state(std::size_t path, int m) const;

  /// All paths at grid index m as an n_paths x d matrix.
  Eigen::Map<RowMatrix> slice(int m);
  [[nodiscard]] Eigen::Map<const RowMatrix> slice(int m) const;

  /// Copy of one path as an (M + 1) x d matrix.
  [[nodiscard]] Matrix path(std::size_t i) const;
  void set_path(std::size_t i, const Matrix& states);

  /// Same paths with index m mapped to M - m and the direction flipped.
  [[nodiscard]] PathEnsemble reversed() const;
  /// Paths [first, first + count).
  [[nodiscard]] PathEnsemble subset(std::size_t first, std::size_t count) const;

  [[nodiscard]] bool all_finite() const;

  /// Number of coordinates clamped by a model state floor while simulating.
  std::size_t clamp_events = 0;

 private:
  TimeGrid grid_;
  std::size_t n_paths_;
  int dim_;
  Direction direction_;
  std::vector<double> data_;
};

/// x + dt f(t, x) + sigma(t, x) dw.
Vector em_step(const DiffusionModel& model, double t, const Vector& x, double dt,
               const Vector& dw);

/// Euler-Maruyama paths from a common x0; path i draws from rng.split(i).
PathEnsemble simulate_forward(const DiffusionModel& model, const Vector& x0,
                              const TimeGrid& grid, std::size_t n_paths, const Rng& rng);

/// As above with a per-path initial state (row i of `x0s`).
PathEnsemble simulate_forward(const DiffusionModel& model, const Matrix& x0s,
                              const TimeGrid& grid, const Rng& rng);

/// log N(x; x_prev + dt f(t_prev, x_prev), dt Sigma(t_prev, x_prev)).
double em_log_transition(const DiffusionModel& model, double t_prev, const Vector& x_prev,
                         double t, const Vector& x);

/// Gradient in x of em_log_transition.
Vector em_transition_score(const DiffusionModel& model, double t_prev, const Vector& x_prev,
                           double t, const Vector& x);

/// log N(x; mean, cov) via a Cholesky factorization.
double gaussian_log_density(const Vector& x, const Vector& mean, const Matrix& cov);

/// -cov^{-1} (x - mean).
Vector gaussian_score(const Vector& x, const Vector& mean, const Matrix& cov);

/// Applies the model's state floor (if any) in place; returns clamped count.
std::size_t apply_state_floor(const DiffusionModel& model, Eigen::Ref<Vector> x);

}  // namespace diffbridge

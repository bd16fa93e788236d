// Copyright 2026 The diffbridge Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffbridge/sde.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace diffbridge {

DiffusionModel make_model(std::string name, int dim,
                          std::function<Vector(double, const Vector&)> drift,
                          std::function<Matrix(double, const Vector&)> sigma,
                          std::function<Matrix(double, const Vector&)> sigma_sq,
                          std::function<Vector(double, const Vector&)> div_sigma_sq) {
  if (dim < 1) throw std::invalid_argument("model dimension must be positive");
  if (!drift || !sigma) throw std::invalid_argument("model needs drift and sigma");
  DiffusionModel model;
  model.name = std::move(name);
  model.dim = dim;
  model.drift = std::move(drift);
  model.sigma = std::move(sigma);
  if (sigma_sq) {
    model.sigma_sq = std::move(sigma_sq);
  } else {
    model.sigma_sq = [s = model.sigma](double t, const Vector& x) -> Matrix {
      const Matrix m = s(t, x);
      return m * m.transpose();
    };
  }
  if (div_sigma_sq) {
    model.div_sigma_sq = std::move(div_sigma_sq);
  } else {
    model.div_sigma_sq = [dim](double, const Vector&) -> Vector { return Vector::Zero(dim); };
  }
  return model;
}

TimeGrid::TimeGrid(double horizon, int steps) : horizon_(horizon), steps_(steps) {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) {
    throw std::invalid_argument("time horizon must be positive and finite");
  }
  if (steps < 2) throw std::invalid_argument("time grid needs at least two steps");
  dt_ = horizon / steps;
}

double TimeGrid::time(int m) const {
  if (m == steps_) return horizon_;
  return m * dt_;
}

TimeGrid TimeGrid::with_step(double horizon, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("step size must be positive");
  return TimeGrid(horizon, static_cast<int>(std::lround(horizon / dt)));
}

PathEnsemble::PathEnsemble(TimeGrid grid, std::size_t n_paths, int dim, Direction direction)
    : grid_(grid), n_paths_(n_paths), dim_(dim), direction_(direction) {
  if (n_paths == 0) throw std::invalid_argument("ensemble needs at least one path");
  data_.assign(static_cast<std::size_t>(grid.steps() + 1) * n_paths * dim, 0.0);
}

Eigen::Map<Vector> PathEnsemble::state(std::size_t path, int m) {
  return {data_.data() + (static_cast<std::size_t>(m) * n_paths_ + path) * dim_, dim_};
}

Eigen::Map<const Vector> PathEnsemble::state(std::size_t path, int m) const {
  return {data_.data() + (static_cast<std::size_t>(m) * n_paths_ + path) * dim_, dim_};
}

Eigen::Map<RowMatrix> PathEnsemble::slice(int m) {
  return {data_.data() + static_cast<std::size_t>(m) * n_paths_ * dim_,
          static_cast<Eigen::Index>(n_paths_), dim_};
}

Eigen::Map<const RowMatrix> PathEnsemble::slice(int m) const {
  return {data_.data() + static_cast<std::size_t>(m) * n_paths_ * dim_,
          static_cast<Eigen::Index>(n_paths_), dim_};
}

Matrix PathEnsemble::path(std::size_t i) const {
  Matrix out(grid_.steps() + 1, dim_);
  for (int m = 0; m <= grid_.steps(); ++m) out.row(m) = state(i, m).transpose();
  return out;
}

void PathEnsemble::set_path(std::size_t i, const Matrix& states) {
  if (states.rows() != grid_.steps() + 1 || states.cols() != dim_) {
    throw std::invalid_argument("path shape does not match ensemble");
  }
  for (int m = 0; m <= grid_.steps(); ++m) state(i, m) = states.row(m).transpose();
}

PathEnsemble PathEnsemble::reversed() const {
  PathEnsemble out(grid_, n_paths_, dim_,
                   direction_ == Direction::forward ? Direction::backward : Direction::forward);
  const int steps = grid_.steps();
  for (int m = 0; m <= steps; ++m) out.slice(steps - m) = slice(m);
  out.clamp_events = clamp_events;
  return out;
}

PathEnsemble PathEnsemble::subset(std::size_t first, std::size_t count) const {
  if (first + count > n_paths_) throw std::out_of_range("path subset out of range");
  PathEnsemble out(grid_, count, dim_, direction_);
  for (int m = 0; m <= grid_.steps(); ++m) {
    out.slice(m) = slice(m).middleRows(static_cast<Eigen::Index>(first),
                                       static_cast<Eigen::Index>(count));
  }
  return out;
}

bool PathEnsemble::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Vector em_step(const DiffusionModel& model, double t, const Vector& x, double dt,
               const Vector& dw) {
  Vector next = x + dt * model.drift(t, x) + model.sigma(t, x) * dw;
  if (!next.allFinite()) {
    std::ostringstream msg;
    msg << "Euler-Maruyama step produced a non-finite state at t=" << t << " from x=["
        << x.transpose() << "]";
    throw SimulationError(msg.str());
  }
  return next;
}

std::size_t apply_state_floor(const DiffusionModel& model, Eigen::Ref<Vector> x) {
  if (!model.state_floor) return 0;
  std::size_t clamped = 0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    if (x[k] < *model.state_floor) {
      x[k] = *model.state_floor;
      ++clamped;
    }
  }
  return clamped;
}

namespace {

void simulate_into(const DiffusionModel& model, PathEnsemble& ens, const Rng& rng) {
  const TimeGrid& grid = ens.grid();
  const double dt = grid.dt();
  const double sqrt_dt = std::sqrt(dt);
  Vector dw(model.dim);
  Vector x(model.dim);
  for (std::size_t i = 0; i < ens.n_paths(); ++i) {
    Rng stream = rng.split(i);
    x = ens.state(i, 0);
    for (int m = 1; m <= grid.steps(); ++m) {
      for (int k = 0; k < model.dim; ++k) dw[k] = sqrt_dt * stream.normal();
      try {
        x = em_step(model, grid.time(m - 1), x, dt, dw);
      } catch (const SimulationError& e) {
        std::ostringstream msg;
        msg << e.what() << " (path " << i << ", step " << m << ")";
        throw SimulationError(msg.str());
      }
      ens.clamp_events += apply_state_floor(model, x);
      ens.state(i, m) = x;
    }
  }
}

}  // namespace

PathEnsemble simulate_forward(const DiffusionModel& model, const Vector& x0,
                              const TimeGrid& grid, std::size_t n_paths, const Rng& rng) {
  if (x0.size() != model.dim) throw std::invalid_argument("x0 dimension mismatch");
  PathEnsemble ens(grid, n_paths, model.dim, Direction::forward);
  for (std::size_t i = 0; i < n_paths; ++i) ens.state(i, 0) = x0;
  simulate_into(model, ens, rng);
  return ens;
}

PathEnsemble simulate_forward(const DiffusionModel& model, const Matrix& x0s,
                              const TimeGrid& grid, const Rng& rng) {
  if (x0s.cols() != model.dim) throw std::invalid_argument("x0 dimension mismatch");
  PathEnsemble ens(grid, static_cast<std::size_t>(x0s.rows()), model.dim, Direction::forward);
  ens.slice(0) = x0s;
  simulate_into(model, ens, rng);
  return ens;
}

double gaussian_log_density(const Vector& x, const Vector& mean, const Matrix& cov) {
  const Eigen::Index d = x.size();
  if (d == 1) {
    const double var = cov(0, 0);
    if (!(var > 0.0)) throw SimulationError("covariance is not positive definite");
    const double r = x[0] - mean[0];
    return -0.5 * (std::log(2.0 * std::numbers::pi * var) + r * r / var);
  }
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw SimulationError("covariance is not positive definite");
  }
  const Vector z = llt.matrixL().solve(x - mean);
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + log_det +
                 z.squaredNorm());
}

Vector gaussian_score(const Vector& x, const Vector& mean, const Matrix& cov) {
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw SimulationError("covariance is not positive definite");
  }
  return -llt.solve(x - mean);
}

namespace {
double checked_interval(double t_prev, double t) {
  const double dt = t - t_prev;
  if (!(dt > 0.0)) throw std::invalid_argument("transition requires t > t_prev");
  return dt;
}
}  // namespace

double em_log_transition(const DiffusionModel& model, double t_prev, const Vector& x_prev,
                         double t, const Vector& x) {
  const double dt = checked_interval(t_prev, t);
  const Vector mean = x_prev + dt * model.drift(t_prev, x_prev);
  return gaussian_log_density(x, mean, dt * model.sigma_sq(t_prev, x_prev));
}

Vector em_transition_score(const DiffusionModel& model, double t_prev, const Vector& x_prev,
                           double t, const Vector& x) {
  const double dt = checked_interval(t_prev, t);
  const Vector mean = x_prev + dt * model.drift(t_prev, x_prev);
  return gaussian_score(x, mean, dt * model.sigma_sq(t_prev, x_prev));
}

}  // namespace diffbridge

// Copyright 2026 The diffbridge Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffbridge/bridge.hpp"

#include <cmath>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>

namespace diffbridge {

ScoreField net_score_field(ScoreNet net, std::optional<Vector> x0) {
  if (net.arch().conditioned_on_x0 != x0.has_value()) {
    throw std::invalid_argument(net.arch().conditioned_on_x0
                                    ? "conditioned network needs an x0 to evaluate at"
                                    : "unconditioned network cannot take an x0");
  }
  auto shared = std::make_shared<const ScoreNet>(std::move(net));
  return [shared, x0 = std::move(x0)](double t, const Matrix& states) -> Matrix {
    NetInputs in;
    in.times = Vector::Constant(states.rows(), t);
    in.states = states;
    if (x0) in.initial = x0->transpose().replicate(states.rows(), 1);
    return shared->forward(in);
  };
}

ScoreField pointwise_score_field(std::function<Vector(double, const Vector&)> score) {
  return [score = std::move(score)](double t, const Matrix& states) -> Matrix {
    Matrix out(states.rows(), states.cols());
    for (Eigen::Index r = 0; r < states.rows(); ++r) {
      out.row(r) = score(t, states.row(r).transpose()).transpose();
    }
    return out;
  };
}

std::string_view to_string(ProposalKind kind) {
  switch (kind) {
    case ProposalKind::learned_backward: return "learned_backward";
    case ProposalKind::learned_forward: return "learned_forward";
    case ProposalKind::forward_diffusion: return "forward_diffusion";
    case ProposalKind::modified_diffusion_bridge: return "modified_diffusion_bridge";
    case ProposalKind::clark_delyon_hu: return "clark_delyon_hu";
  }
  return "unknown";
}

ProposalKind parse_proposal_kind(std::string_view name) {
  for (ProposalKind k : {ProposalKind::learned_backward, ProposalKind::learned_forward,
                         ProposalKind::forward_diffusion, ProposalKind::modified_diffusion_bridge,
                         ProposalKind::clark_delyon_hu}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown proposal kind '" + std::string(name) + "'");
}

bool pins_endpoints(ProposalKind kind) { return kind != ProposalKind::forward_diffusion; }

void BridgeProposal::validate() const {
  if (x0.size() != model.dim || xT.size() != model.dim) {
    throw std::invalid_argument("bridge endpoints do not match the model dimension");
  }
  if (!x0.allFinite() || !xT.allFinite()) throw std::invalid_argument("bridge endpoints must be finite");
  const bool learned =
      kind == ProposalKind::learned_backward || kind == ProposalKind::learned_forward;
  if (learned && !backward_score) {
    throw std::invalid_argument("learned proposals need a backward score");
  }
  if (kind == ProposalKind::learned_forward && !forward_score) {
    throw std::invalid_argument("learned_forward proposal needs a forward score");
  }
}

Matrix backward_drift(const ScoreField& score, const DiffusionModel& model, double horizon,
                      double t, const Matrix& states) {
  const double tau = horizon - t;
  const Matrix s = score(tau, states);
  Matrix out(states.rows(), states.cols());
  for (Eigen::Index r = 0; r < states.rows(); ++r) {
    const Vector z = states.row(r).transpose();
    out.row(r) = (-model.drift(tau, z) + model.sigma_sq(tau, z) * s.row(r).transpose() +
                  model.div_sigma_sq(tau, z))
                     .transpose();
  }
  return out;
}

Vector backward_drift(const ScoreField& score, const DiffusionModel& model, double horizon,
                      double t, const Vector& z) {
  return backward_drift(score, model, horizon, t, Matrix(z.transpose())).row(0).transpose();
}

Matrix forward_bridge_drift(const ScoreField& forward_score, const ScoreField& backward_score,
                            const DiffusionModel& model, double horizon, double t,
                            const Matrix& states) {
  const Matrix reversed = backward_drift(backward_score, model, horizon, horizon - t, states);
  const Matrix s = forward_score(t, states);
  Matrix out(states.rows(), states.cols());
  for (Eigen::Index r = 0; r < states.rows(); ++r) {
    const Vector x = states.row(r).transpose();
    out.row(r) = (-reversed.row(r).transpose() + model.sigma_sq(t, x) * s.row(r).transpose() +
                  model.div_sigma_sq(t, x))
                     .transpose();
  }
  return out;
}

Vector forward_bridge_drift(const ScoreField& forward_score, const ScoreField& backward_score,
                            const DiffusionModel& model, double horizon, double t,
                            const Vector& x) {
  return forward_bridge_drift(forward_score, backward_score, model, horizon, t,
                              Matrix(x.transpose()))
      .row(0)
      .transpose();
}

Vector baseline_drift(ProposalKind kind, const DiffusionModel& model, double t, const Vector& x,
                      const Vector& xT, double horizon) {
  switch (kind) {
    case ProposalKind::forward_diffusion:
      return model.drift(t, x);
    case ProposalKind::modified_diffusion_bridge:
    case ProposalKind::clark_delyon_hu: {
      if (!(t < horizon)) throw std::domain_error("bridge drift is singular at t = T");
      Vector pull = (xT - x) / (horizon - t);
      if (kind == ProposalKind::clark_delyon_hu) pull += model.drift(t, x);
      return pull;
    }
    default:
      throw std::invalid_argument("baseline_drift called with a learned proposal kind");
  }
}

double variance_multiplier(const TimeGrid& grid, int m) {
  const double T = grid.horizon();
  return (T - grid.time(m)) / (T - grid.time(m - 1));
}

namespace {

// Time argument of sigma / Sigma for the transition out of index m - 1.
double diffusion_time(const BridgeProposal& p, int m) {
  const double t = p.grid.time(m - 1);
  return p.kind == ProposalKind::learned_backward ? p.grid.horizon() - t : t;
}

double step_multiplier(const BridgeProposal& p, int m) {
  return pins_endpoints(p.kind) ? variance_multiplier(p.grid, m) : 1.0;
}

Matrix proposal_drift(const BridgeProposal& p, int m, const Matrix& states) {
  const double t = p.grid.time(m - 1);
  const double T = p.grid.horizon();
  switch (p.kind) {
    case ProposalKind::learned_backward:
      return backward_drift(p.backward_score, p.model, T, t, states);
    case ProposalKind::learned_forward:
      return forward_bridge_drift(p.forward_score, p.backward_score, p.model, T, t, states);
    default: {
      Matrix out(states.rows(), states.cols());
      for (Eigen::Index r = 0; r < states.rows(); ++r) {
        out.row(r) = baseline_drift(p.kind, p.model, t, states.row(r).transpose(), p.xT, T)
                         .transpose();
      }
      return out;
    }
  }
}

Direction direction_of(const BridgeProposal& p) {
  return p.kind == ProposalKind::learned_backward ? Direction::backward : Direction::forward;
}

const Vector& start_of(const BridgeProposal& p) {
  return p.kind == ProposalKind::learned_backward ? p.xT : p.x0;
}

const Vector& end_of(const BridgeProposal& p) {
  return p.kind == ProposalKind::learned_backward ? p.x0 : p.xT;
}

}  // namespace

PathEnsemble simulate_proposal(const BridgeProposal& p, std::span<const Rng> streams) {
  p.validate();
  const std::size_t n = streams.size();
  const int d = p.model.dim;
  const int steps = p.grid.steps();
  const double dt = p.grid.dt();
  std::vector<Rng> rngs(streams.begin(), streams.end());

  PathEnsemble ens(p.grid, n, d, direction_of(p));
  Matrix current = start_of(p).transpose().replicate(static_cast<Eigen::Index>(n), 1);
  ens.slice(0) = current;
  Vector dw(d);
  Vector next(d);
  for (int m = 1; m < steps; ++m) {
    const Matrix drift = proposal_drift(p, m, current);
    const double tau = diffusion_time(p, m);
    const double scale = std::sqrt(dt * step_multiplier(p, m));
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const Vector x = current.row(r).transpose();
      for (int k = 0; k < d; ++k) dw[k] = rngs[i].normal();
      next = x + dt * drift.row(r).transpose() + scale * (p.model.sigma(tau, x) * dw);
      ens.clamp_events += apply_state_floor(p.model, next);
      if (!next.allFinite()) {
        std::ostringstream msg;
        msg << to_string(p.kind) << " proposal produced a non-finite state (path " << i
            << ", step " << m << ", from [" << x.transpose() << "])";
        throw SimulationError(msg.str());
      }
      current.row(r) = next.transpose();
    }
    ens.slice(m) = current;
  }
  ens.slice(steps) = end_of(p).transpose().replicate(static_cast<Eigen::Index>(n), 1);
  return ens;
}

PathEnsemble simulate_proposal(const BridgeProposal& proposal, std::size_t n_paths,
                               const Rng& rng) {
  std::vector<Rng> streams;
  streams.reserve(n_paths);
  for (std::size_t i = 0; i < n_paths; ++i) streams.push_back(rng.split(i));
  return simulate_proposal(proposal, streams);
}

PathEnsemble simulate_backward_bridge(const BridgeProposal& proposal, std::size_t n_paths,
                                      const Rng& rng) {
  if (proposal.kind != ProposalKind::learned_backward) {
    throw std::invalid_argument("simulate_backward_bridge needs a learned_backward proposal");
  }
  return simulate_proposal(proposal, n_paths, rng);
}

std::vector<double> proposal_log_densities(const BridgeProposal& p, const PathEnsemble& ens) {
  p.validate();
  if (ens.direction() != direction_of(p)) {
    throw std::invalid_argument("ensemble direction does not match the proposal");
  }
  if (ens.grid().steps() != p.grid.steps() || ens.grid().horizon() != p.grid.horizon() ||
      ens.dim() != p.model.dim) {
    throw std::invalid_argument("ensemble grid does not match the proposal");
  }
  const int steps = p.grid.steps();
  const double dt = p.grid.dt();
  const std::size_t n = ens.n_paths();
  for (std::size_t i = 0; i < n; ++i) {
    const bool start_ok = ens.state(i, 0) == start_of(p);
    const bool end_ok = !pins_endpoints(p.kind) || ens.state(i, steps) == end_of(p);
    if (!start_ok || !end_ok) {
      throw std::invalid_argument("path " + std::to_string(i) +
                                  " does not match the proposal's pinned endpoints");
    }
  }

  std::vector<double> log_density(n, 0.0);
  for (int m = 1; m < steps; ++m) {
    const Matrix prev = ens.slice(m - 1);
    const Matrix drift = proposal_drift(p, m, prev);
    const double tau = diffusion_time(p, m);
    const double var_scale = dt * step_multiplier(p, m);
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const Vector x = prev.row(r).transpose();
      const Vector mean = x + dt * drift.row(r).transpose();
      log_density[i] +=
          gaussian_log_density(ens.state(i, m), mean, var_scale * p.model.sigma_sq(tau, x));
    }
  }
  return log_density;
}

double proposal_log_density(const BridgeProposal& proposal, const Matrix& path) {
  PathEnsemble ens(proposal.grid, 1, proposal.model.dim, direction_of(proposal));
  ens.set_path(0, path);
  return proposal_log_densities(proposal, ens)[0];
}

}  // namespace diffbridge

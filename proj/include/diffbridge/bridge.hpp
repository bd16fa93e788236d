// Copyright 2026 The diffbridge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "diffbridge/nn.hpp"
#include "diffbridge/sde.hpp"

namespace diffbridge {

/// Batched score field: returns one score per row of `states`, at time t.
using ScoreField = std::function<Matrix(double t, const Matrix& states)>;

/// Wraps a network; a conditioned network needs the x0 it is evaluated for.
ScoreField net_score_field(ScoreNet net, std::optional<Vector> x0 = std::nullopt);
ScoreField pointwise_score_field(std::function<Vector(double, const Vector&)> score);

enum class ProposalKind {
  learned_backward,
  learned_forward,
  forward_diffusion,
  modified_diffusion_bridge,
  clark_delyon_hu,
};

std::string_view to_string(ProposalKind kind);
ProposalKind parse_proposal_kind(std::string_view name);
/// Every kind except forward_diffusion pins both endpoints.
bool pins_endpoints(ProposalKind kind);

struct BridgeProposal {
  ProposalKind kind = ProposalKind::forward_diffusion;
  DiffusionModel model;
  Vector x0;
  Vector xT;
  TimeGrid grid{1.0, 2};
  /// Approximation of grad log p(t, x | 0, x0); needed by both learned kinds.
  ScoreField backward_score;
  /// Approximation of the bridge marginal score; needed by learned_forward.
  ScoreField forward_score;

  void validate() const;
};

/// -f(T - t, z) + Sigma(T - t, z) s(T - t, z) + div Sigma(T - t, z).
Vector backward_drift(const ScoreField& score, const DiffusionModel& model, double horizon,
                      double t, const Vector& z);
Matrix backward_drift(const ScoreField& score, const DiffusionModel& model, double horizon,
                      double t, const Matrix& states);

/// -b(T - t, x) + Sigma(t, x) s*(t, x) + div Sigma(t, x), with b the backward
/// drift built from `backward_score`.
Vector forward_bridge_drift(const ScoreField& forward_score, const ScoreField& backward_score,
                            const DiffusionModel& model, double horizon, double t,
                            const Vector& x);
Matrix forward_bridge_drift(const ScoreField& forward_score, const ScoreField& backward_score,
                            const DiffusionModel& model, double horizon, double t,
                            const Matrix& states);

/// Drift of the three classical proposals. The bridge kinds require t < T.
Vector baseline_drift(ProposalKind kind, const DiffusionModel& model, double t, const Vector& x,
                      const Vector& xT, double horizon);

/// (T - t_m) / (T - t_{m-1}).
double variance_multiplier(const TimeGrid& grid, int m);

/// Modified Euler-Maruyama backward bridge: Z_0 = xT, Z_T = x0.
PathEnsemble simulate_backward_bridge(const BridgeProposal& proposal, std::size_t n_paths,
                                      const Rng& rng);

/// Any kind; path i draws from rng.split(i). The learned backward kind
/// returns a backward-direction ensemble, every other kind a forward one.
/// forward_diffusion simulates M - 1 free steps and stores xT at index M.
PathEnsemble simulate_proposal(const BridgeProposal& proposal, std::size_t n_paths,
                               const Rng& rng);
/// As above with one explicit stream per path.
PathEnsemble simulate_proposal(const BridgeProposal& proposal, std::span<const Rng> streams);

/// Sum over m = 1..M-1 of the proposal's log transition densities along a
/// path given in the proposal's own direction as an (M + 1) x d matrix.
double proposal_log_density(const BridgeProposal& proposal, const Matrix& path);
std::vector<double> proposal_log_densities(const BridgeProposal& proposal,
                                           const PathEnsemble& ensemble);

}  // namespace diffbridge

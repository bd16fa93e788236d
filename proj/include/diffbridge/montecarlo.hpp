// Copyright 2026 The diffbridge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "diffbridge/bridge.hpp"
#include "diffbridge/sde.hpp"

namespace diffbridge {

/// Proposal paths in forward-time order with their log importance weights
/// (log target - log proposal).
struct WeightedEnsemble {
  PathEnsemble ensemble;
  std::vector<double> log_weights;
  std::vector<double> log_target_terms;
  std::vector<double> log_proposal_terms;
};

/// log of the discretized unconditioned path density: sum over m = 1..M of
/// the Euler-Maruyama log transitions along a forward-time (M + 1) x d path.
double log_target_density(const DiffusionModel& model, const TimeGrid& grid,
                          const Matrix& forward_path);

/// Weights for an ensemble produced by simulate_proposal(proposal, ...).
/// Backward ensembles are reversed into forward time.
WeightedEnsemble importance_weights(const BridgeProposal& proposal, const PathEnsemble& ensemble);

double log_sum_exp(std::span<const double> values);
double log_mean_exp(std::span<const double> values);

/// (sum w)^2 / (n sum w^2), computed from max-shifted log weights.
double ess_proportion(std::span<const double> log_weights);
double ess_proportion(const WeightedEnsemble& weighted);

/// log of the mean importance weight, estimating log p_M(T, xT | 0, x0).
double estimate_log_transition(const WeightedEnsemble& weighted);

/// Normalized weights exp(lw - logsumexp(lw)).
std::vector<double> selection_probabilities(std::span<const double> log_weights);
/// Index drawn from selection_probabilities given a uniform u in [0, 1).
std::size_t select_index(std::span<const double> log_weights, double u);

/// Indices of the state held after each iteration of a generic chain.
struct ChainTrace {
  /// For IMH: index of the held proposal draw. For PIMH: draw index.
  std::vector<std::size_t> held_draw;
  /// For PIMH: particle index within the held draw (zero for IMH).
  std::vector<std::size_t> held_particle;
  std::vector<double> log_density_estimates;
  std::size_t accepted = 0;
  std::size_t iterations = 0;

  [[nodiscard]] double acceptance_rate() const;
};

/// Independent MH over a stream of proposal log weights. Entry 0 is the
/// initial state; iteration k proposes entry k. One acceptance uniform is
/// consumed from `rng` per iteration.
ChainTrace imh_kernel(std::span<const double> proposal_log_weights, Rng& rng);

/// Particle IMH. `draw(k)` returns the N particle log weights of proposal
/// batch k (k = 0 initializes). `selection(k)` supplies the uniform used to
/// pick a particle from batch k.
ChainTrace pimh_kernel(const std::function<std::vector<double>(std::size_t)>& draw,
                       const std::function<double(std::size_t)>& selection,
                       std::size_t iterations, Rng& accept_rng);

struct ChainResult {
  /// Forward-time path held after each iteration.
  std::vector<Matrix> states;
  std::size_t accepted = 0;
  std::size_t iterations = 0;
  double acceptance_rate = 0.0;
  /// PIMH only: log of the held transition density estimate per iteration.
  std::vector<double> log_density_estimates;
};

/// Chain initialized with one proposal draw. Draw k uses
/// rng.split(1).split(k).split(particle); acceptance uniforms come from
/// rng.split(2), so pimh_chain with one particle replays imh_chain.
ChainResult imh_chain(const BridgeProposal& proposal, std::size_t iterations, const Rng& rng);
ChainResult pimh_chain(const BridgeProposal& proposal, std::size_t particles,
                       std::size_t iterations, const Rng& rng);

/// Diagnostics of one repetition of a method.
struct RepetitionRecord {
  double ess = 0.0;
  double log_density = 0.0;
  std::optional<double> imh_acceptance;
  std::optional<double> pimh_acceptance;
};

struct MomentSummary {
  double mean = 0.0;
  /// Unbiased sample variance; absent with fewer than two values.
  std::optional<double> variance;
};

MomentSummary summarize_values(std::span<const double> values);

struct DiagnosticsSummary {
  std::size_t repetitions = 0;
  MomentSummary ess;
  MomentSummary log_density;
  std::optional<MomentSummary> imh_acceptance;
  std::optional<MomentSummary> pimh_acceptance;
  /// Mean squared error of the log-density estimates against a known truth.
  std::optional<double> mse;
};

DiagnosticsSummary diagnostics(std::span<const RepetitionRecord> runs,
                               std::optional<double> truth = std::nullopt);

}  // namespace diffbridge

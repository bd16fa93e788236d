// Copyright 2026 The diffbridge Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffbridge/montecarlo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace diffbridge {

double log_target_density(const DiffusionModel& model, const TimeGrid& grid,
                          const Matrix& forward_path) {
  double total = 0.0;
  for (int m = 1; m <= grid.steps(); ++m) {
    total += em_log_transition(model, grid.time(m - 1), forward_path.row(m - 1).transpose(),
                               grid.time(m), forward_path.row(m).transpose());
  }
  return total;
}

WeightedEnsemble importance_weights(const BridgeProposal& proposal,
                                    const PathEnsemble& ensemble) {
  std::vector<double> log_proposal = proposal_log_densities(proposal, ensemble);
  PathEnsemble forward =
      ensemble.direction() == Direction::backward ? ensemble.reversed() : ensemble;
  const TimeGrid& grid = forward.grid();
  const std::size_t n = forward.n_paths();

  // Paths that touched the state floor left the domain of the target, so
  // they carry zero weight rather than the clamped-path EM density.
  std::vector<double> log_target(n, 0.0);
  if (proposal.model.state_floor) {
    const double floor = *proposal.model.state_floor;
    for (std::size_t i = 0; i < n; ++i) {
      for (int m = 1; m < grid.steps(); ++m) {
        if (forward.state(i, m).minCoeff() <= floor) {
          log_target[i] = -std::numeric_limits<double>::infinity();
          break;
        }
      }
    }
  }
  for (int m = 1; m <= grid.steps(); ++m) {
    const double t_prev = grid.time(m - 1);
    const double t = grid.time(m);
    for (std::size_t i = 0; i < n; ++i) {
      if (std::isinf(log_target[i])) continue;
      log_target[i] += em_log_transition(proposal.model, t_prev, forward.state(i, m - 1), t,
                                         forward.state(i, m));
    }
  }

  WeightedEnsemble out{std::move(forward), {}, std::move(log_target), std::move(log_proposal)};
  out.log_weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.log_weights[i] = out.log_target_terms[i] - out.log_proposal_terms[i];
    if (std::isnan(out.log_weights[i]) || out.log_weights[i] == std::numeric_limits<double>::infinity()) {
      std::ostringstream msg;
      msg << "importance weight of path " << i << " is not finite (log target "
          << out.log_target_terms[i] << ", log proposal " << out.log_proposal_terms[i] << ")";
      throw SimulationError(msg.str());
    }
  }
  return out;
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  const double max = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(max)) return max;
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - max);
  return max + std::log(sum);
}

double log_mean_exp(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("log_mean_exp of an empty range");
  return log_sum_exp(values) - std::log(static_cast<double>(values.size()));
}

double ess_proportion(std::span<const double> log_weights) {
  if (log_weights.empty()) throw std::invalid_argument("ess of an empty weight set");
  const double max = *std::max_element(log_weights.begin(), log_weights.end());
  if (!std::isfinite(max)) throw std::domain_error("all importance weights are zero");
  double sum = 0.0;
  double sum_sq = 0.0;
  for (double lw : log_weights) {
    const double w = std::exp(lw - max);
    sum += w;
    sum_sq += w * w;
  }
  return sum * sum / (static_cast<double>(log_weights.size()) * sum_sq);
}

double ess_proportion(const WeightedEnsemble& weighted) {
  return ess_proportion(weighted.log_weights);
}

double estimate_log_transition(const WeightedEnsemble& weighted) {
  return log_mean_exp(weighted.log_weights);
}

std::vector<double> selection_probabilities(std::span<const double> log_weights) {
  const double total = log_sum_exp(log_weights);
  if (!std::isfinite(total)) throw std::domain_error("cannot select among zero weights");
  std::vector<double> p(log_weights.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(log_weights[i] - total);
  return p;
}

std::size_t select_index(std::span<const double> log_weights, double u) {
  const std::vector<double> p = selection_probabilities(log_weights);
  double cumulative = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    cumulative += p[i];
    if (u < cumulative) return i;
  }
  // Rounding left u above the last cumulative sum.
  for (std::size_t i = p.size(); i-- > 0;) {
    if (p[i] > 0.0) return i;
  }
  return p.size() - 1;
}

double ChainTrace::acceptance_rate() const {
  return iterations == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(iterations);
}

namespace {
bool accept_move(double log_ratio, Rng& rng) {
  const double u = rng.uniform();
  return log_ratio >= 0.0 || std::log(u) < log_ratio;
}
}  // namespace

ChainTrace imh_kernel(std::span<const double> proposal_log_weights, Rng& rng) {
  if (proposal_log_weights.empty()) throw std::invalid_argument("IMH needs an initial draw");
  ChainTrace trace;
  trace.iterations = proposal_log_weights.size() - 1;
  std::size_t held = 0;
  for (std::size_t k = 1; k < proposal_log_weights.size(); ++k) {
    if (accept_move(proposal_log_weights[k] - proposal_log_weights[held], rng)) {
      held = k;
      ++trace.accepted;
    }
    trace.held_draw.push_back(held);
    trace.held_particle.push_back(0);
  }
  return trace;
}

namespace {

using StepObserver = std::function<void(std::size_t draw, bool accepted, std::size_t particle)>;

ChainTrace run_pimh(const std::function<std::vector<double>(std::size_t)>& draw,
                    const std::function<double(std::size_t)>& selection,
                    std::size_t iterations, Rng& accept_rng, const StepObserver& observe) {
  ChainTrace trace;
  trace.iterations = iterations;
  std::vector<double> lw = draw(0);
  if (lw.empty()) throw std::invalid_argument("PIMH needs at least one particle");
  double held_estimate = log_mean_exp(lw);
  std::size_t held_draw = 0;
  std::size_t held_particle =
      std::isfinite(held_estimate) ? select_index(lw, selection(0)) : 0;
  if (observe) observe(0, true, held_particle);
  for (std::size_t k = 1; k <= iterations; ++k) {
    lw = draw(k);
    const double estimate = log_mean_exp(lw);
    const bool accepted = accept_move(estimate - held_estimate, accept_rng);
    std::size_t particle = 0;
    if (accepted) {
      particle = select_index(lw, selection(k));
      held_draw = k;
      held_particle = particle;
      held_estimate = estimate;
      ++trace.accepted;
    }
    if (observe) observe(k, accepted, particle);
    trace.held_draw.push_back(held_draw);
    trace.held_particle.push_back(held_particle);
    trace.log_density_estimates.push_back(held_estimate);
  }
  return trace;
}

}  // namespace

ChainTrace pimh_kernel(const std::function<std::vector<double>(std::size_t)>& draw,
                       const std::function<double(std::size_t)>& selection,
                       std::size_t iterations, Rng& accept_rng) {
  return run_pimh(draw, selection, iterations, accept_rng, {});
}

ChainResult imh_chain(const BridgeProposal& proposal, std::size_t iterations, const Rng& rng) {
  std::vector<Rng> streams;
  streams.reserve(iterations + 1);
  for (std::size_t k = 0; k <= iterations; ++k) streams.push_back(rng.split(1).split(k).split(0));
  const WeightedEnsemble weighted =
      importance_weights(proposal, simulate_proposal(proposal, streams));
  Rng accept_rng = rng.split(2);
  const ChainTrace trace = imh_kernel(weighted.log_weights, accept_rng);

  ChainResult result;
  result.iterations = trace.iterations;
  result.accepted = trace.accepted;
  result.acceptance_rate = trace.acceptance_rate();
  result.states.reserve(trace.held_draw.size());
  for (std::size_t held : trace.held_draw) result.states.push_back(weighted.ensemble.path(held));
  return result;
}

ChainResult pimh_chain(const BridgeProposal& proposal, std::size_t particles,
                       std::size_t iterations, const Rng& rng) {
  if (particles < 1) throw std::invalid_argument("PIMH needs at least one particle");
  std::optional<WeightedEnsemble> latest;
  auto draw = [&](std::size_t k) {
    std::vector<Rng> streams;
    streams.reserve(particles);
    for (std::size_t j = 0; j < particles; ++j) streams.push_back(rng.split(1).split(k).split(j));
    latest = importance_weights(proposal, simulate_proposal(proposal, streams));
    return latest->log_weights;
  };
  auto selection = [&](std::size_t k) { return rng.split(3).split(k).uniform(); };

  ChainResult result;
  result.states.reserve(iterations);
  Matrix held_path;
  auto observe = [&](std::size_t k, bool accepted, std::size_t particle) {
    if (accepted) held_path = latest->ensemble.path(particle);
    if (k > 0) result.states.push_back(held_path);
  };
  Rng accept_rng = rng.split(2);
  const ChainTrace trace = run_pimh(draw, selection, iterations, accept_rng, observe);
  result.iterations = trace.iterations;
  result.accepted = trace.accepted;
  result.acceptance_rate = trace.acceptance_rate();
  result.log_density_estimates = trace.log_density_estimates;
  return result;
}

MomentSummary summarize_values(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("cannot summarize an empty set");
  MomentSummary s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.variance = ss / (n - 1.0);
  }
  return s;
}

DiagnosticsSummary diagnostics(std::span<const RepetitionRecord> runs,
                               std::optional<double> truth) {
  if (runs.empty()) throw std::invalid_argument("diagnostics need at least one repetition");
  DiagnosticsSummary out;
  out.repetitions = runs.size();
  std::vector<double> ess, logd, imh, pimh;
  for (const RepetitionRecord& r : runs) {
    ess.push_back(r.ess);
    logd.push_back(r.log_density);
    if (r.imh_acceptance) imh.push_back(*r.imh_acceptance);
    if (r.pimh_acceptance) pimh.push_back(*r.pimh_acceptance);
  }
  out.ess = summarize_values(ess);
  out.log_density = summarize_values(logd);
  if (!imh.empty()) out.imh_acceptance = summarize_values(imh);
  if (!pimh.empty()) out.pimh_acceptance = summarize_values(pimh);
  if (truth) {
    double se = 0.0;
    for (double v : logd) se += (v - *truth) * (v - *truth);
    out.mse = se / static_cast<double>(logd.size());
  }
  return out;
}

}  // namespace diffbridge

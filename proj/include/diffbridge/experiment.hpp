// Copyright 2026 The diffbridge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "diffbridge/bridge.hpp"
#include "diffbridge/models.hpp"
#include "diffbridge/montecarlo.hpp"
#include "diffbridge/nn.hpp"
#include "diffbridge/score.hpp"

namespace diffbridge {

inline constexpr const char* kVersionTag = "diffbridge 0.1.0";

struct ModelSpec {
  std::string name = "ou";  // ou | interest_rates | cell
  double alpha = 0.0;
  double beta = 2.0;
  int dim = 1;
  double theta = 4.0;
  double sigma_x_sq = 0.1;
};

struct EndpointPair {
  Vector x0;
  Vector xT;
};

struct TrainingSpec {
  int iterations = 500;
  int paths_per_iter = 100;
  double learning_rate = 0.01;
  double momentum = 0.99;
  double second_momentum = 0.999;
  double epsilon = 1e-8;
  NetArchitecture network;
};

struct EvaluationSpec {
  int n_samples = 1024;
  int repetitions = 100;
  int chain_iterations = 1024;
  /// PIMH is skipped when zero.
  int pimh_particles = 0;
  int pimh_iterations = 0;
  /// Threads for repetitions; results do not depend on it.
  int workers = 1;
};

struct RunConfig {
  ModelSpec model;
  double horizon = 1.0;
  double dt = 0.02;
  /// Conditioning pairs. Empty pairs are filled with model defaults.
  std::vector<EndpointPair> pairs;
  /// Train one x0-conditioned network with x0 ~ Gamma(5, 2).
  bool amortized = false;
  /// Distinct x0 per training iteration when amortized; 0 draws one per path.
  int x0_pool = 10;
  std::vector<ProposalKind> methods{ProposalKind::learned_backward,
                                    ProposalKind::forward_diffusion,
                                    ProposalKind::modified_diffusion_bridge,
                                    ProposalKind::clark_delyon_hu};
  TrainingSpec training;
  std::optional<TrainingSpec> forward_training;
  EvaluationSpec evaluation;
  std::uint64_t seed = 0;
  std::string output_dir;
  /// Seconds; 0 disables the guard.
  double max_runtime = 0.0;

  static RunConfig from_json(const nlohmann::json& j);
  [[nodiscard]] nlohmann::json to_json() const;
  /// Fills default endpoints and validates.
  void resolve();
  /// Hash of the resolved config without output_dir and max_runtime.
  [[nodiscard]] std::string hash() const;
  [[nodiscard]] TimeGrid grid() const;
  [[nodiscard]] DiffusionModel build_model() const;
  /// Closed-form log p(T, xT | 0, x0) when the model has one.
  [[nodiscard]] std::optional<double> true_log_density(const EndpointPair& pair) const;
};

struct ResultRow {
  std::size_t pair = 0;
  ProposalKind method = ProposalKind::forward_diffusion;
  int repetition = 0;
  double ess = 0.0;
  std::optional<double> imh_acceptance;
  std::optional<double> pimh_acceptance;
  double log_density = 0.0;
  std::optional<double> true_log_density;
};

struct RunResult {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<ResultRow> rows;
  std::vector<TrainReport> training;
  double wall_clock = 0.0;
  /// Effective repetitions / requested repetitions under the runtime guard.
  double repetition_scale = 1.0;
  std::size_t clamp_events = 0;
  bool valid = true;
  std::string error;
};

/// Trains once, then for each pair, method and repetition draws n_samples
/// proposals, weights them and runs the configured chains. Writes
/// results.csv, config.resolved.json, run.json and nets/ when output_dir is
/// set.
RunResult run_experiment(RunConfig config);

/// One line per row; see README for the column contract.
void write_results_csv(std::ostream& out, const RunConfig& config, const RunResult& result,
                       std::size_t cell = 0, bool header = true);

struct SweepCell {
  std::size_t index = 0;
  RunConfig config;
  std::optional<RunResult> result;
  std::string error;
};

/// Expands {"base": {...}, "axes": {"a.b": [..]}, "cell_overrides": [...]}.
std::vector<RunConfig> expand_sweep(const nlohmann::json& spec);

/// Runs every cell (per-cell derived seeds) into output_dir/cells/<i>, and
/// aggregates results.csv and cells.csv in output_dir. Failed cells are
/// recorded and skipped.
std::vector<SweepCell> sweep(const nlohmann::json& spec, const std::string& output_dir);

struct SummaryRow {
  std::string cell;
  std::string config_hash;
  std::string pair;
  std::string method;
  DiagnosticsSummary stats;
};

/// Groups results.csv rows by (cell, config, pair, method), keeping the
/// order in which methods first appear.
std::vector<SummaryRow> summarize(std::istream& results_csv);
void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows);
/// Reads dir/results.csv and writes dir/summary.csv.
std::vector<SummaryRow> summarize_directory(const std::filesystem::path& dir);

}  // namespace diffbridge

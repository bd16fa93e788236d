// Copyright 2026 The diffbridge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <utility>
#include <vector>

#include "diffbridge/bridge.hpp"
#include "diffbridge/nn.hpp"
#include "diffbridge/sde.hpp"

namespace diffbridge {

/// Rows (t, x[, x0]) with regression targets for a Sigma-weighted quadratic
/// score loss: loss = scale / 2 * sum_r |out_r - target_r|^2_{W_r}.
struct ScoreRegressionBatch {
  NetInputs inputs;
  Matrix targets;
  /// Row r holds W_r (d x d, column-major).
  Matrix weights;
  double scale = 1.0;

  [[nodiscard]] Eigen::Index rows() const { return inputs.rows(); }
};

double score_regression_loss(const ScoreRegressionBatch& batch, const Matrix& outputs);

/// Gradient over params, accumulated over fixed-size row chunks in order.
LossGradient score_regression_gradient(const ScoreNet& net, const ScoreRegressionBatch& batch,
                                       Eigen::Index chunk_rows = 4096);

/// Denoising targets on forward Euler-Maruyama paths: rows (t_m, X_{t_m}) for
/// m = 1..M, target g_M(t_{m-1}, X_{t_{m-1}}, t_m, X_{t_m}), weight
/// Sigma(t_m, X_{t_m}), scale dt / n_paths. x0 is taken from index 0 of
/// each path when `with_initial` is set.
ScoreRegressionBatch backward_regression_batch(const PathEnsemble& ensemble,
                                               const DiffusionModel& model, bool with_initial);

double backward_loss_batch(const ScoreNet& net, const PathEnsemble& ensemble,
                           const DiffusionModel& model);
LossGradient backward_loss_gradient(const ScoreNet& net, const PathEnsemble& ensemble,
                                    const DiffusionModel& model);

/// Second-stage targets on backward bridge paths for m = 1..M-1: rows
/// (T - t_m, Z_{t_m}), target the score of the modified-EM transition out of
/// Z_{t_{m-1}}, weight Sigma(t_m, Z_{t_m}), scale dt / n_paths. The final
/// transition has a zero variance multiplier and is excluded.
ScoreRegressionBatch forward_regression_batch(const PathEnsemble& bridge_ensemble,
                                              const DiffusionModel& model,
                                              const ScoreField& trained_backward);

double forward_loss_batch(const ScoreNet& net_fwd, const PathEnsemble& bridge_ensemble,
                          const DiffusionModel& model, const ScoreField& trained_backward);
LossGradient forward_loss_gradient(const ScoreNet& net_fwd, const PathEnsemble& bridge_ensemble,
                                   const DiffusionModel& model,
                                   const ScoreField& trained_backward);

using StateSampler = std::function<Vector(Rng&)>;

/// Where training paths start.
struct X0Source {
  enum class Mode { fixed, per_path, pooled };

  Mode mode = Mode::fixed;
  Vector fixed;
  StateSampler sampler;
  /// Distinct initial states per iteration in pooled mode.
  int pool_size = 10;

  static X0Source fixed_state(Vector x0);
  static X0Source per_path(StateSampler sampler);
  static X0Source pooled(StateSampler sampler, int pool_size);

  [[nodiscard]] bool amortized() const { return mode != Mode::fixed; }
  /// n initial states; pooled mode cycles through pool_size fresh draws.
  Matrix draw(std::size_t n, int dim, Rng& rng) const;
};

struct TrainConfig {
  int iterations = 500;
  int paths_per_iter = 100;
  TimeGrid grid{1.0, 50};
  X0Source x0_source;
  std::uint64_t seed = 0;
  double learning_rate = 0.01;
  double momentum = 0.99;
  double second_momentum = 0.999;
  double epsilon = 1e-8;
  /// state_dim and conditioned_on_x0 are filled in by the trainers.
  NetArchitecture arch;
  Eigen::Index chunk_rows = 4096;
  /// Abort when an iteration's loss exceeds this multiple of the first.
  double divergence_factor = 1e6;

  void validate() const;
};

struct TrainReport {
  std::vector<double> losses;
  double seconds = 0.0;
  std::uint64_t params_checksum = 0;

  /// Header "iteration,loss".
  void write_csv(std::ostream& out) const;
};

class TrainingDivergedError : public std::runtime_error {
 public:
  TrainingDivergedError(const std::string& what, TrainReport report)
      : std::runtime_error(what), report_(std::move(report)) {}
  [[nodiscard]] const TrainReport& report() const { return report_; }

 private:
  TrainReport report_;
};

std::pair<ScoreNet, TrainReport> train_backward_score(const DiffusionModel& model,
                                                      const TrainConfig& config);

/// Learns the bridge marginal score from backward bridges driven by
/// `trained_backward`. config.x0_source is ignored.
std::pair<ScoreNet, TrainReport> train_forward_score(const DiffusionModel& model,
                                                     const ScoreField& trained_backward,
                                                     const Vector& x0, const Vector& xT,
                                                     const TrainConfig& config);

}  // namespace diffbridge

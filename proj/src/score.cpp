// Copyright 2026 The diffbridge Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffbridge/score.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <sstream>

namespace diffbridge {

namespace {

// Loss over rows [first, first + count) and d loss / d outputs for them.
double chunk_loss(const ScoreRegressionBatch& batch, Eigen::Index first, const Matrix& outputs,
                  Matrix* d_outputs) {
  const int d = static_cast<int>(batch.targets.cols());
  double total = 0.0;
  Matrix w(d, d);
  for (Eigen::Index r = 0; r < outputs.rows(); ++r) {
    const Vector err = (outputs.row(r) - batch.targets.row(first + r)).transpose();
    for (int c = 0; c < d * d; ++c) w(c % d, c / d) = batch.weights(first + r, c);
    const Vector weighted = w * err;
    total += err.dot(weighted);
    if (d_outputs) d_outputs->row(r) = batch.scale * weighted.transpose();
  }
  return 0.5 * batch.scale * total;
}

NetInputs input_rows(const NetInputs& in, Eigen::Index first, Eigen::Index count) {
  NetInputs out;
  out.times = in.times.segment(first, count);
  out.states = in.states.middleRows(first, count);
  if (in.initial) out.initial = in.initial->middleRows(first, count);
  return out;
}

void store_weight(Matrix& weights, Eigen::Index r, const Matrix& w) {
  weights.row(r) = Eigen::Map<const Eigen::RowVectorXd>(w.data(), w.size());
}

}  // namespace

double score_regression_loss(const ScoreRegressionBatch& batch, const Matrix& outputs) {
  if (outputs.rows() != batch.targets.rows() || outputs.cols() != batch.targets.cols()) {
    throw std::invalid_argument("score outputs do not match the regression batch");
  }
  const double loss = chunk_loss(batch, 0, outputs, nullptr);
  if (!std::isfinite(loss)) {
    for (Eigen::Index r = 0; r < outputs.rows(); ++r) {
      if (!std::isfinite(chunk_loss(batch, r, outputs.middleRows(r, 1), nullptr))) {
        std::ostringstream msg;
        msg << "non-finite score loss at row " << r << " (t=" << batch.inputs.times[r] << ")";
        throw NonFiniteLossError(msg.str());
      }
    }
    throw NonFiniteLossError("non-finite score loss");
  }
  return loss;
}

LossGradient score_regression_gradient(const ScoreNet& net, const ScoreRegressionBatch& batch,
                                       Eigen::Index chunk_rows) {
  if (chunk_rows < 1) throw std::invalid_argument("chunk_rows must be positive");
  LossGradient total;
  total.grad = Vector::Zero(net.params().size());
  for (Eigen::Index first = 0; first < batch.rows(); first += chunk_rows) {
    const Eigen::Index count = std::min(chunk_rows, batch.rows() - first);
    const NetInputs in = input_rows(batch.inputs, first, count);
    LossGradient part = loss_gradient(net, in, [&](const Matrix& out, Matrix& d_out) {
      return chunk_loss(batch, first, out, &d_out);
    });
    total.loss += part.loss;
    total.grad += part.grad;
  }
  return total;
}

ScoreRegressionBatch backward_regression_batch(const PathEnsemble& ens,
                                               const DiffusionModel& model, bool with_initial) {
  if (ens.direction() != Direction::forward) {
    throw std::invalid_argument("backward-stage loss needs forward-simulated paths");
  }
  const TimeGrid& grid = ens.grid();
  const int steps = grid.steps();
  const int d = model.dim;
  const auto n = static_cast<Eigen::Index>(ens.n_paths());
  const Eigen::Index rows = n * steps;

  ScoreRegressionBatch batch;
  batch.inputs.times.resize(rows);
  batch.inputs.states.resize(rows, d);
  if (with_initial) batch.inputs.initial = Matrix(rows, d);
  batch.targets.resize(rows, d);
  batch.weights.resize(rows, d * d);
  batch.scale = grid.dt() / static_cast<double>(n);

  Eigen::Index r = 0;
  for (int m = 1; m <= steps; ++m) {
    const double t_prev = grid.time(m - 1);
    const double t = grid.time(m);
    for (Eigen::Index i = 0; i < n; ++i, ++r) {
      const auto path = static_cast<std::size_t>(i);
      const Vector x_prev = ens.state(path, m - 1);
      const Vector x = ens.state(path, m);
      batch.inputs.times[r] = t;
      batch.inputs.states.row(r) = x.transpose();
      if (with_initial) batch.inputs.initial->row(r) = ens.state(path, 0).transpose();
      batch.targets.row(r) = em_transition_score(model, t_prev, x_prev, t, x).transpose();
      store_weight(batch.weights, r, model.sigma_sq(t, x));
    }
  }
  return batch;
}

double backward_loss_batch(const ScoreNet& net, const PathEnsemble& ensemble,
                           const DiffusionModel& model) {
  const auto batch = backward_regression_batch(ensemble, model, net.arch().conditioned_on_x0);
  return score_regression_loss(batch, net.forward(batch.inputs));
}

LossGradient backward_loss_gradient(const ScoreNet& net, const PathEnsemble& ensemble,
                                    const DiffusionModel& model) {
  const auto batch = backward_regression_batch(ensemble, model, net.arch().conditioned_on_x0);
  return score_regression_gradient(net, batch);
}

ScoreRegressionBatch forward_regression_batch(const PathEnsemble& ens,
                                              const DiffusionModel& model,
                                              const ScoreField& trained_backward) {
  if (ens.direction() != Direction::backward) {
    throw std::invalid_argument("forward-stage loss needs backward bridge paths");
  }
  const TimeGrid& grid = ens.grid();
  const int steps = grid.steps();
  const int d = model.dim;
  const double T = grid.horizon();
  const double dt = grid.dt();
  const auto n = static_cast<Eigen::Index>(ens.n_paths());
  const Eigen::Index rows = n * (steps - 1);

  ScoreRegressionBatch batch;
  batch.inputs.times.resize(rows);
  batch.inputs.states.resize(rows, d);
  batch.targets.resize(rows, d);
  batch.weights.resize(rows, d * d);
  batch.scale = dt / static_cast<double>(n);

  Eigen::Index r = 0;
  for (int m = 1; m < steps; ++m) {
    const double t_prev = grid.time(m - 1);
    const double t = grid.time(m);
    const Matrix prev = ens.slice(m - 1);
    const Matrix drift = backward_drift(trained_backward, model, T, t_prev, prev);
    const double var_scale = dt * variance_multiplier(grid, m);
    for (Eigen::Index i = 0; i < n; ++i, ++r) {
      const Vector z_prev = prev.row(i).transpose();
      const Vector z = ens.state(static_cast<std::size_t>(i), m);
      const Vector mean = z_prev + dt * drift.row(i).transpose();
      batch.inputs.times[r] = T - t;
      batch.inputs.states.row(r) = z.transpose();
      batch.targets.row(r) =
          gaussian_score(z, mean, var_scale * model.sigma_sq(T - t_prev, z_prev)).transpose();
      store_weight(batch.weights, r, model.sigma_sq(t, z));
    }
  }
  return batch;
}

double forward_loss_batch(const ScoreNet& net_fwd, const PathEnsemble& bridge_ensemble,
                          const DiffusionModel& model, const ScoreField& trained_backward) {
  const auto batch = forward_regression_batch(bridge_ensemble, model, trained_backward);
  return score_regression_loss(batch, net_fwd.forward(batch.inputs));
}

LossGradient forward_loss_gradient(const ScoreNet& net_fwd, const PathEnsemble& bridge_ensemble,
                                   const DiffusionModel& model,
                                   const ScoreField& trained_backward) {
  const auto batch = forward_regression_batch(bridge_ensemble, model, trained_backward);
  return score_regression_gradient(net_fwd, batch);
}

// ---- training --------------------------------------------------------------

X0Source X0Source::fixed_state(Vector x0) {
  X0Source s;
  s.mode = Mode::fixed;
  s.fixed = std::move(x0);
  return s;
}

X0Source X0Source::per_path(StateSampler sampler) {
  X0Source s;
  s.mode = Mode::per_path;
  s.sampler = std::move(sampler);
  return s;
}

X0Source X0Source::pooled(StateSampler sampler, int pool_size) {
  X0Source s;
  s.mode = Mode::pooled;
  s.sampler = std::move(sampler);
  s.pool_size = pool_size;
  return s;
}

Matrix X0Source::draw(std::size_t n, int dim, Rng& rng) const {
  Matrix out(static_cast<Eigen::Index>(n), dim);
  switch (mode) {
    case Mode::fixed:
      if (fixed.size() != dim) throw std::invalid_argument("fixed x0 dimension mismatch");
      out = fixed.transpose().replicate(out.rows(), 1);
      break;
    case Mode::per_path:
      for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = sampler(rng).transpose();
      break;
    case Mode::pooled: {
      Matrix pool(pool_size, dim);
      for (int k = 0; k < pool_size; ++k) pool.row(k) = sampler(rng).transpose();
      for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = pool.row(i % pool_size);
      break;
    }
  }
  return out;
}

void TrainConfig::validate() const {
  if (iterations < 0) throw std::invalid_argument("iterations must be nonnegative");
  if (paths_per_iter < 1) throw std::invalid_argument("paths_per_iter must be at least 1");
  if (x0_source.amortized() && !x0_source.sampler) {
    throw std::invalid_argument("amortized training needs an x0 sampler");
  }
  if (x0_source.mode == X0Source::Mode::pooled && x0_source.pool_size < 1) {
    throw std::invalid_argument("pool_size must be at least 1");
  }
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
}

void TrainReport::write_csv(std::ostream& out) const {
  out << "iteration,loss\n";
  out.precision(17);
  for (std::size_t i = 0; i < losses.size(); ++i) out << i << ',' << losses[i] << '\n';
}

namespace {

template <typename MakeBatch>
std::pair<ScoreNet, TrainReport> run_training(ScoreNet net, const TrainConfig& config,
                                              MakeBatch&& make_batch) {
  const auto start = std::chrono::steady_clock::now();
  AdamState adam = AdamState::for_params(net.params().size(), config.learning_rate,
                                         config.momentum, config.second_momentum,
                                         config.epsilon);
  TrainReport report;
  report.losses.reserve(static_cast<std::size_t>(config.iterations));
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  for (int it = 0; it < config.iterations; ++it) {
    const ScoreRegressionBatch batch = make_batch(it);
    LossGradient lg;
    try {
      lg = score_regression_gradient(net, batch, config.chunk_rows);
    } catch (const NonFiniteLossError& e) {
      report.seconds = elapsed();
      report.params_checksum = net.checksum();
      throw TrainingDivergedError("iteration " + std::to_string(it) + ": " + e.what(),
                                  std::move(report));
    }
    report.losses.push_back(lg.loss);
    const double first = report.losses.front();
    if (first > 0.0 && lg.loss > config.divergence_factor * first) {
      report.seconds = elapsed();
      report.params_checksum = net.checksum();
      throw TrainingDivergedError(
          "training diverged at iteration " + std::to_string(it) + " (loss " +
              std::to_string(lg.loss) + " vs initial " + std::to_string(first) + ")",
          std::move(report));
    }
    adam_step(net.params(), lg.grad, adam);
  }
  report.seconds = elapsed();
  report.params_checksum = net.checksum();
  return {std::move(net), std::move(report)};
}

}  // namespace

std::pair<ScoreNet, TrainReport> train_backward_score(const DiffusionModel& model,
                                                      const TrainConfig& config) {
  config.validate();
  NetArchitecture arch = config.arch;
  arch.state_dim = model.dim;
  arch.conditioned_on_x0 = config.x0_source.amortized();
  const Rng root(config.seed);
  Rng init = root.split(0);
  ScoreNet net(arch, init());
  const auto n = static_cast<std::size_t>(config.paths_per_iter);
  return run_training(std::move(net), config, [&](int it) {
    Rng x0_rng = root.split(2).split(static_cast<std::uint64_t>(it));
    const Matrix x0s = config.x0_source.draw(n, model.dim, x0_rng);
    const PathEnsemble ens =
        simulate_forward(model, x0s, config.grid, root.split(1).split(static_cast<std::uint64_t>(it)));
    return backward_regression_batch(ens, model, arch.conditioned_on_x0);
  });
}

std::pair<ScoreNet, TrainReport> train_forward_score(const DiffusionModel& model,
                                                     const ScoreField& trained_backward,
                                                     const Vector& x0, const Vector& xT,
                                                     const TrainConfig& config) {
  config.validate();
  if (!trained_backward) throw std::invalid_argument("forward stage needs a backward score");
  NetArchitecture arch = config.arch;
  arch.state_dim = model.dim;
  arch.conditioned_on_x0 = false;
  const Rng root(config.seed);
  Rng init = root.split(0);
  ScoreNet net(arch, init());

  BridgeProposal proposal;
  proposal.kind = ProposalKind::learned_backward;
  proposal.model = model;
  proposal.x0 = x0;
  proposal.xT = xT;
  proposal.grid = config.grid;
  proposal.backward_score = trained_backward;
  const auto n = static_cast<std::size_t>(config.paths_per_iter);
  return run_training(std::move(net), config, [&](int it) {
    const PathEnsemble ens =
        simulate_backward_bridge(proposal, n, root.split(1).split(static_cast<std::uint64_t>(it)));
    return forward_regression_batch(ens, model, trained_backward);
  });
}

}  // namespace diffbridge

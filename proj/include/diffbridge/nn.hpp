// Copyright 2026 The diffbridge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffbridge/sde.hpp"

namespace diffbridge {

/// Layer widths of the score network.
///
/// Three MLP blocks: the time block embeds the sinusoidal encoding of t, the
/// state block embeds x (concatenated with x0 when conditioned), and the head
/// maps [time embedding, state embedding] to R^d. Hidden layers use Leaky
/// ReLU; the last layer of every block is affine.
struct NetArchitecture {
  int state_dim = 1;
  int encode_dim = 32;
  std::vector<int> time_hidden{32};
  int time_embed = 32;
  std::vector<int> state_hidden{32};
  int state_embed = 32;
  std::vector<int> head_hidden{128, 128};
  double leaky_slope = 0.01;
  bool conditioned_on_x0 = false;

  [[nodiscard]] std::size_t parameter_count() const;
  void validate() const;

  bool operator==(const NetArchitecture&) const = default;
};

/// Interleaved sin/cos features at frequencies 10000^{-2k/encode_dim}.
Vector time_encode(double t, int encode_dim);

/// Rows of evaluation points for a batched network call.
struct NetInputs {
  Vector times;
  Matrix states;
  /// Conditioning states; present iff the network is conditioned on x0.
  std::optional<Matrix> initial;

  [[nodiscard]] Eigen::Index rows() const { return times.size(); }
};

class ScoreNet {
 public:
  /// Uniform fan-in initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  ScoreNet(NetArchitecture arch, std::uint64_t seed);
  ScoreNet(NetArchitecture arch, Vector params);

  static ScoreNet zeros(NetArchitecture arch);

  [[nodiscard]] const NetArchitecture& arch() const { return arch_; }
  [[nodiscard]] const Vector& params() const { return params_; }
  Vector& params() { return params_; }

  [[nodiscard]] Vector forward(double t, const Vector& x,
                               const std::optional<Vector>& x0 = std::nullopt) const;
  [[nodiscard]] Matrix forward(const NetInputs& inputs) const;

  /// FNV-1a over the parameter bytes.
  [[nodiscard]] std::uint64_t checksum() const;

 private:
  friend struct NetPass;
  NetArchitecture arch_;
  Vector params_;
};

class NonFiniteLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Scalar loss of the network outputs. Returns the loss and writes
/// d loss / d outputs into the second argument (same shape as outputs).
using LossHead = std::function<double(const Matrix& outputs, Matrix& d_outputs)>;

struct LossGradient {
  double loss = 0.0;
  Vector grad;
};

/// Reverse-mode gradient of loss_head(net(inputs)) with respect to params.
LossGradient loss_gradient(const ScoreNet& net, const NetInputs& inputs,
                           const LossHead& loss_head);

struct AdamState {
  Vector first_moment;
  Vector second_moment;
  long step_count = 0;
  double learning_rate = 0.01;
  double momentum = 0.99;
  double second_momentum = 0.999;
  double epsilon = 1e-8;

  static AdamState for_params(Eigen::Index n, double learning_rate = 0.01,
                              double momentum = 0.99, double second_momentum = 0.999,
                              double epsilon = 1e-8);
};

/// Bias-corrected adaptive-moment update in place.
void adam_step(Vector& params, const Vector& grad, AdamState& state);

/// Binary container: see README ("Network file format").
void save_net(const ScoreNet& net, std::ostream& out);
ScoreNet load_net(std::istream& in);
void save_net(const ScoreNet& net, const std::string& path);
ScoreNet load_net(const std::string& path);

}  // namespace diffbridge

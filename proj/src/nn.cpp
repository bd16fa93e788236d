// Copyright 2026 The diffbridge Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffbridge/nn.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace diffbridge {

namespace {

using ConstWeights = Eigen::Map<const RowMatrix>;
using Weights = Eigen::Map<RowMatrix>;

struct LayerSpec {
  Eigen::Index offset;  // first weight; the bias follows the out x in block
  int in;
  int out;
  bool activate;
};

using Block = std::vector<LayerSpec>;

Block make_block(int in, const std::vector<int>& hidden, int out, Eigen::Index& offset) {
  Block block;
  int width = in;
  auto push = [&](int next, bool activate) {
    block.push_back({offset, width, next, activate});
    offset += static_cast<Eigen::Index>(width) * next + next;
    width = next;
  };
  for (int h : hidden) push(h, true);
  push(out, false);
  return block;
}

std::array<Block, 3> layout(const NetArchitecture& a) {
  Eigen::Index offset = 0;
  const int state_in = a.conditioned_on_x0 ? 2 * a.state_dim : a.state_dim;
  Block time = make_block(a.encode_dim, a.time_hidden, a.time_embed, offset);
  Block state = make_block(state_in, a.state_hidden, a.state_embed, offset);
  Block head = make_block(a.time_embed + a.state_embed, a.head_hidden, a.state_dim, offset);
  return {std::move(time), std::move(state), std::move(head)};
}

Matrix encode_rows(const Vector& times, int encode_dim) {
  Matrix out(times.size(), encode_dim);
  const int half = encode_dim / 2;
  for (int k = 0; k < half; ++k) {
    const double freq = std::pow(10000.0, -2.0 * k / encode_dim);
    for (Eigen::Index r = 0; r < times.size(); ++r) {
      out(r, 2 * k) = std::sin(times[r] * freq);
      out(r, 2 * k + 1) = std::cos(times[r] * freq);
    }
  }
  return out;
}

}  // namespace

std::size_t NetArchitecture::parameter_count() const {
  const auto blocks = layout(*this);
  const LayerSpec& last = blocks[2].back();
  return static_cast<std::size_t>(last.offset + static_cast<Eigen::Index>(last.in) * last.out +
                                  last.out);
}

void NetArchitecture::validate() const {
  auto positive = [](int v) { return v > 0; };
  bool ok = state_dim > 0 && encode_dim > 0 && encode_dim % 2 == 0 && time_embed > 0 &&
            state_embed > 0 && leaky_slope >= 0.0 && leaky_slope < 1.0;
  for (const auto* widths : {&time_hidden, &state_hidden, &head_hidden}) {
    for (int w : *widths) ok = ok && positive(w);
  }
  if (!ok) throw std::invalid_argument("invalid network architecture");
}

Vector time_encode(double t, int encode_dim) {
  if (encode_dim <= 0 || encode_dim % 2 != 0) {
    throw std::invalid_argument("encode_dim must be a positive even integer");
  }
  Vector times(1);
  times[0] = t;
  return encode_rows(times, encode_dim).row(0).transpose();
}

// Forward pass that keeps what the reverse sweep needs.
struct NetPass {
  struct Cache {
    std::vector<Matrix> inputs;
    std::vector<Matrix> pre_activations;
  };

  const ScoreNet& net;
  std::array<Block, 3> blocks;
  std::array<Cache, 3> caches;

  explicit NetPass(const ScoreNet& n) : net(n), blocks(layout(n.arch())) {}

  Matrix run_block(int b, Matrix a, bool keep) {
    const double slope = net.arch().leaky_slope;
    const double* p = net.params().data();
    for (const LayerSpec& layer : blocks[b]) {
      ConstWeights w(p + layer.offset, layer.out, layer.in);
      Eigen::Map<const Eigen::RowVectorXd> bias(
          p + layer.offset + static_cast<Eigen::Index>(layer.in) * layer.out, layer.out);
      Matrix z = a * w.transpose();
      z.rowwise() += bias;
      if (keep) caches[b].inputs.push_back(std::move(a));
      if (layer.activate) {
        a = (z.array() > 0.0).select(z, slope * z);
        if (keep) caches[b].pre_activations.push_back(std::move(z));
      } else {
        a = std::move(z);
        if (keep) caches[b].pre_activations.emplace_back();
      }
    }
    return a;
  }

  // Accumulates parameter gradients of block b into grad; returns d input.
  Matrix reverse_block(int b, Matrix d_out, Vector& grad) {
    const double slope = net.arch().leaky_slope;
    const double* p = net.params().data();
    for (int l = static_cast<int>(blocks[b].size()) - 1; l >= 0; --l) {
      const LayerSpec& layer = blocks[b][l];
      if (layer.activate) {
        const Matrix& z = caches[b].pre_activations[l];
        d_out = (z.array() > 0.0).select(d_out, slope * d_out);
      }
      const Matrix& a = caches[b].inputs[l];
      Weights gw(grad.data() + layer.offset, layer.out, layer.in);
      gw.noalias() += d_out.transpose() * a;
      Eigen::Map<Eigen::RowVectorXd> gb(
          grad.data() + layer.offset + static_cast<Eigen::Index>(layer.in) * layer.out,
          layer.out);
      gb += d_out.colwise().sum();
      ConstWeights w(p + layer.offset, layer.out, layer.in);
      d_out = d_out * w;
    }
    return d_out;
  }

  Matrix forward(const NetInputs& inputs, bool keep) {
    const NetArchitecture& a = net.arch();
    const Eigen::Index n = inputs.rows();
    if (inputs.states.rows() != n || inputs.states.cols() != a.state_dim) {
      throw std::invalid_argument("network input dimension mismatch");
    }
    if (a.conditioned_on_x0 != inputs.initial.has_value()) {
      throw std::invalid_argument(a.conditioned_on_x0
                                      ? "conditioned network requires x0"
                                      : "unconditioned network given x0");
    }
    Matrix time_emb = run_block(0, encode_rows(inputs.times, a.encode_dim), keep);
    Matrix state_in;
    if (a.conditioned_on_x0) {
      const Matrix& x0 = *inputs.initial;
      if (x0.rows() != n || x0.cols() != a.state_dim) {
        throw std::invalid_argument("network x0 dimension mismatch");
      }
      state_in.resize(n, 2 * a.state_dim);
      state_in << inputs.states, x0;
    } else {
      state_in = inputs.states;
    }
    Matrix state_emb = run_block(1, std::move(state_in), keep);
    Matrix head_in(n, a.time_embed + a.state_embed);
    head_in << time_emb, state_emb;
    return run_block(2, std::move(head_in), keep);
  }

  Vector backward(const Matrix& d_out) {
    const NetArchitecture& a = net.arch();
    Vector grad = Vector::Zero(static_cast<Eigen::Index>(a.parameter_count()));
    Matrix d_head = reverse_block(2, d_out, grad);
    reverse_block(0, d_head.leftCols(a.time_embed), grad);
    reverse_block(1, d_head.rightCols(a.state_embed), grad);
    return grad;
  }
};

ScoreNet::ScoreNet(NetArchitecture arch, std::uint64_t seed) : arch_(std::move(arch)) {
  arch_.validate();
  params_.resize(static_cast<Eigen::Index>(arch_.parameter_count()));
  Rng rng(seed);
  for (const Block& block : layout(arch_)) {
    for (const LayerSpec& layer : block) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
      const Eigen::Index count = static_cast<Eigen::Index>(layer.in) * layer.out + layer.out;
      for (Eigen::Index k = 0; k < count; ++k) {
        params_[layer.offset + k] = bound * (2.0 * rng.uniform() - 1.0);
      }
    }
  }
}

ScoreNet::ScoreNet(NetArchitecture arch, Vector params)
    : arch_(std::move(arch)), params_(std::move(params)) {
  arch_.validate();
  if (static_cast<std::size_t>(params_.size()) != arch_.parameter_count()) {
    throw std::invalid_argument("parameter count does not match architecture");
  }
}

ScoreNet ScoreNet::zeros(NetArchitecture arch) {
  const auto n = static_cast<Eigen::Index>(arch.parameter_count());
  return ScoreNet(std::move(arch), Vector::Zero(n));
}

Vector ScoreNet::forward(double t, const Vector& x, const std::optional<Vector>& x0) const {
  NetInputs in;
  in.times = Vector::Constant(1, t);
  in.states = x.transpose();
  if (x0) in.initial = Matrix(x0->transpose());
  return forward(in).row(0).transpose();
}

Matrix ScoreNet::forward(const NetInputs& inputs) const {
  NetPass pass(*this);
  return pass.forward(inputs, false);
}

std::uint64_t ScoreNet::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(params_.data());
  for (std::size_t i = 0; i < static_cast<std::size_t>(params_.size()) * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

LossGradient loss_gradient(const ScoreNet& net, const NetInputs& inputs,
                           const LossHead& loss_head) {
  NetPass pass(net);
  const Matrix out = pass.forward(inputs, true);
  Matrix d_out = Matrix::Zero(out.rows(), out.cols());
  LossGradient result;
  result.loss = loss_head(out, d_out);
  if (!std::isfinite(result.loss) || !d_out.allFinite()) {
    throw NonFiniteLossError("loss or its output gradient is not finite");
  }
  result.grad = pass.backward(d_out);
  return result;
}

AdamState AdamState::for_params(Eigen::Index n, double learning_rate, double momentum,
                                double second_momentum, double epsilon) {
  AdamState s;
  s.first_moment = Vector::Zero(n);
  s.second_moment = Vector::Zero(n);
  s.learning_rate = learning_rate;
  s.momentum = momentum;
  s.second_momentum = second_momentum;
  s.epsilon = epsilon;
  return s;
}

void adam_step(Vector& params, const Vector& grad, AdamState& state) {
  if (grad.size() != params.size()) throw std::invalid_argument("gradient size mismatch");
  if (state.first_moment.size() != params.size()) {
    state.first_moment = Vector::Zero(params.size());
    state.second_moment = Vector::Zero(params.size());
  }
  ++state.step_count;
  state.first_moment = state.momentum * state.first_moment + (1.0 - state.momentum) * grad;
  state.second_moment = state.second_momentum * state.second_moment +
                        (1.0 - state.second_momentum) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.momentum, static_cast<double>(state.step_count));
  const double c2 =
      1.0 - std::pow(state.second_momentum, static_cast<double>(state.step_count));
  params.array() -= state.learning_rate * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + state.epsilon);
}

// ---- serialization -------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little,
              "network files are little-endian; add byte swapping for this target");

constexpr char kMagic[8] = {'D', 'B', 'S', 'C', 'O', 'R', 'E', '\0'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("truncated network file");
  return value;
}

void put_widths(std::ostream& out, const std::vector<int>& widths) {
  put<std::int32_t>(out, static_cast<std::int32_t>(widths.size()));
  for (int w : widths) put<std::int32_t>(out, w);
}

std::vector<int> get_widths(std::istream& in) {
  const auto n = get<std::int32_t>(in);
  if (n < 0 || n > 1024) throw std::runtime_error("corrupt layer count in network file");
  std::vector<int> widths(static_cast<std::size_t>(n));
  for (int& w : widths) w = get<std::int32_t>(in);
  return widths;
}

}  // namespace

void save_net(const ScoreNet& net, std::ostream& out) {
  const NetArchitecture& a = net.arch();
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kFormatVersion);
  put<std::int32_t>(out, a.state_dim);
  put<std::int32_t>(out, a.encode_dim);
  put_widths(out, a.time_hidden);
  put<std::int32_t>(out, a.time_embed);
  put_widths(out, a.state_hidden);
  put<std::int32_t>(out, a.state_embed);
  put_widths(out, a.head_hidden);
  put<double>(out, a.leaky_slope);
  put<std::uint8_t>(out, a.conditioned_on_x0 ? 1 : 0);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(net.params().size()));
  out.write(reinterpret_cast<const char*>(net.params().data()),
            static_cast<std::streamsize>(net.params().size() * sizeof(double)));
  if (!out) throw std::runtime_error("failed writing network file");
}

ScoreNet load_net(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a score network file");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kFormatVersion) {
    throw std::runtime_error("unsupported network file version " + std::to_string(version));
  }
  NetArchitecture a;
  a.state_dim = get<std::int32_t>(in);
  a.encode_dim = get<std::int32_t>(in);
  a.time_hidden = get_widths(in);
  a.time_embed = get<std::int32_t>(in);
  a.state_hidden = get_widths(in);
  a.state_embed = get<std::int32_t>(in);
  a.head_hidden = get_widths(in);
  a.leaky_slope = get<double>(in);
  a.conditioned_on_x0 = get<std::uint8_t>(in) != 0;
  a.validate();
  const auto count = get<std::uint64_t>(in);
  if (count != a.parameter_count()) {
    throw std::runtime_error("network file parameter count does not match its architecture");
  }
  Vector params(static_cast<Eigen::Index>(count));
  in.read(reinterpret_cast<char*>(params.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw std::runtime_error("truncated network file");
  return ScoreNet(std::move(a), std::move(params));
}

void save_net(const ScoreNet& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  save_net(net, out);
}

ScoreNet load_net(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return load_net(in);
}

}  // namespace diffbridge

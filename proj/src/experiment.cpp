// Copyright 2026 The diffbridge Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffbridge/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace diffbridge {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw std::invalid_argument("unknown key '" + key + "' in " + where);
    }
  }
}

Vector vector_from_json(const json& j) {
  std::vector<double> v = j.is_number() ? std::vector<double>{j.get<double>()}
                                        : j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

NetArchitecture network_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"encode_dim", "time_hidden", "time_embed", "state_hidden", "state_embed",
                       "head_hidden", "leaky_slope"},
                      "network");
  NetArchitecture a;
  a.encode_dim = j.value("encode_dim", a.encode_dim);
  a.time_hidden = j.value("time_hidden", a.time_hidden);
  a.time_embed = j.value("time_embed", a.time_embed);
  a.state_hidden = j.value("state_hidden", a.state_hidden);
  a.state_embed = j.value("state_embed", a.state_embed);
  a.head_hidden = j.value("head_hidden", a.head_hidden);
  a.leaky_slope = j.value("leaky_slope", a.leaky_slope);
  return a;
}

json network_to_json(const NetArchitecture& a) {
  return {{"encode_dim", a.encode_dim},   {"time_hidden", a.time_hidden},
          {"time_embed", a.time_embed},   {"state_hidden", a.state_hidden},
          {"state_embed", a.state_embed}, {"head_hidden", a.head_hidden},
          {"leaky_slope", a.leaky_slope}};
}

TrainingSpec training_from_json(const json& j, TrainingSpec t) {
  reject_unknown_keys(j,
                      {"iterations", "paths_per_iter", "learning_rate", "momentum",
                       "second_momentum", "epsilon", "network"},
                      "training");
  t.iterations = j.value("iterations", t.iterations);
  t.paths_per_iter = j.value("paths_per_iter", t.paths_per_iter);
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  t.momentum = j.value("momentum", t.momentum);
  t.second_momentum = j.value("second_momentum", t.second_momentum);
  t.epsilon = j.value("epsilon", t.epsilon);
  if (j.contains("network")) t.network = network_from_json(j.at("network"));
  return t;
}

json training_to_json(const TrainingSpec& t) {
  return {{"iterations", t.iterations},
          {"paths_per_iter", t.paths_per_iter},
          {"learning_rate", t.learning_rate},
          {"momentum", t.momentum},
          {"second_momentum", t.second_momentum},
          {"epsilon", t.epsilon},
          {"network", network_to_json(t.network)}};
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_optional(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

std::string format_vector(const Vector& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i > 0) out += ' ';
    out += format_double(v(i));
  }
  return out;
}

/// Runs fn(0..n-1) on up to `workers` threads; rethrows the first failure.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!first) first = std::current_exception();
          failed = true;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

TrainConfig make_train_config(const TrainingSpec& spec, const TimeGrid& grid, std::uint64_t seed) {
  TrainConfig c;
  c.iterations = spec.iterations;
  c.paths_per_iter = spec.paths_per_iter;
  c.grid = grid;
  c.seed = seed;
  c.learning_rate = spec.learning_rate;
  c.momentum = spec.momentum;
  c.second_momentum = spec.second_momentum;
  c.epsilon = spec.epsilon;
  c.arch = spec.network;
  return c;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

bool needs_backward_net(const RunConfig& c) {
  return std::any_of(c.methods.begin(), c.methods.end(), [](ProposalKind k) {
    return k == ProposalKind::learned_backward || k == ProposalKind::learned_forward;
  });
}

bool needs_forward_net(const RunConfig& c) {
  return std::find(c.methods.begin(), c.methods.end(), ProposalKind::learned_forward) !=
         c.methods.end();
}

}  // namespace

// ---- RunConfig --------------------------------------------------------------

RunConfig RunConfig::from_json(const json& j) {
  reject_unknown_keys(j,
                      {"model", "horizon", "steps", "dt", "pairs", "x0", "xT", "amortized",
                       "x0_sampler", "x0_pool", "methods", "training", "forward_training",
                       "evaluation", "seed", "output_dir", "max_runtime"},
                      "config");
  RunConfig c;
  if (j.contains("model")) {
    const json& m = j.at("model");
    if (m.is_string()) {
      c.model.name = m.get<std::string>();
    } else {
      reject_unknown_keys(m, {"name", "alpha", "beta", "dim", "theta", "sigma_x_sq"}, "model");
      c.model.name = m.value("name", c.model.name);
      c.model.alpha = m.value("alpha", c.model.alpha);
      c.model.beta = m.value("beta", c.model.beta);
      c.model.dim = m.value("dim", c.model.dim);
      c.model.theta = m.value("theta", c.model.theta);
      c.model.sigma_x_sq = m.value("sigma_x_sq", c.model.sigma_x_sq);
    }
  }
  c.horizon = j.value("horizon", c.horizon);
  if (j.contains("steps")) {
    const int steps = j.at("steps").get<int>();
    if (steps < 2) throw std::invalid_argument("steps must be at least 2");
    c.dt = c.horizon / steps;
  } else {
    c.dt = j.value("dt", c.dt);
  }
  if (j.contains("pairs")) {
    for (const json& p : j.at("pairs")) {
      reject_unknown_keys(p, {"x0", "xT"}, "pairs entry");
      c.pairs.push_back({vector_from_json(p.at("x0")), vector_from_json(p.at("xT"))});
    }
  }
  if (j.contains("x0") || j.contains("xT")) {
    if (j.contains("pairs")) throw std::invalid_argument("give either pairs or x0/xT");
    if (!j.contains("x0") || !j.contains("xT")) {
      throw std::invalid_argument("x0 and xT must be given together");
    }
    c.pairs.push_back({vector_from_json(j.at("x0")), vector_from_json(j.at("xT"))});
  }
  c.amortized = j.value("amortized", c.amortized);
  if (j.contains("x0_sampler") && j.at("x0_sampler").get<std::string>() != "gamma_5_2") {
    throw std::invalid_argument("x0_sampler must be gamma_5_2");
  }
  c.x0_pool = j.value("x0_pool", c.x0_pool);
  if (j.contains("methods")) {
    c.methods.clear();
    for (const json& m : j.at("methods")) c.methods.push_back(parse_proposal_kind(m.get<std::string>()));
  }
  if (j.contains("training")) c.training = training_from_json(j.at("training"), c.training);
  if (j.contains("forward_training") && !j.at("forward_training").is_null()) {
    c.forward_training = training_from_json(j.at("forward_training"), c.training);
  }
  if (j.contains("evaluation")) {
    const json& e = j.at("evaluation");
    reject_unknown_keys(e,
                        {"n_samples", "repetitions", "chain_iterations", "pimh_particles",
                         "pimh_iterations", "workers"},
                        "evaluation");
    c.evaluation.n_samples = e.value("n_samples", c.evaluation.n_samples);
    c.evaluation.repetitions = e.value("repetitions", c.evaluation.repetitions);
    c.evaluation.chain_iterations = e.value("chain_iterations", c.evaluation.chain_iterations);
    c.evaluation.pimh_particles = e.value("pimh_particles", c.evaluation.pimh_particles);
    c.evaluation.pimh_iterations = e.value("pimh_iterations", c.evaluation.pimh_iterations);
    c.evaluation.workers = e.value("workers", c.evaluation.workers);
  }
  c.seed = j.value("seed", c.seed);
  c.output_dir = j.value("output_dir", c.output_dir);
  c.max_runtime = j.value("max_runtime", c.max_runtime);
  return c;
}

json RunConfig::to_json() const {
  json pairs_json = json::array();
  for (const EndpointPair& p : pairs) {
    pairs_json.push_back({{"x0", vector_to_json(p.x0)}, {"xT", vector_to_json(p.xT)}});
  }
  json methods_json = json::array();
  for (ProposalKind k : methods) methods_json.push_back(std::string(to_string(k)));
  json model_json = {{"name", model.name}, {"dim", model.dim}};
  if (model.name == "ou") {
    model_json["alpha"] = model.alpha;
    model_json["beta"] = model.beta;
  } else if (model.name == "interest_rates") {
    model_json["theta"] = model.theta;
  } else if (model.name == "cell") {
    model_json["sigma_x_sq"] = model.sigma_x_sq;
  }
  json j = {{"model", model_json},
            {"horizon", horizon},
            {"dt", dt},
            {"steps", grid().steps()},
            {"pairs", pairs_json},
            {"amortized", amortized},
            {"x0_sampler", "gamma_5_2"},
            {"x0_pool", x0_pool},
            {"methods", methods_json},
            {"training", training_to_json(training)},
            {"evaluation",
             {{"n_samples", evaluation.n_samples},
              {"repetitions", evaluation.repetitions},
              {"chain_iterations", evaluation.chain_iterations},
              {"pimh_particles", evaluation.pimh_particles},
              {"pimh_iterations", evaluation.pimh_iterations},
              {"workers", evaluation.workers}}},
            {"seed", seed},
            {"output_dir", output_dir},
            {"max_runtime", max_runtime}};
  j["forward_training"] = forward_training ? training_to_json(*forward_training) : json(nullptr);
  return j;
}

void RunConfig::resolve() {
  if (model.name == "interest_rates" || model.name == "cell") {
    const int fixed = model.name == "cell" ? 2 : 1;
    if (model.dim != 1 && model.dim != fixed) {
      throw std::invalid_argument(model.name + " has fixed dimension " + std::to_string(fixed));
    }
    model.dim = fixed;
  } else if (model.name != "ou") {
    throw std::invalid_argument("unknown model '" + model.name + "'");
  }
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw std::invalid_argument("horizon must be positive");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("dt must be positive");
  // Snap dt to the grid actually used.
  dt = grid().dt();
  if (methods.empty()) throw std::invalid_argument("methods must be nonempty");
  for (std::size_t i = 0; i < methods.size(); ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      if (methods[i] == methods[k]) throw std::invalid_argument("duplicate method");
    }
  }

  if (pairs.empty()) {
    const int d = model.dim;
    if (model.name == "ou") {
      pairs.push_back({Vector::Ones(d), Vector::Ones(d)});
    } else if (model.name == "interest_rates") {
      pairs.push_back({Vector::Constant(1, 2.0), Vector::Constant(1, 2.0)});
    } else {
      const CellParams cp{std::sqrt(model.sigma_x_sq)};
      std::optional<Vector> target;
      for (const Vector& r : find_cell_fixed_points(cp.threshold)) {
        if (r(0) < r(1) && std::abs(r(0) - r(1)) > 1e-6) target = r;
      }
      if (!target) throw std::runtime_error("no asymmetric stable fixed point found");
      pairs.push_back({Vector::Ones(2), *target});
    }
  }
  for (const EndpointPair& p : pairs) {
    if (p.x0.size() != model.dim || p.xT.size() != model.dim) {
      throw std::invalid_argument("endpoint dimension does not match the model");
    }
    if (!p.x0.allFinite() || !p.xT.allFinite()) throw std::invalid_argument("endpoints must be finite");
    if (model.name == "interest_rates" && (p.x0(0) <= 0.0 || p.xT(0) <= 0.0)) {
      throw std::invalid_argument("interest-rate endpoints must be positive");
    }
  }
  if (!amortized) {
    for (const EndpointPair& p : pairs) {
      if (p.x0 != pairs.front().x0) {
        throw std::invalid_argument("pairs with different x0 need amortized training");
      }
    }
  }
  if (x0_pool < 0) throw std::invalid_argument("x0_pool must be nonnegative");
  if (training.iterations < 0 || training.paths_per_iter < 1) {
    throw std::invalid_argument("invalid training budget");
  }
  if (evaluation.n_samples < 1 || evaluation.repetitions < 1 || evaluation.chain_iterations < 0 ||
      evaluation.pimh_particles < 0 || evaluation.pimh_iterations < 0 || evaluation.workers < 1) {
    throw std::invalid_argument("invalid evaluation settings");
  }
  if (max_runtime < 0.0) throw std::invalid_argument("max_runtime must be nonnegative");
  (void)build_model();
}

std::string RunConfig::hash() const {
  json j = to_json();
  j.erase("output_dir");
  j.erase("max_runtime");
  j["evaluation"].erase("workers");
  return hex64(fnv1a(j.dump()));
}

TimeGrid RunConfig::grid() const { return TimeGrid::with_step(horizon, dt); }

DiffusionModel RunConfig::build_model() const {
  if (model.name == "ou") return ou_model(OUParams{model.alpha, model.beta, model.dim});
  if (model.name == "interest_rates") return ir_model(IRParams{model.theta});
  if (model.name == "cell") {
    if (!(model.sigma_x_sq > 0.0)) throw std::invalid_argument("sigma_x_sq must be positive");
    return cell_model(CellParams{std::sqrt(model.sigma_x_sq)});
  }
  throw std::invalid_argument("unknown model '" + model.name + "'");
}

std::optional<double> RunConfig::true_log_density(const EndpointPair& pair) const {
  if (model.name == "ou") {
    return ou_log_transition(OUParams{model.alpha, model.beta, model.dim}, horizon, pair.x0, pair.xT);
  }
  if (model.name == "interest_rates") {
    return ir_log_transition(IRParams{model.theta}, 0.0, pair.x0(0), horizon, pair.xT(0));
  }
  return std::nullopt;
}

// ---- run_experiment ---------------------------------------------------------

namespace {

struct Task {
  std::size_t pair;
  std::size_t method;
  int repetition;
};

ResultRow run_task(const RunConfig& c, const std::vector<BridgeProposal>& proposals,
                   const Task& task) {
  const BridgeProposal& p = proposals[task.pair * c.methods.size() + task.method];
  const Rng rep = Rng(c.seed)
                      .split(20)
                      .split(task.pair)
                      .split(static_cast<std::uint64_t>(c.methods[task.method]))
                      .split(static_cast<std::uint64_t>(task.repetition));
  ResultRow row;
  row.pair = task.pair;
  row.method = c.methods[task.method];
  row.repetition = task.repetition;
  const WeightedEnsemble w = importance_weights(
      p, simulate_proposal(p, static_cast<std::size_t>(c.evaluation.n_samples), rep.split(0)));
  row.ess = ess_proportion(w);
  row.log_density = estimate_log_transition(w);
  if (c.evaluation.chain_iterations > 0) {
    row.imh_acceptance =
        imh_chain(p, static_cast<std::size_t>(c.evaluation.chain_iterations), rep.split(1))
            .acceptance_rate;
  }
  if (c.evaluation.pimh_particles > 0 && c.evaluation.pimh_iterations > 0) {
    row.pimh_acceptance = pimh_chain(p, static_cast<std::size_t>(c.evaluation.pimh_particles),
                                     static_cast<std::size_t>(c.evaluation.pimh_iterations),
                                     rep.split(2))
                              .acceptance_rate;
  }
  row.true_log_density = c.true_log_density(c.pairs[task.pair]);
  return row;
}

json report_json(const std::string& role, const TrainReport& r) {
  return {{"role", role},
          {"iterations", r.losses.size()},
          {"final_loss", r.losses.empty() ? json(nullptr) : json(r.losses.back())},
          {"seconds", r.seconds},
          {"params_checksum", hex64(r.params_checksum)}};
}

void persist(const RunConfig& c, const RunResult& result, const json& training_meta) {
  const std::filesystem::path dir(c.output_dir);
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "results.csv", std::ios::binary);
    write_results_csv(out, c, result);
  }
  write_text(dir / "config.resolved.json", c.to_json().dump(2) + "\n");
  const json meta = {{"version", kVersionTag},
                     {"config_hash", result.config_hash},
                     {"seed", result.seed},
                     {"rng", Rng::kAlgorithm},
                     {"wall_clock_seconds", result.wall_clock},
                     {"repetition_scale", result.repetition_scale},
                     {"clamp_events", result.clamp_events},
                     {"valid", result.valid},
                     {"error", result.error},
                     {"training", training_meta}};
  write_text(dir / "run.json", meta.dump(2) + "\n");
}

}  // namespace

RunResult run_experiment(RunConfig c) {
  const auto start = Clock::now();
  c.resolve();
  RunResult result;
  result.config_hash = c.hash();
  result.seed = c.seed;

  const DiffusionModel model = c.build_model();
  const TimeGrid grid = c.grid();
  const std::filesystem::path dir(c.output_dir);
  const bool persisting = !c.output_dir.empty();
  json training_meta = json::array();
  std::vector<Task> pending;
  std::vector<std::optional<ResultRow>> slots;

  auto record_report = [&](const std::string& role, const TrainReport& r) {
    result.training.push_back(r);
    training_meta.push_back(report_json(role, r));
    if (persisting) {
      std::filesystem::create_directories(dir / "training");
      std::ofstream out(dir / "training" / (role + ".csv"), std::ios::binary);
      r.write_csv(out);
    }
  };
  auto save = [&](const ScoreNet& net, const std::string& suffix) {
    if (!persisting) return;
    std::filesystem::create_directories(dir / "nets");
    save_net(net, (dir / "nets" / (result.config_hash + suffix + ".bin")).string());
  };

  try {
    // Training: one backward net per config, one forward net per pair.
    std::optional<ScoreNet> backward_net;
    std::vector<std::optional<ScoreNet>> forward_nets(c.pairs.size());
    if (needs_backward_net(c)) {
      TrainConfig tc = make_train_config(c.training, grid, Rng(c.seed).split(10)());
      if (c.amortized) {
        StateSampler sampler = [d = model.dim](Rng& r) {
          Vector x(d);
          for (int i = 0; i < d; ++i) x(i) = sample_gamma_5_2(r);
          return x;
        };
        tc.x0_source = c.x0_pool > 0 ? X0Source::pooled(sampler, c.x0_pool)
                                     : X0Source::per_path(sampler);
      } else {
        tc.x0_source = X0Source::fixed_state(c.pairs.front().x0);
      }
      try {
        auto [net, report] = train_backward_score(model, tc);
        record_report("backward", report);
        save(net, "");
        backward_net = std::move(net);
      } catch (const TrainingDivergedError& e) {
        record_report("backward", e.report());
        throw;
      }
    }
    auto backward_field = [&](std::size_t pair) {
      return c.amortized ? net_score_field(*backward_net, c.pairs[pair].x0)
                         : net_score_field(*backward_net);
    };
    if (needs_forward_net(c)) {
      const TrainingSpec& spec = c.forward_training ? *c.forward_training : c.training;
      for (std::size_t k = 0; k < c.pairs.size(); ++k) {
        const TrainConfig tc = make_train_config(spec, grid, Rng(c.seed).split(11).split(k)());
        const std::string role = "forward-" + std::to_string(k);
        try {
          auto [net, report] =
              train_forward_score(model, backward_field(k), c.pairs[k].x0, c.pairs[k].xT, tc);
          record_report(role, report);
          save(net, "-" + role);
          forward_nets[k] = std::move(net);
        } catch (const TrainingDivergedError& e) {
          record_report(role, e.report());
          throw;
        }
      }
    }

    std::vector<BridgeProposal> proposals;
    for (std::size_t k = 0; k < c.pairs.size(); ++k) {
      for (ProposalKind kind : c.methods) {
        BridgeProposal p{kind, model, c.pairs[k].x0, c.pairs[k].xT, grid, {}, {}};
        if (backward_net) p.backward_score = backward_field(k);
        if (forward_nets[k]) p.forward_score = net_score_field(*forward_nets[k]);
        p.validate();
        proposals.push_back(std::move(p));
      }
    }

    // Evaluation. Repetition 0 of every (pair, method) runs first and times
    // the rest when a runtime budget is set.
    const std::size_t per_rep = c.pairs.size() * c.methods.size();
    auto task_of = [&](int rep, std::size_t i) {
      return Task{i / c.methods.size(), i % c.methods.size(), rep};
    };
    int reps = c.evaluation.repetitions;
    slots.assign(per_rep * static_cast<std::size_t>(reps), std::nullopt);
    auto slot_of = [&](const Task& t) {
      return (t.pair * c.methods.size() + t.method) * static_cast<std::size_t>(reps) +
             static_cast<std::size_t>(t.repetition);
    };
    const auto eval_start = Clock::now();
    parallel_for(per_rep, c.evaluation.workers, [&](std::size_t i) {
      const Task t = task_of(0, i);
      slots[slot_of(t)] = run_task(c, proposals, t);
    });
    if (c.max_runtime > 0.0 && reps > 1) {
      const double per_repetition = seconds_since(eval_start);
      const double remaining = c.max_runtime - seconds_since(start);
      const double affordable =
          per_repetition > 0.0 ? std::floor(remaining / per_repetition) : reps;
      const int keep = static_cast<int>(std::clamp(1.0 + affordable, 1.0, double(reps)));
      if (keep < reps) {
        std::vector<std::optional<ResultRow>> kept(per_rep * static_cast<std::size_t>(keep));
        for (std::size_t i = 0; i < per_rep; ++i) {
          kept[i * static_cast<std::size_t>(keep)] = slots[i * static_cast<std::size_t>(reps)];
        }
        slots = std::move(kept);
        result.repetition_scale = static_cast<double>(keep) / reps;
        reps = keep;
      }
    }
    for (int rep = 1; rep < reps; ++rep) {
      for (std::size_t i = 0; i < per_rep; ++i) pending.push_back(task_of(rep, i));
    }
    parallel_for(pending.size(), c.evaluation.workers, [&](std::size_t i) {
      slots[slot_of(pending[i])] = run_task(c, proposals, pending[i]);
    });
  } catch (const std::exception& e) {
    result.valid = false;
    result.error = e.what();
  }

  for (auto& s : slots) {
    if (s) result.rows.push_back(std::move(*s));
  }
  result.wall_clock = seconds_since(start);
  if (persisting) persist(c, result, training_meta);
  return result;
}

void write_results_csv(std::ostream& out, const RunConfig& c, const RunResult& result,
                       std::size_t cell, bool header) {
  if (header) {
    out << "cell,config_hash,model,horizon,dim,steps,pair,x0,xT,method,repetition,ess,"
           "imh_acceptance,pimh_acceptance,log_density,true_log_density\n";
  }
  const int steps = c.grid().steps();
  for (const ResultRow& r : result.rows) {
    const EndpointPair& p = c.pairs.at(r.pair);
    out << cell << ',' << result.config_hash << ',' << c.model.name << ','
        << format_double(c.horizon) << ',' << c.model.dim << ',' << steps << ',' << r.pair << ','
        << format_vector(p.x0) << ',' << format_vector(p.xT) << ',' << to_string(r.method) << ','
        << r.repetition << ',' << format_double(r.ess) << ','
        << format_optional(r.imh_acceptance) << ',' << format_optional(r.pimh_acceptance) << ','
        << format_double(r.log_density) << ',' << format_optional(r.true_log_density) << '\n';
  }
}

// ---- sweep ------------------------------------------------------------------

namespace {

json::json_pointer dotted(const std::string& path) {
  std::string p = "/" + path;
  std::replace(p.begin(), p.end(), '.', '/');
  return json::json_pointer(p);
}

}  // namespace

std::vector<RunConfig> expand_sweep(const json& spec) {
  reject_unknown_keys(spec, {"base", "axes", "cell_overrides"}, "sweep");
  const json base = spec.value("base", json::object());
  std::vector<std::pair<std::string, std::vector<json>>> axes;
  if (spec.contains("axes")) {
    for (const auto& [key, values] : spec.at("axes").items()) {
      if (!values.is_array() || values.empty()) {
        throw std::invalid_argument("axis '" + key + "' needs a nonempty list");
      }
      axes.emplace_back(key, values.get<std::vector<json>>());
    }
  }
  std::size_t cells = 1;
  for (const auto& axis : axes) cells *= axis.second.size();

  const std::uint64_t master = base.value("seed", std::uint64_t{0});
  std::vector<RunConfig> out;
  for (std::size_t cell = 0; cell < cells; ++cell) {
    json j = base;
    std::size_t rest = cell;
    // Last axis varies fastest.
    for (std::size_t a = axes.size(); a-- > 0;) {
      const auto& [key, values] = axes[a];
      j[dotted(key)] = values[rest % values.size()];
      rest /= values.size();
    }
    if (spec.contains("cell_overrides")) {
      for (const json& rule : spec.at("cell_overrides")) {
        reject_unknown_keys(rule, {"when", "set"}, "cell override");
        bool match = true;
        const json when = rule.value("when", json::object());
        for (const auto& [key, value] : when.items()) {
          const auto ptr = dotted(key);
          if (!j.contains(ptr) || j.at(ptr) != value) match = false;
        }
        if (!match) continue;
        for (const auto& [key, value] : rule.at("set").items()) j[dotted(key)] = value;
      }
    }
    j["seed"] = Rng(master).split(cell)();
    out.push_back(RunConfig::from_json(j));
  }
  return out;
}

std::vector<SweepCell> sweep(const json& spec, const std::string& output_dir) {
  const std::vector<RunConfig> configs = expand_sweep(spec);
  if (configs.empty()) throw std::invalid_argument("sweep grid is empty");
  const std::filesystem::path dir(output_dir);
  std::filesystem::create_directories(dir);
  std::ofstream results(dir / "results.csv", std::ios::binary);
  std::ofstream cells_csv(dir / "cells.csv", std::ios::binary);
  cells_csv << "cell,config_hash,status,rows,wall_clock_seconds,error\n";

  std::vector<SweepCell> out;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    SweepCell cell{i, configs[i], std::nullopt, {}};
    cell.config.output_dir = (dir / "cells" / std::to_string(i)).string();
    std::string hash;
    try {
      cell.config.resolve();
      hash = cell.config.hash();
      cell.result = run_experiment(cell.config);
      if (!cell.result->valid) cell.error = cell.result->error;
      write_results_csv(results, cell.config, *cell.result, i, i == 0);
    } catch (const std::exception& e) {
      cell.error = e.what();
      if (i == 0) write_results_csv(results, cell.config, RunResult{}, 0, true);
    }
    std::string message = cell.error;
    std::replace(message.begin(), message.end(), ',', ';');
    std::replace(message.begin(), message.end(), '\n', ' ');
    cells_csv << i << ',' << hash << ',' << (cell.error.empty() ? "ok" : "failed") << ','
              << (cell.result ? cell.result->rows.size() : 0) << ','
              << format_double(cell.result ? cell.result->wall_clock : 0.0) << ',' << message
              << '\n';
    out.push_back(std::move(cell));
  }
  return out;
}

// ---- summarize --------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::optional<double> parse_optional(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

}  // namespace

std::vector<SummaryRow> summarize(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("results are empty");
  const std::vector<std::string> header = split_csv_line(line);
  auto column = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    return std::nullopt;
  };
  auto required = [&](const std::string& name) {
    auto c = column(name);
    if (!c) throw std::invalid_argument("results lack column '" + name + "'");
    return *c;
  };
  const auto c_cell = column("cell");
  const auto c_hash = column("config_hash");
  const auto c_pair = column("pair");
  const std::size_t c_method = required("method");
  const std::size_t c_ess = required("ess");
  const std::size_t c_logd = required("log_density");
  const auto c_imh = column("imh_acceptance");
  const auto c_pimh = column("pimh_acceptance");
  const auto c_truth = column("true_log_density");

  struct Group {
    SummaryRow row;
    std::vector<RepetitionRecord> runs;
    std::optional<double> truth;
  };
  std::vector<Group> groups;
  std::map<std::string, std::size_t> index;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> f = split_csv_line(line);
    if (f.size() != header.size()) throw std::invalid_argument("malformed results row: " + line);
    auto get = [&](const std::optional<std::size_t>& c) { return c ? f[*c] : std::string(); };
    const std::string key =
        get(c_cell) + '\x1f' + get(c_hash) + '\x1f' + get(c_pair) + '\x1f' + f[c_method];
    auto [it, inserted] = index.emplace(key, groups.size());
    if (inserted) {
      Group g;
      g.row = {get(c_cell), get(c_hash), get(c_pair), f[c_method], {}};
      g.truth = parse_optional(get(c_truth));
      groups.push_back(std::move(g));
    }
    RepetitionRecord r;
    r.ess = std::stod(f[c_ess]);
    r.log_density = std::stod(f[c_logd]);
    r.imh_acceptance = parse_optional(get(c_imh));
    r.pimh_acceptance = parse_optional(get(c_pimh));
    groups[it->second].runs.push_back(r);
  }
  if (groups.empty()) throw std::invalid_argument("results contain no rows");
  std::vector<SummaryRow> out;
  for (Group& g : groups) {
    g.row.stats = diagnostics(g.runs, g.truth);
    out.push_back(std::move(g.row));
  }
  return out;
}

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << "cell,config_hash,pair,method,repetitions,ess_mean,ess_var,imh_acceptance_mean,"
         "imh_acceptance_var,pimh_acceptance_mean,pimh_acceptance_var,log_density_mean,"
         "log_density_var,log_density_mse\n";
  auto moments = [](const std::optional<MomentSummary>& m) {
    if (!m) return std::string(",");
    return format_double(m->mean) + ',' + format_optional(m->variance);
  };
  for (const SummaryRow& r : rows) {
    const DiagnosticsSummary& s = r.stats;
    out << r.cell << ',' << r.config_hash << ',' << r.pair << ',' << r.method << ','
        << s.repetitions << ',' << moments(s.ess) << ',' << moments(s.imh_acceptance) << ','
        << moments(s.pimh_acceptance) << ',' << moments(s.log_density) << ','
        << format_optional(s.mse) << '\n';
  }
}

std::vector<SummaryRow> summarize_directory(const std::filesystem::path& dir) {
  std::ifstream in(dir / "results.csv", std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + (dir / "results.csv").string());
  std::vector<SummaryRow> rows = summarize(in);
  std::ofstream out(dir / "summary.csv", std::ios::binary);
  write_summary_csv(out, rows);
  return rows;
}

}  // namespace diffbridge

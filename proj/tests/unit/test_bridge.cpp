// Copyright 2026 The diffbridge Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numbers>

#include "diffbridge/bridge.hpp"
#include "diffbridge/models.hpp"
#include "diffbridge/montecarlo.hpp"
#include "helpers.hpp"

using namespace diffbridge;
using testing::brownian;

namespace {

Vector v1(double x) { return Vector::Constant(1, x); }

ScoreField zero_field(int d) {
  return [d](double, const Matrix& s) { return Matrix(Matrix::Zero(s.rows(), d)); };
}

// The forward proposal evaluates both fields at t = 0, where the closed-form
// score is singular but their difference is not.
double off_zero(double t) { return std::max(t, 1e-9); }

ScoreField ou_score_field(const OUParams& p, const Vector& x0) {
  return pointwise_score_field(
      [p, x0](double t, const Vector& x) { return ou_true_score(p, off_zero(t), x, x0); });
}

ScoreField ou_bridge_score_field(const OUParams& p, const Vector& x0, const Vector& xT, double T) {
  return pointwise_score_field([=](double t, const Vector& x) {
    return Vector(ou_true_score(p, off_zero(t), x, x0) + ou_doob_gradient(p, t, x, xT, T));
  });
}

BridgeProposal ou_proposal(ProposalKind kind, const TimeGrid& g, const Vector& x0, const Vector& xT,
                           const OUParams& p = {}) {
  BridgeProposal bp{kind, ou_model(p), x0, xT, g, ou_score_field(p, x0), {}};
  bp.forward_score = ou_bridge_score_field(p, x0, xT, g.horizon());
  return bp;
}

constexpr ProposalKind kAllKinds[] = {ProposalKind::learned_backward, ProposalKind::learned_forward,
                                      ProposalKind::forward_diffusion,
                                      ProposalKind::modified_diffusion_bridge,
                                      ProposalKind::clark_delyon_hu};

}  // namespace

TEST_CASE("proposal kind names round-trip") {
  for (ProposalKind k : kAllKinds) CHECK(parse_proposal_kind(to_string(k)) == k);
  CHECK_THROWS(parse_proposal_kind("guided"));
  CHECK_FALSE(pins_endpoints(ProposalKind::forward_diffusion));
  CHECK(pins_endpoints(ProposalKind::clark_delyon_hu));
}

TEST_CASE("backward_drift examples") {
  SUBCASE("zero drift, zero score") {
    CHECK(backward_drift(zero_field(2), brownian(2), 1.0, 0.3, Vector(Vector::Ones(2))).isZero());
  }
  SUBCASE("OU with the closed-form score") {
    const OUParams p;
    const Vector x0 = v1(1.0);
    const OUMoments mv = ou_mean_var(p, 0.5, x0);
    const double expected = 2.0 * 1.0 + (mv.mean(0) - 1.0) / mv.var;
    CHECK(backward_drift(ou_score_field(p, x0), ou_model(p), 1.0, 0.5, x0)(0) ==
          doctest::Approx(expected).epsilon(1e-13));
  }
  SUBCASE("assembles -f + Sigma s for a diagonal Sigma") {
    const DiffusionModel m = cell_model({std::sqrt(0.3)});
    const ScoreField s = pointwise_score_field([](double t, const Vector& z) { return Vector(t * z + Vector::Ones(2)); });
    const Vector z = Vector::LinSpaced(2, 0.4, 1.9);
    const double T = 2.0, t = 0.7;
    const Vector expected = -cell_drift(z) + 0.3 * ((T - t) * z + Vector::Ones(2));
    CHECK((backward_drift(s, m, T, t, z) - expected).norm() < 1e-14);
  }
}

TEST_CASE("backward bridge simulation") {
  const TimeGrid g(1.0, 10);
  SUBCASE("endpoints are pinned bit-exactly") {
    const Vector x0 = v1(0.123456789), xT = v1(-1.987654321);
    const BridgeProposal bp = ou_proposal(ProposalKind::learned_backward, g, x0, xT);
    const PathEnsemble e = simulate_backward_bridge(bp, 50, Rng(3));
    CHECK(e.direction() == Direction::backward);
    for (std::size_t i = 0; i < 50; ++i) {
      CHECK(e.state(i, 0)(0) == xT(0));
      CHECK(e.state(i, g.steps())(0) == x0(0));
    }
  }
  SUBCASE("degenerate diffusion stays at xT and jumps to x0") {
    BridgeProposal bp{ProposalKind::learned_backward, brownian(1, 0.0), v1(1.0), v1(3.0), g,
                      zero_field(1), {}};
    const PathEnsemble e = simulate_backward_bridge(bp, 2, Rng(1));
    for (int m = 0; m < g.steps(); ++m) CHECK(e.state(1, m)(0) == 3.0);
    CHECK(e.state(1, g.steps())(0) == 1.0);
  }
  SUBCASE("noise variance carries the multiplier") {
    const TimeGrid g4(1.0, 4);
    BridgeProposal bp{ProposalKind::learned_backward, brownian(1, 1.5), v1(0.0), v1(0.0), g4,
                      zero_field(1), {}};
    const std::size_t n = 100000;
    const PathEnsemble e = simulate_backward_bridge(bp, n, Rng(17));
    const int m = 2;
    double s = 0, s2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double inc = e.state(i, m)(0) - e.state(i, m - 1)(0);
      s += inc;
      s2 += inc * inc;
    }
    const double var = s2 / n - (s / n) * (s / n);
    const double expected = g4.dt() * variance_multiplier(g4, m) * 2.25;
    CHECK(variance_multiplier(g4, m) == doctest::Approx(2.0 / 3.0));
    CHECK(std::abs(var - expected) < 3 * expected * std::sqrt(2.0 / n));
  }
  SUBCASE("only learned_backward proposals") {
    CHECK_THROWS(simulate_backward_bridge(ou_proposal(ProposalKind::clark_delyon_hu, g, v1(1), v1(1)), 1, Rng(1)));
  }
}

TEST_CASE("proposal_log_density examples") {
  SUBCASE("two-step grid by hand") {
    const TimeGrid g(1.0, 2);
    const BridgeProposal bp = ou_proposal(ProposalKind::learned_backward, g, v1(0.5), v1(1.5));
    Matrix path(3, 1);
    path << 1.5, 1.1, 0.5;
    const double dt = 0.5;
    const double mean = 1.5 + dt * backward_drift(bp.backward_score, bp.model, 1.0, 0.0, v1(1.5))(0);
    const double var = dt * 0.5;
    const double expected = -0.5 * std::log(2 * std::numbers::pi * var) - 0.5 * (1.1 - mean) * (1.1 - mean) / var;
    CHECK(proposal_log_density(bp, path) == doctest::Approx(expected).epsilon(1e-13));
    CHECK(proposal_log_density(bp, path) == proposal_log_density(bp, path));
  }
  SUBCASE("single transition integrates to one") {
    const TimeGrid g(1.0, 2);
    for (ProposalKind k : kAllKinds) {
      const BridgeProposal bp = ou_proposal(k, g, v1(0.5), v1(1.5));
      const double start = k == ProposalKind::learned_backward ? 1.5 : 0.5;
      const double end = k == ProposalKind::learned_backward ? 0.5 : 1.5;
      auto density = [&](double z) {
        Matrix path(3, 1);
        path << start, z, end;
        return std::exp(proposal_log_density(bp, path));
      };
      CHECK(std::abs(testing::simpson(density, -10.0, 10.0, 4000) - 1.0) < 1e-6);
    }
  }
  SUBCASE("endpoint mismatches are rejected") {
    const TimeGrid g(1.0, 4);
    const BridgeProposal bp = ou_proposal(ProposalKind::modified_diffusion_bridge, g, v1(0.5), v1(1.5));
    Matrix path = Matrix::Constant(5, 1, 1.0);
    CHECK_THROWS(proposal_log_density(bp, path));
  }
}

TEST_CASE("forward_bridge_drift examples") {
  const OUParams p;
  const DiffusionModel m = ou_model(p);
  const Vector x0 = v1(1.0), xT = v1(-0.5);
  const double T = 1.0;
  SUBCASE("equal scores leave the model drift") {
    const ScoreField s = ou_score_field(p, x0);
    for (double x : {-1.0, 0.3, 2.0}) {
      CHECK(forward_bridge_drift(s, s, m, T, 0.4, v1(x))(0) == doctest::Approx(-2.0 * x).epsilon(1e-14));
    }
  }
  SUBCASE("oracles give the Doob drift, and both algebraic forms agree") {
    const ScoreField back = ou_score_field(p, x0);
    const ScoreField fwd = ou_bridge_score_field(p, x0, xT, T);
    Rng rng(2);
    for (int k = 0; k < 10; ++k) {
      const double t = 0.05 + 0.9 * rng.uniform();
      const Vector x = v1(2 * rng.normal());
      const Vector drift = forward_bridge_drift(fwd, back, m, T, t, x);
      const Vector doob = m.drift(t, x) + ou_doob_gradient(p, t, x, xT, T);
      CHECK((drift - doob).norm() < 1e-10 * std::max(1.0, doob.norm()));
      const Vector other = m.drift(t, x) + m.sigma_sq(t, x) * (fwd(t, x.transpose()).row(0).transpose() -
                                                               back(t, x.transpose()).row(0).transpose());
      CHECK((drift - other).norm() < 1e-12 * std::max(1.0, other.norm()));
    }
  }
  SUBCASE("interest-rate oracles give the Doob drift") {
    const IRParams q;
    const DiffusionModel ir = ir_model(q);
    const double a = 1.5, b = 2.5;
    const ScoreField back = pointwise_score_field([&](double t, const Vector& x) { return v1(ir_true_score(q, t, x(0), a)); });
    const ScoreField fwd = pointwise_score_field([&](double t, const Vector& x) {
      return v1(ir_true_score(q, t, x(0), a) + ir_doob_gradient(q, t, x(0), b, T));
    });
    for (double t : {0.2, 0.5, 0.9}) {
      for (double x : {0.8, 2.0}) {
        const double expected = ir.drift(t, v1(x))(0) + ir_doob_gradient(q, t, x, b, T);
        CHECK(std::abs(forward_bridge_drift(fwd, back, ir, T, t, v1(x))(0) - expected) <
              1e-5 * std::max(1.0, std::abs(expected)));
      }
    }
  }
}

TEST_CASE("baseline_drift examples") {
  const DiffusionModel m = ou_model({0.0, 2.0, 2});
  const Vector xT = Vector::LinSpaced(2, 0.5, 1.5);
  CHECK(baseline_drift(ProposalKind::modified_diffusion_bridge, m, 0.3, xT, xT, 1.0).isZero());
  Rng rng(4);
  for (int k = 0; k < 10; ++k) {
    const Vector x = Vector::LinSpaced(2, rng.normal(), rng.normal());
    const double t = 0.9 * rng.uniform();
    const Vector sum = baseline_drift(ProposalKind::forward_diffusion, m, t, x, xT, 1.0) +
                       baseline_drift(ProposalKind::modified_diffusion_bridge, m, t, x, xT, 1.0);
    CHECK((baseline_drift(ProposalKind::clark_delyon_hu, m, t, x, xT, 1.0) - sum).norm() < 1e-14);
  }
  const DiffusionModel ou = ou_model({});
  CHECK(baseline_drift(ProposalKind::clark_delyon_hu, ou, 0.0, v1(1), v1(1), 1.0)(0) == -2.0);
  CHECK_THROWS(baseline_drift(ProposalKind::clark_delyon_hu, ou, 1.0, v1(1), v1(1), 1.0));
}

TEST_CASE("simulate_proposal") {
  const TimeGrid g(1.0, 20);
  const Vector x0 = v1(0.25), xT = v1(1.75);
  SUBCASE("bridge kinds are pinned; densities are finite on own paths") {
    for (ProposalKind k : kAllKinds) {
      const BridgeProposal bp = ou_proposal(k, g, x0, xT);
      const PathEnsemble e = simulate_proposal(bp, 30, Rng(5));
      const std::vector<double> logq = proposal_log_densities(bp, e);
      for (std::size_t i = 0; i < 30; ++i) {
        CHECK(std::isfinite(logq[i]));
        CHECK(logq[i] == doctest::Approx(proposal_log_density(bp, e.path(i))).epsilon(1e-12));
        if (!pins_endpoints(k)) continue;
        const bool back = k == ProposalKind::learned_backward;
        CHECK(e.state(i, 0)(0) == (back ? xT : x0)(0));
        CHECK(e.state(i, g.steps())(0) == (back ? x0 : xT)(0));
      }
    }
  }
  SUBCASE("forward diffusion is plain Euler-Maruyama up to t_{M-1}") {
    const BridgeProposal bp = ou_proposal(ProposalKind::forward_diffusion, g, x0, xT);
    const PathEnsemble e = simulate_proposal(bp, 4, Rng(6));
    const PathEnsemble f = simulate_forward(bp.model, x0, g, 4, Rng(6));
    for (std::size_t i = 0; i < 4; ++i) {
      for (int m = 0; m < g.steps(); ++m) CHECK(std::abs(e.state(i, m)(0) - f.state(i, m)(0)) < 1e-12);
    }
  }
  SUBCASE("fixed seeds are deterministic for every kind") {
    for (ProposalKind k : kAllKinds) {
      const BridgeProposal bp = ou_proposal(k, g, x0, xT);
      const PathEnsemble a = simulate_proposal(bp, 3, Rng(8));
      const PathEnsemble b = simulate_proposal(bp, 3, Rng(8));
      for (std::size_t i = 0; i < 3; ++i) CHECK(a.path(i) == b.path(i));
    }
  }
  SUBCASE("learned kinds need their score fields") {
    BridgeProposal bp = ou_proposal(ProposalKind::learned_forward, g, x0, xT);
    bp.forward_score = {};
    CHECK_THROWS(simulate_proposal(bp, 1, Rng(1)));
  }
}

TEST_CASE("exact score weights concentrate as the step shrinks") {
  const OUParams p;
  const Vector x = v1(1.0);
  auto cv = [&](int steps) {
    const BridgeProposal bp = ou_proposal(ProposalKind::learned_backward, TimeGrid(1.0, steps), x, x);
    const WeightedEnsemble w = importance_weights(bp, simulate_proposal(bp, 4000, Rng(steps)));
    const double shift = *std::max_element(w.log_weights.begin(), w.log_weights.end());
    double s = 0, s2 = 0;
    for (double lw : w.log_weights) {
      const double v = std::exp(lw - shift);
      s += v;
      s2 += v * v;
    }
    const double n = static_cast<double>(w.log_weights.size());
    const double mean = s / n;
    return std::sqrt(s2 / n - mean * mean) / mean;
  };
  CHECK(cv(100) < cv(25));
}

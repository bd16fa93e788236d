// Copyright 2026 The diffbridge Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "diffbridge/models.hpp"
#include "diffbridge/special.hpp"
#include "helpers.hpp"

using namespace diffbridge;

namespace {

Vector v1(double x) { return Vector::Constant(1, x); }

}  // namespace

TEST_CASE("ou_mean_var examples") {
  const OUParams p{0.0, 2.0, 1};
  const OUMoments far = ou_mean_var(p, 50.0, v1(3.0));
  CHECK(std::abs(far.mean(0)) < 1e-10);
  CHECK(std::abs(far.var - 0.25) < 1e-10);

  const OUMoments one = ou_mean_var(p, 1.0, v1(1.0));
  CHECK(one.mean(0) == doctest::Approx(std::exp(-2.0)).epsilon(1e-14));
  CHECK(one.var == doctest::Approx(0.245421).epsilon(1e-6));

  const OUParams shifted{1.0, 2.0, 2};
  for (double dt : {0.1, 1.0, 7.0}) {
    CHECK((ou_mean_var(shifted, dt, Vector::Constant(2, 0.5)).mean.array() - 0.5).abs().maxCoeff() <
          1e-15);
  }
  CHECK_THROWS(ou_mean_var(p, 0.0, v1(1.0)));
  CHECK_THROWS(OUParams{0.0, -1.0, 1}.validate());
}

TEST_CASE("ou_true_score examples") {
  const OUParams p{0.0, 2.0, 1};
  const Vector x0 = v1(1.0);
  CHECK(ou_true_score(p, 0.4, ou_mean_var(p, 0.4, x0).mean, x0).norm() < 1e-14);
  CHECK(ou_true_score(p, 1.0, v1(0.0), x0)(0) == doctest::Approx(0.55144).epsilon(1e-5));
  CHECK_THROWS(ou_true_score(p, 0.0, x0, x0));

  const OUParams q{0.4, 1.3, 3};
  const Vector y0 = Vector::LinSpaced(3, -1, 2);
  const Vector x = Vector::LinSpaced(3, 0.5, -0.5);
  auto logp = [&](const Vector& y) { return ou_log_transition(q, 0.7, y0, y); };
  CHECK(testing::rel_error(ou_true_score(q, 0.7, x, y0), testing::fd_gradient(logp, x, 1e-5)) < 1e-8);
}

TEST_CASE("ou_doob_gradient examples") {
  const OUParams p{0.0, 2.0, 1};
  const double T = 2.0;
  const Vector x = v1(0.3);
  CHECK(ou_doob_gradient(p, 1.2, x, ou_mean_var(p, T - 1.2, x).mean, T).norm() < 1e-14);
  CHECK(ou_doob_gradient(p, 0.0, v1(0.0), v1(1.0), 1.0)(0) == doctest::Approx(0.55144).epsilon(1e-5));
  CHECK_THROWS(ou_doob_gradient(p, T, x, x, T));

  // Score of the bridge marginal p(t, x | 0, x0) p(T, xT | t, x).
  const OUParams q{0.4, 1.3, 2};
  const Vector x0 = Vector::LinSpaced(2, 1, 2);
  const Vector xT = Vector::LinSpaced(2, -1, 0.5);
  const double t = 0.6, horizon = 1.5;
  const Vector probe = Vector::LinSpaced(2, 0.2, 0.9);
  auto log_product = [&](const Vector& y) {
    return ou_log_transition(q, t, x0, y) + ou_log_transition(q, horizon - t, y, xT);
  };
  const Vector s_star = ou_true_score(q, t, probe, x0) + ou_doob_gradient(q, t, probe, xT, horizon);
  CHECK(testing::rel_error(s_star, testing::fd_gradient(log_product, probe, 1e-5)) < 1e-6);
}

TEST_CASE("Bessel half-integer identity") {
  for (double x : {0.5, 2.0, 10.0, 29.9, 30.1, 45.0}) {
    const double expected = std::sqrt(2.0 / (std::numbers::pi * x)) * std::sinh(x);
    CHECK(std::abs(bessel_i(0.5, x) / expected - 1.0) < 1e-10);
  }
  // I_{3/2}(x) = sqrt(2 / (pi x)) (cosh x - sinh x / x).
  for (double x : {0.5, 2.0, 10.0, 40.0}) {
    const double expected =
        std::sqrt(2.0 / (std::numbers::pi * x)) * (std::cosh(x) - std::sinh(x) / x);
    CHECK(std::abs(bessel_i(1.5, x) / expected - 1.0) < 1e-10);
  }
}

TEST_CASE("Bessel values are positive and derivatives match finite differences") {
  for (double nu : {0.0, 0.5, 1.0, 3.5, 10.0}) {
    for (double x : {0.05, 0.7, 3.0, 15.0, 29.0, 31.0, 50.0}) {
      CHECK(bessel_i(nu, x) > 0.0);
      const double h = 1e-5 * x;
      const double fd = (bessel_i(nu, x + h) - bessel_i(nu, x - h)) / (2 * h);
      CHECK(std::abs(bessel_i_dx(nu, x) / fd - 1.0) < 1e-7);
      CHECK(bessel_i_log_derivative(nu, x) ==
            doctest::Approx(bessel_i_dx(nu, x) / bessel_i(nu, x)).epsilon(1e-12));
      CHECK(log_bessel_i(nu, x) == doctest::Approx(std::log(bessel_i(nu, x))).epsilon(1e-12));
    }
  }
  CHECK(std::isfinite(log_bessel_i(3.5, 2000.0)));
  CHECK_THROWS(bessel_i(1.0, 0.0));
  CHECK_THROWS(bessel_i(-1.0, 1.0));
}

TEST_CASE("interest-rate transition density") {
  const IRParams p{4.0};
  SUBCASE("integrates to one") {
    auto density = [&](double y) { return y > 0.0 ? std::exp(ir_log_transition(p, 0.0, 1.5, 0.5, y)) : 0.0; };
    CHECK(std::abs(testing::simpson(density, 1e-9, 12.0, 20000) - 1.0) < 1e-6);
  }
  SUBCASE("finite on the quadrature grid") {
    for (double y = 1e-3; y <= 12.0; y += 0.01) {
      CHECK(std::isfinite(ir_log_transition(p, 0.0, 1.5, 0.5, y)));
    }
  }
  SUBCASE("time-homogeneous") {
    CHECK(ir_log_transition(p, 0.3, 1.5, 0.8, 2.0) ==
          doctest::Approx(ir_log_transition(p, 0.0, 1.5, 0.5, 2.0)).epsilon(1e-12));
  }
  CHECK_THROWS(ir_log_transition(p, 0.0, -1.0, 0.5, 1.0));
  CHECK_THROWS(ir_log_transition(p, 0.5, 1.0, 0.5, 1.0));
  CHECK_THROWS(IRParams{0.4}.validate());
}

TEST_CASE("interest-rate density matches a fine Euler-Maruyama histogram") {
  const double theta = 4.0, x_s = 1.5, dt = 1e-3;
  const int steps = 1000;
  const std::size_t n = 1000000;
  std::vector<double> samples(n);
  Rng root(2024);
  for (std::size_t i = 0; i < n; ++i) {
    Rng r = root.split(i);
    double x = x_s;
    const double sq = std::sqrt(dt);
    for (int m = 0; m < steps; ++m) {
      x += (theta / x - x) * dt + sq * r.normal();
      x = std::max(x, 1e-8);
    }
    samples[i] = x;
  }
  std::sort(samples.begin(), samples.end());
  // CDF by cumulative trapezoid on a fine grid.
  const IRParams p{theta};
  const double h = 1e-3;
  double cdf = 0.0, prev = 0.0, ks = 0.0;
  std::size_t idx = 0;
  for (double y = h; y <= 12.0; y += h) {
    const double f = std::exp(ir_log_transition(p, 0.0, x_s, 1.0, y));
    cdf += 0.5 * (prev + f) * h;
    prev = f;
    while (idx < n && samples[idx] <= y) ++idx;
    ks = std::max(ks, std::abs(static_cast<double>(idx) / n - cdf));
  }
  CHECK(ks < 0.01);
}

TEST_CASE("interest-rate scores") {
  const IRParams p{4.0};
  SUBCASE("true score is the gradient of the log density") {
    for (double x : {1.0, 2.0, 3.0}) {
      const double h = 1e-5;
      const double fd = (ir_log_transition(p, 0.0, 1.5, 1.0, x + h) -
                         ir_log_transition(p, 0.0, 1.5, 1.0, x - h)) / (2 * h);
      CHECK(std::abs(ir_true_score(p, 1.0, x, 1.5) / fd - 1.0) < 1e-6);
    }
  }
  SUBCASE("Doob gradient pushes toward xT near the horizon") {
    const double T = 1.0, t = T - 0.05, xT = 2.0;
    CHECK(ir_doob_gradient(p, t, 1.0, xT, T) > 0.0);
    CHECK(ir_doob_gradient(p, t, 3.0, xT, T) < 0.0);
  }
  SUBCASE("bridge marginal score is the sum of both terms") {
    const double x0 = 1.2, xT = 2.5, T = 1.0;
    for (double t : {0.2, 0.5, 0.8}) {
      for (double x : {0.8, 1.7, 2.6}) {
        auto lp = [&](double y) {
          return ir_log_transition(p, 0.0, x0, t, y) + ir_log_transition(p, t, y, T, xT);
        };
        const double h = 1e-5;
        const double fd = (lp(x + h) - lp(x - h)) / (2 * h);
        const double s_star = ir_true_score(p, t, x, x0) + ir_doob_gradient(p, t, x, xT, T);
        CHECK(std::abs(s_star - fd) < 1e-5 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST_CASE("cell drift examples") {
  const Vector ones = Vector::Ones(2);
  const Vector f = cell_drift(ones);
  CHECK(f(0) == 0.0);
  CHECK(f(1) == 0.0);
  CHECK(cell_drift(Vector::Zero(2)) == Vector::Ones(2));
  Rng rng(1);
  for (int i = 0; i < 10; ++i) {
    Vector x(2);
    x << 3 * rng.uniform(), 3 * rng.uniform();
    const Vector swapped = x.reverse();
    CHECK(cell_drift(swapped) == cell_drift(x).reverse());
    // Jacobian against finite differences.
    const Matrix j = cell_drift_jacobian(x);
    for (int k = 0; k < 2; ++k) {
      auto fk = [&](const Vector& y) { return cell_drift(y)(k); };
      CHECK(testing::rel_error(j.row(k).transpose(), testing::fd_gradient(fk, x, 1e-6)) < 1e-6);
    }
  }
}

TEST_CASE("cell fixed points") {
  const std::vector<Vector> roots = find_cell_fixed_points();
  REQUIRE(!roots.empty());
  bool has_center = false, has_target = false;
  for (const Vector& r : roots) {
    CHECK(cell_drift(r).norm() < 1e-10);
    if ((r - Vector::Ones(2)).norm() < 1e-9) has_center = true;
    if (r(0) < r(1) - 1e-6) {
      has_target = true;
      const Vector mirror = r.reverse();
      CHECK(std::any_of(roots.begin(), roots.end(),
                        [&](const Vector& q) { return (q - mirror).norm() < 1e-8; }));
    }
  }
  CHECK(has_center);
  CHECK(has_target);
}

TEST_CASE("cell model diffusion") {
  const DiffusionModel m = cell_model({std::sqrt(0.1)});
  const Vector x = Vector::Ones(2);
  CHECK((m.sigma_sq(0.0, x) - 0.1 * Matrix::Identity(2, 2)).norm() < 1e-15);
  CHECK_THROWS(CellParams{0.0}.validate());
}

TEST_CASE("Gamma(5, 2) sampler moments") {
  Rng rng(77);
  const int n = 1000000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double g = sample_gamma_5_2(rng);
    REQUIRE(g > 0.0);
    s += g;
    s2 += g * g;
  }
  const double mean = s / n;
  const double var = s2 / n - mean * mean;
  // Var of the sample mean is 1.25 / n; var of the sample variance uses the
  // fourth central moment 3 k (k + 2) / rate^4 for shape k.
  CHECK(std::abs(mean - 2.5) < 3 * std::sqrt(1.25 / n));
  const double mu4 = 3.0 * 5.0 * 7.0 / 16.0;
  CHECK(std::abs(var - 1.25) < 3 * std::sqrt((mu4 - 1.25 * 1.25) / n));
}

// Copyright 2026 The diffbridge Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <set>

#include "diffbridge/rng.hpp"

using diffbridge::Rng;

TEST_CASE("same seed gives the same stream") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a() == b());
}

TEST_CASE("split streams differ from each other and from the parent") {
  const Rng root(7);
  std::set<std::uint64_t> firsts;
  for (std::uint64_t id = 0; id < 1000; ++id) firsts.insert(root.split(id)());
  CHECK(firsts.size() == 1000);
  Rng parent = root;
  CHECK(parent() != root.split(0)());
}

TEST_CASE("splitting does not advance the parent") {
  Rng a(3);
  (void)a.split(5);
  Rng b(3);
  CHECK(a() == b());
}

TEST_CASE("uniform and normal moments") {
  Rng rng(11);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    su += u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(std::abs(sn / n) < 4.0 / std::sqrt(n));
  CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("exponential draws are positive with mean 1/rate") {
  Rng rng(5);
  double s = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double e = rng.exponential(2.0);
    REQUIRE(e >= 0.0);
    s += e;
  }
  CHECK(s / n == doctest::Approx(0.5).epsilon(0.02));
}

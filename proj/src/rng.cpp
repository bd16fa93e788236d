// Copyright 2026 The diffbridge Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffbridge/rng.hpp"

#include <cmath>

namespace diffbridge {

namespace {
constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += kGolden;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed) : key_(splitmix64(seed ^ 0x6a09e667f3bcc909ULL)) {}

Rng::result_type Rng::operator()() {
  ++counter_;
  return splitmix64(key_ + counter_ * kGolden);
}

Rng Rng::split(std::uint64_t id) const {
  return Rng(splitmix64(key_ ^ splitmix64(id + 0x3c6ef372fe94f82bULL)), true);
}

double Rng::uniform() {
  return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
}

double Rng::normal() { return normal_(*this); }

double Rng::exponential(double rate) {
  // 1 - U lies in (0, 1], so the log is finite.
  return -std::log1p(-uniform()) / rate;
}

}  // namespace diffbridge
